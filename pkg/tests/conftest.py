from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gaze2seg.harness import Case, PhantomParams, make_phantom, make_phantom_suite


@pytest.fixture(scope="session")
def phantom_suite():
    """The 10-case 128^3 ellipsoid suite used across strategy experiments."""
    return make_phantom_suite(n_cases=10, dims=(128, 128, 128), seed=7)


@pytest.fixture(scope="session")
def small_case():
    """One quick 64x64x40 case for service and unit-level pipeline tests."""
    volume, gt = make_phantom(
        PhantomParams(dims=(64, 64, 40), radii=(14.0, 14.0, 15.0)), seed=3
    )
    return Case(id="small-0", organ="phantom", volume=volume, gt=gt)
