"""End-to-end acceptance checks.

Each test prints one ACCEPTANCE line so the suite doubles as a checklist:
run `pytest tests/test_acceptance.py -v -s`.
"""

from __future__ import annotations

import struct
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gaze2seg.gaze import synthesize_gaze
from gaze2seg.harness import (
    GridSpec,
    GtBBoxSource,
    SyntheticGazeSource,
    build_prompt_plan,
    dice,
    run_grid,
)
from gaze2seg.interp import chamfer_distance_int, chamfer_sdt, interpolate_masks
from gaze2seg.promptgen import Strategy, select_slices
from gaze2seg.service import create_app
from gaze2seg.volume_io import (
    BadMagicError,
    MaskVolume,
    UnsupportedCompressedError,
    UnsupportedDatatypeError,
    UnsupportedDimsError,
    load_mvol,
    load_nifti,
    mvol_bytes,
)
from oracles import (
    dijkstra_chamfer_int,
    disk_mask,
    euclidean_opposite_distance,
    random_two_class_mask,
)
from test_volume_io import build_nifti, random_volume

GRID_SEED = 11
REGION_GROW = {"kind": "region_grow"}


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}{' — ' + detail if detail else ''}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def strategy_records(phantom_suite):
    """region_grow x gt_bbox over {first_slice, budget_30, all_slices}."""
    return run_grid(
        GridSpec(
            cases=phantom_suite,
            strategies=[Strategy.parse(s) for s in ("first_slice", "budget_30", "all_slices")],
            sources=[GtBBoxSource()],
            backends=[REGION_GROW],
            seed=GRID_SEED,
        )
    )


@pytest.fixture(scope="module")
def gaze_records(phantom_suite):
    """region_grow x synthetic_gaze at budget_30 (same seed as the bbox grid)."""
    return run_grid(
        GridSpec(
            cases=phantom_suite,
            strategies=[Strategy.parse("budget_30")],
            sources=[SyntheticGazeSource()],
            backends=[REGION_GROW],
            seed=GRID_SEED,
        )
    )


def by_strategy(records, strategy):
    return [r for r in records if r.strategy == strategy and not r.error]


def mean(xs):
    return float(np.mean(xs))


def test_oracle_saturation(phantom_suite):
    t0 = time.perf_counter()
    records = run_grid(
        GridSpec(
            cases=phantom_suite,
            strategies=[Strategy.parse("all_slices")],
            sources=[GtBBoxSource()],
            backends=[{"kind": "gt_oracle"}],
            seed=GRID_SEED,
        )
    )
    elapsed = time.perf_counter() - t0
    scores = [r.dice for r in records]
    report(
        "oracle-saturation",
        len(records) == 10 and all(s == 1.0 for s in scores) and elapsed < 60.0,
        f"dice={sorted(set(scores))}, {elapsed:.1f}s over {len(records)} cases",
    )


def test_strategy_ordering(strategy_records):
    first = by_strategy(strategy_records, "first_slice")
    b30 = by_strategy(strategy_records, "budget_30")
    alls = by_strategy(strategy_records, "all_slices")
    assert len(first) == len(b30) == len(alls) == 10

    d_first, d_b30, d_all = (mean([r.dice for r in rs]) for rs in (first, b30, alls))
    t_b30, t_all = (mean([r.segment_ms for r in rs]) for rs in (b30, alls))
    report(
        "strategy-ordering",
        d_first < d_b30 and abs(d_b30 - d_all) <= 0.02 and t_b30 < t_all,
        f"dice first={d_first:.3f} < budget_30={d_b30:.3f}, |Δ all|={abs(d_b30 - d_all):.4f}, "
        f"segment_ms {t_b30:.0f} < {t_all:.0f}",
    )


def test_prompt_modality_gap(strategy_records, gaze_records, phantom_suite):
    d_bbox = mean([r.dice for r in by_strategy(strategy_records, "budget_30")])
    assert len(gaze_records) == 10 and not any(r.error for r in gaze_records)
    d_gaze = mean([r.dice for r in gaze_records])

    # every strategy-selected slice receives >= 20 samples and must yield a box
    coverage_ok = True
    for ci, case in enumerate(phantom_suite):
        plan = build_prompt_plan(
            case, SyntheticGazeSource(), Strategy.parse("budget_30"), seed=GRID_SEED ^ ci
        )
        expected = select_slices(case.gt.foreground_extent_z(), Strategy.parse("budget_30"))
        gazed = [z for z in expected if case.gt.slice(z).any()]
        coverage_ok &= set(gazed) <= set(plan.prompted_slices)

    report(
        "prompt-modality-gap",
        d_gaze <= d_bbox and (d_bbox - d_gaze) <= 0.15 and coverage_ok,
        f"gaze={d_gaze:.3f} <= bbox={d_bbox:.3f}, gap={d_bbox - d_gaze:.4f}, "
        f"boxes on all gazed slices={coverage_ok}",
    )


def test_chamfer_distance_transform():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_rel = 0.0
    for _ in range(50):
        mask = random_two_class_mask(rng, (64, 64))
        for seeds in (mask, ~mask):
            if not np.array_equal(chamfer_distance_int(seeds), dijkstra_chamfer_int(seeds)):
                report("chamfer-dt", False, "two-pass result diverged from Dijkstra")
        approx = np.abs(chamfer_sdt(mask).values)
        exact = euclidean_opposite_distance(mask)
        sel = exact >= 1.0
        worst_rel = max(worst_rel, float((np.abs(approx[sel] - exact[sel]) / exact[sel]).max()))
    elapsed = time.perf_counter() - t0
    report(
        "chamfer-dt",
        worst_rel <= 0.09 and elapsed < 10.0,
        f"50 masks exact vs Dijkstra, max rel err {worst_rel:.4f} <= 0.09, {elapsed:.1f}s",
    )


def test_interpolation():
    a = disk_mask((64, 64), 31.5, 31.5, 10)
    b = disk_mask((64, 64), 31.5, 31.5, 20)
    mid_area = int(interpolate_masks(a, b, 0.5).sum())
    radius_ok = np.pi * 13.5**2 <= mid_area <= np.pi * 16.5**2

    endpoints_ok = np.array_equal(interpolate_masks(a, b, 0.0), a) and np.array_equal(
        interpolate_masks(a, b, 1.0), b
    )

    from scipy.ndimage import binary_erosion

    rng = np.random.default_rng(99)
    monotone_ok = True
    pairs = 0
    while pairs < 20:
        big = random_two_class_mask(rng, (48, 48))
        small = binary_erosion(big, iterations=2)
        if not small.any():
            continue
        pairs += 1
        prev = None
        for t in np.linspace(0, 1, 6):
            cur = interpolate_masks(small, big, float(t)).astype(bool)
            if prev is not None and not np.all(prev <= cur):
                monotone_ok = False
            prev = cur

    report(
        "interpolation",
        radius_ok and endpoints_ok and monotone_ok,
        f"midpoint radius {np.sqrt(mid_area / np.pi):.2f} in [13.5, 16.5], "
        f"endpoints exact={endpoints_ok}, monotone on {pairs} nested pairs={monotone_ok}",
    )


def test_synthetic_gaze_split():
    gt = disk_mask((128, 128), 64, 64, 22)
    band_px = 30.0
    dist3 = chamfer_distance_int(gt.astype(bool))
    ok = True
    for seed in range(100):
        st = synthesize_gaze(gt, n_points=100, inside_ratio=0.8, band_px=band_px, seed=seed)
        inside = outside_in_band = 0
        for s in st.samples:
            y, x = int(s.y_px), int(s.x_px)
            if gt[y, x]:
                inside += 1
            elif 0 < dist3[y, x] <= 3 * band_px:
                outside_in_band += 1
        ok &= inside == 80 and outside_in_band == 20
    report("synthetic-gaze", ok, "100 seeds, exact 80/20 split, all outside samples in band")


def test_formats():
    rng = np.random.default_rng(1)
    dtypes = [np.uint8, np.int16, np.float32]
    for i in range(200):
        v = random_volume(rng, dtypes[i % 3])
        loaded = load_mvol(mvol_bytes(v))
        assert np.array_equal(loaded.voxels, v.voxels) and loaded.voxels.dtype == v.voxels.dtype
        assert loaded.spacing_mm == v.spacing_mm

    arr = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    normal = load_nifti(build_nifti(arr, spacing=(0.5, 0.5, 2.0)))
    swapped = load_nifti(build_nifti(arr, byte_order=">", spacing=(0.5, 0.5, 2.0)))
    assert np.array_equal(normal.voxels, arr) and np.array_equal(swapped.voxels, arr)

    with pytest.raises(UnsupportedCompressedError):
        load_nifti(b"\x1f\x8b" + bytes(400))
    with pytest.raises(UnsupportedDatatypeError):
        load_nifti(build_nifti(arr, datatype=64))
    blob = bytearray(build_nifti(np.zeros((2, 2, 2), dtype=np.uint8)))
    struct.pack_into("<8h", blob, 40, 4, 2, 2, 2, 2, 1, 1, 1)
    with pytest.raises(UnsupportedDimsError):
        load_nifti(bytes(blob))
    with pytest.raises(BadMagicError):
        load_nifti(build_nifti(arr, magic=b"ni1\x00"))

    report("formats", True, "200 mvol round-trips bit-exact; NIfTI fixtures behave as specified")


def test_dice_identities():
    m = disk_mask((32, 32), 16, 16, 8)
    d_same = dice(m, m)
    a = np.zeros((20, 20), dtype=np.uint8)
    b = np.zeros((20, 20), dtype=np.uint8)
    a.ravel()[:100] = 1
    b.ravel()[100:200] = 1
    d_disjoint = dice(a, b)
    c = np.zeros((20, 20), dtype=np.uint8)
    c.ravel()[50:150] = 1
    d_half = dice(a, c)
    z = np.zeros((8, 8), dtype=np.uint8)
    d_empty = dice(z, z)
    report(
        "dice-identities",
        d_same == 1.0 and d_disjoint == 0.0 and d_half == 0.5 and d_empty == 1.0,
        f"identity={d_same}, disjoint={d_disjoint}, half={d_half}, both-empty={d_empty}",
    )


def test_service_lifecycle(small_case):
    with TestClient(create_app()) as client:
        create = client.post(
            "/sessions?sigma_px=6",
            content=mvol_bytes(small_case.volume),
            headers={"content-type": "application/octet-stream"},
        )
        assert create.status_code == 201
        sid = create.json()["id"]

        ys, xs = np.nonzero(small_case.gt.slice(20))
        cx, cy = float(xs.mean()), float(ys.mean())
        before = client.get(f"/sessions/{sid}/overlay/20/heatmap")
        samples = [
            {"t_ms": i * 1000.0 / 90.0, "sx": cx, "sy": cy, "slice": 20} for i in range(90)
        ]
        posted = client.post(f"/sessions/{sid}/gaze", json={"samples": samples})
        assert posted.json()["accepted"] == 90
        after = client.get(f"/sessions/{sid}/overlay/20/heatmap")
        etag_changed = after.headers["etag"] != before.headers["etag"]

        seg = client.post(f"/sessions/{sid}/segment", json={"strategy": "all_slices"})
        assert seg.status_code == 200

        download = client.get(f"/sessions/{sid}/masklet")
        masklet = load_mvol(download.content)
        parses = isinstance(masklet, MaskVolume) and masklet.dims == small_case.volume.dims

        fail = client.post(
            f"/sessions/{sid}/segment",
            json={"backend": {"kind": "external", "url": "http://127.0.0.1:1",
                              "retries": 0, "timeout_s": 0.2}},
        )
        intact = (
            fail.status_code == 502
            and client.get(f"/sessions/{sid}/masklet").content == download.content
        )
        report(
            "service-lifecycle",
            etag_changed and parses and intact,
            f"etag changed={etag_changed}, masklet parses={parses}, "
            f"failed segment left masklet intact={intact}",
        )
