"""Shape-based interpolation between binary slice masks.

A signed distance map is built for each mask with a two-pass 3x3 chamfer
transform (axial weight 3, diagonal weight 4, final values divided by 3 to
approximate Euclidean pixel distance). Intermediate slices come from linearly
blending the two maps along z and rebinarizing at the zero crossing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

_INF = np.int64(1) << 40


class AllSameClassError(Exception):
    """Mask is all-foreground or all-background; no opposite class to measure against."""


class DimensionMismatchError(Exception):
    pass


class NoPromptedSlicesError(Exception):
    pass


@dataclass(frozen=True)
class SignedDistanceMap:
    width: int
    height: int
    values: np.ndarray  # (height, width) float, + inside / - outside, pixel units


def _chamfer_passes(dist: np.ndarray) -> np.ndarray:
    """Forward + backward raster pass with weights 3 (axial) and 4 (diagonal), in place.

    Row propagation is exact: within a pass, horizontal spread at cost 3/step is
    the running minimum of (row - 3x), restored by adding 3x back.
    """
    h, w = dist.shape
    col3 = 3 * np.arange(w, dtype=np.int64)

    def _scan_lr(row: np.ndarray) -> np.ndarray:
        return np.minimum.accumulate(row - col3) + col3

    def _scan_rl(row: np.ndarray) -> np.ndarray:
        t = row + col3
        return np.minimum.accumulate(t[::-1])[::-1] - col3

    dist[0] = _scan_lr(dist[0])
    for y in range(1, h):
        c = np.minimum(dist[y], dist[y - 1] + 3)
        c[1:] = np.minimum(c[1:], dist[y - 1][:-1] + 4)
        c[:-1] = np.minimum(c[:-1], dist[y - 1][1:] + 4)
        dist[y] = _scan_lr(c)

    dist[h - 1] = _scan_rl(dist[h - 1])
    for y in range(h - 2, -1, -1):
        c = np.minimum(dist[y], dist[y + 1] + 3)
        c[1:] = np.minimum(c[1:], dist[y + 1][:-1] + 4)
        c[:-1] = np.minimum(c[:-1], dist[y + 1][1:] + 4)
        dist[y] = _scan_rl(c)
    return dist


def chamfer_distance_int(seeds: np.ndarray) -> np.ndarray:
    """Integer chamfer distance (weights 3/4, NOT divided by 3) to the seed set."""
    seeds = np.asarray(seeds, dtype=bool)
    if not seeds.any():
        raise AllSameClassError("seed set is empty")
    dist = np.where(seeds, np.int64(0), _INF)
    return _chamfer_passes(dist)


def chamfer_sdt(mask: np.ndarray) -> SignedDistanceMap:
    """Signed chamfer distance map: +d on foreground, -d on background.

    d is the 3/4-weighted distance to the nearest opposite-class pixel divided
    by 3, so pixels adjacent to the boundary carry magnitude 1.0 (axial) or 4/3
    (diagonal). Raises AllSameClassError for single-class masks.
    """
    fg = np.asarray(mask, dtype=bool)
    if fg.all() or not fg.any():
        raise AllSameClassError("mask has a single class; signed distance undefined")
    d_to_bg = chamfer_distance_int(~fg)
    d_to_fg = chamfer_distance_int(fg)
    values = np.where(fg, d_to_bg, -d_to_fg).astype(np.float64) / 3.0
    h, w = fg.shape
    return SignedDistanceMap(width=w, height=h, values=values)


def _sdt_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pseudo-SDT pair handling single-class slices.

    A non-degenerate slice keeps its true signed map. An all-empty partner is
    replaced by the other map shifted down past its maximum so the structure
    shrinks onto its medial maximum as t approaches the empty side; an all-full
    partner is shifted up past the minimum so the structure grows to fill.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    a_kind = "full" if a.all() else ("empty" if not a.any() else "normal")
    b_kind = "full" if b.all() else ("empty" if not b.any() else "normal")

    if a_kind == "normal" and b_kind == "normal":
        return chamfer_sdt(a).values, chamfer_sdt(b).values
    if a_kind == "normal":
        sa = chamfer_sdt(a).values
        if b_kind == "empty":
            return sa, sa - (sa.max() + 1.0)
        return sa, sa + (1.0 - sa.min())
    if b_kind == "normal":
        sb = chamfer_sdt(b).values
        if a_kind == "empty":
            return sb - (sb.max() + 1.0), sb
        return sb + (1.0 - sb.min()), sb
    # Both degenerate: constant plateaus (+/-1) reproduce the endpoints and
    # switch at t = 0.5 for the pathological empty<->full pair.
    plate = {"empty": -1.0, "full": 1.0}
    ones = np.ones(a.shape, dtype=np.float64)
    return plate[a_kind] * ones, plate[b_kind] * ones


def interpolate_masks(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Blend the signed maps of a and b at fraction t and rebinarize at zero.

    Ties at exactly 0 count as foreground. t=0 returns a exactly, t=1 returns b.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    sa, sb = _sdt_pair(a, b)
    return (((1.0 - t) * sa + t * sb) >= 0.0).astype(np.uint8)


TAG_SEGMENTED = "segmented"
TAG_INTERPOLATED = "interpolated"
TAG_EMPTY = "empty"


@dataclass
class Masklet:
    """Per-slice masks covering z_range, each tagged segmented/interpolated/empty.

    ``provenance`` holds the prompt plan that produced the segmented slices,
    when the caller has one."""

    z_range: Tuple[int, int]
    masks: Dict[int, np.ndarray]
    tags: Dict[int, str]
    prompted_slices: Tuple[int, ...] = ()
    timings_ms: Dict[str, float] = field(default_factory=dict)
    provenance: object = None

    def to_array(self) -> np.ndarray:
        """(nz, ny, nx) uint8 stack over z_range."""
        z0, z1 = self.z_range
        return np.stack([self.masks[z] for z in range(z0, z1 + 1)]).astype(np.uint8)

    def tag_counts(self) -> Dict[str, int]:
        counts = {TAG_SEGMENTED: 0, TAG_INTERPOLATED: 0, TAG_EMPTY: 0}
        for tag in self.tags.values():
            counts[tag] += 1
        return counts


def fill_masklet(
    segmented: Mapping[int, np.ndarray], z_range: Tuple[int, int]
) -> Masklet:
    """Expand per-slice segmentations into a full masklet over z_range.

    Prompted slices keep their masks verbatim; slices strictly between two
    consecutive prompted slices are interpolated at t = (z - z_i)/(z_j - z_i);
    slices outside the prompted span are empty.
    """
    z0, z1 = z_range
    if z0 > z1:
        raise ValueError(f"bad z_range {z_range}")
    prompted = sorted(int(z) for z in segmented)
    if not prompted:
        raise NoPromptedSlicesError("need at least one segmented slice")
    if prompted[0] < z0 or prompted[-1] > z1:
        raise ValueError(f"segmented slices {prompted} fall outside z_range {z_range}")

    shape = np.asarray(segmented[prompted[0]]).shape
    masks: Dict[int, np.ndarray] = {}
    tags: Dict[int, str] = {}

    for z in prompted:
        m = np.asarray(segmented[z], dtype=np.uint8)
        if m.shape != shape:
            raise DimensionMismatchError(f"slice {z} shape {m.shape} != {shape}")
        masks[z] = m
        tags[z] = TAG_SEGMENTED

    for lo, hi in zip(prompted, prompted[1:]):
        if hi - lo < 2:
            continue
        sa, sb = _sdt_pair(masks[lo], masks[hi])
        for z in range(lo + 1, hi):
            t = (z - lo) / (hi - lo)
            masks[z] = (((1.0 - t) * sa + t * sb) >= 0.0).astype(np.uint8)
            tags[z] = TAG_INTERPOLATED

    empty = np.zeros(shape, dtype=np.uint8)
    for z in range(z0, z1 + 1):
        if z not in masks:
            masks[z] = empty
            tags[z] = TAG_EMPTY

    return Masklet(z_range=(z0, z1), masks=masks, tags=tags, prompted_slices=tuple(prompted))
