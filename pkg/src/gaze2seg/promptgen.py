"""Prompt construction from gaze: heatmap accumulation, K-Means coarse masking,
per-component bounding boxes, and prompted-slice selection strategies."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .gaze import GazeStream

_EIGHT_CONN = np.ones((3, 3), dtype=bool)


class EmptyHeatmapError(Exception):
    pass


class InvalidExtentError(Exception):
    pass


@dataclass(frozen=True)
class Heatmap:
    width: int
    height: int
    values: np.ndarray  # (height, width) in [0, 1]; max 1.0 when any sample contributed
    sigma_px: float


@dataclass(frozen=True)
class CoarseMask:
    values: np.ndarray  # (height, width) uint8 {0,1}
    component_count: int


@dataclass(frozen=True)
class BBoxPrompt:
    """Inclusive pixel bounds of one prompted region on one slice."""

    slice: int
    x0: int
    y0: int
    x1: int
    y1: int

    def as_dict(self) -> Dict[str, int]:
        return {"slice": self.slice, "x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class Strategy:
    """Which slices receive prompts: first_slice, all_slices, or budget_<n>."""

    kind: str
    n: Optional[int] = None

    FIRST = "first_slice"
    ALL = "all_slices"
    BUDGET = "budget_n"

    def __post_init__(self) -> None:
        if self.kind not in (self.FIRST, self.ALL, self.BUDGET):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == self.BUDGET and (self.n is None or self.n < 1):
            raise ValueError("budget_n strategy needs n >= 1")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        text = text.strip()
        if text in (cls.FIRST, cls.ALL):
            return cls(text)
        m = re.fullmatch(r"budget[_:](\d+)", text)
        if m:
            return cls(cls.BUDGET, int(m.group(1)))
        raise ValueError(f"cannot parse strategy {text!r}")

    def __str__(self) -> str:
        return f"budget_{self.n}" if self.kind == self.BUDGET else self.kind


@dataclass(frozen=True)
class PromptPlan:
    strategy: Strategy
    prompted_slices: Tuple[int, ...]
    prompts: Tuple[BBoxPrompt, ...]

    def for_slice(self, z: int) -> List[BBoxPrompt]:
        return [p for p in self.prompts if p.slice == z]

    def to_json(self) -> str:
        return json.dumps(
            {"strategy": str(self.strategy), "prompts": [p.as_dict() for p in self.prompts]}
        )

    @classmethod
    def from_json(cls, text: str) -> "PromptPlan":
        obj = json.loads(text)
        prompts = tuple(
            BBoxPrompt(int(p["slice"]), int(p["x0"]), int(p["y0"]), int(p["x1"]), int(p["y1"]))
            for p in obj["prompts"]
        )
        slices = tuple(sorted({p.slice for p in prompts}))
        return cls(Strategy.parse(obj["strategy"]), slices, prompts)


@dataclass(frozen=True)
class PromptConfig:
    """Tunables for the gaze-to-box pipeline (defaults sized for 512x512 slices)."""

    sigma_px: float = 25.0
    k: int = 2
    min_area_px: Optional[int] = None  # None: 50 scaled by (nx*ny)/512^2
    margin_px: int = 3
    seed: int = 0


def default_min_area(width: int, height: int) -> int:
    return max(1, int(round(50 * (width * height) / (512 * 512))))


def accumulate_heatmap(
    stream: GazeStream, dims: Tuple[int, int], sigma_px: float
) -> Heatmap:
    """Sum a Gaussian kernel at every gaze sample and normalize the peak to 1.

    Each sample contributes exp(-|p - g|^2 / (2 sigma^2)) within a cutoff radius
    of 3 sigma. An empty stream yields an all-zero map.
    """
    if sigma_px <= 0:
        raise ValueError("sigma_px must be > 0")
    w, h = dims
    grid = np.zeros((h, w), dtype=np.float64)
    r = 3.0 * sigma_px
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for s in stream.samples:
        x_lo = max(0, int(math.floor(s.x_px - r)))
        x_hi = min(w - 1, int(math.ceil(s.x_px + r)))
        y_lo = max(0, int(math.floor(s.y_px - r)))
        y_hi = min(h - 1, int(math.ceil(s.y_px + r)))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        dx = np.arange(x_lo, x_hi + 1, dtype=np.float64) - s.x_px
        dy = np.arange(y_lo, y_hi + 1, dtype=np.float64) - s.y_px
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        grid[y_lo : y_hi + 1, x_lo : x_hi + 1] += np.where(d2 <= r * r, np.exp(-d2 * inv), 0.0)
    peak = grid.max()
    if peak > 0:
        grid /= peak
    return Heatmap(width=w, height=h, values=grid, sigma_px=sigma_px)


def _kmeans_1d(values: np.ndarray, k: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm on scalar intensities, centroids seeded min..max evenly.

    Returns (labels, centroids). Runs on unique values weighted by counts;
    empty clusters keep their previous centroid. The seed is unused for the
    deterministic min/max initialization but kept for k>2 tie experiments.
    """
    uniq, counts = np.unique(values, return_counts=True)
    cents = np.linspace(uniq.min(), uniq.max(), k)
    for _ in range(100):
        assign = np.abs(uniq[:, None] - cents[None, :]).argmin(axis=1)
        new = cents.copy()
        for j in range(k):
            sel = assign == j
            if sel.any():
                new[j] = np.average(uniq[sel], weights=counts[sel])
        if np.abs(new - cents).max() < 1e-6:
            cents = new
            break
        cents = new
    assign = np.abs(uniq[:, None] - cents[None, :]).argmin(axis=1)
    labels = assign[np.searchsorted(uniq, values)]
    return labels, cents


def kmeans_coarse_mask(
    h: Heatmap, k: int = 2, min_area_px: Optional[int] = None, seed: int = 0
) -> CoarseMask:
    """Cluster heatmap intensities and keep the highest-centroid cluster as
    foreground, then drop 8-connected components smaller than min_area_px."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if h.values.max() <= 0:
        raise EmptyHeatmapError("heatmap has no nonzero values")
    if min_area_px is None:
        min_area_px = default_min_area(h.width, h.height)

    labels, cents = _kmeans_1d(h.values.ravel(), k, seed)
    fg = (labels == int(cents.argmax())).reshape(h.values.shape)

    comp, n = ndimage.label(fg, structure=_EIGHT_CONN)
    kept = 0
    if n:
        areas = np.bincount(comp.ravel())
        drop = np.flatnonzero(areas < min_area_px)
        keep = fg & ~np.isin(comp, drop[drop > 0])
        kept = int(n - np.count_nonzero(drop > 0))
        fg = keep
    return CoarseMask(values=fg.astype(np.uint8), component_count=kept)


def extract_bboxes(mask: np.ndarray, slice_index: int, margin_px: int = 0) -> List[BBoxPrompt]:
    """Tight box per 8-connected component, expanded by margin_px and clipped,
    sorted by (y0, x0)."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    comp, n = ndimage.label(m, structure=_EIGHT_CONN)
    boxes: List[BBoxPrompt] = []
    for sl in ndimage.find_objects(comp):
        if sl is None:
            continue
        ys, xs = sl
        boxes.append(
            BBoxPrompt(
                slice=slice_index,
                x0=max(0, xs.start - margin_px),
                y0=max(0, ys.start - margin_px),
                x1=min(w - 1, xs.stop - 1 + margin_px),
                y1=min(h - 1, ys.stop - 1 + margin_px),
            )
        )
    boxes.sort(key=lambda b: (b.y0, b.x0))
    return boxes


def select_slices(organ_extent: Tuple[int, int], strategy: Strategy) -> List[int]:
    """Slices to prompt within [z_lo, z_hi] under a strategy.

    budget_n picks n evenly spaced indices (always including both ends) and
    degenerates to all_slices when the extent has no more than n slices.
    """
    z_lo, z_hi = organ_extent
    if z_lo > z_hi:
        raise InvalidExtentError(f"extent {organ_extent} has z_lo > z_hi")
    if strategy.kind == Strategy.FIRST:
        return [z_lo]
    if strategy.kind == Strategy.ALL:
        return list(range(z_lo, z_hi + 1))
    n = int(strategy.n or 1)
    length = z_hi - z_lo + 1
    if length <= n:
        return list(range(z_lo, z_hi + 1))
    if n == 1:
        return [z_lo]
    span = z_hi - z_lo
    picks = sorted({z_lo + int(math.floor(i * span / (n - 1) + 0.5)) for i in range(n)})
    return picks


def gaze_slice_prompts(
    stream: GazeStream, dims: Tuple[int, int], z: int, cfg: PromptConfig
) -> List[BBoxPrompt]:
    """Full per-slice pipeline: heatmap -> K-Means coarse mask -> boxes.

    Returns [] when the slice has no samples or the coarse mask is empty.
    """
    sl = stream.for_slice(z)
    if len(sl) == 0:
        return []
    hm = accumulate_heatmap(sl, dims, cfg.sigma_px)
    if hm.values.max() <= 0:
        return []
    coarse = kmeans_coarse_mask(hm, k=cfg.k, min_area_px=cfg.min_area_px, seed=cfg.seed)
    return extract_bboxes(coarse.values, z, margin_px=cfg.margin_px)


def make_plan(
    strategy: Strategy, prompts_by_slice: Mapping[int, Sequence[BBoxPrompt]]
) -> PromptPlan:
    """Assemble a plan from per-slice boxes; slices without boxes are dropped."""
    slices = tuple(sorted(z for z, boxes in prompts_by_slice.items() if boxes))
    prompts = tuple(p for z in slices for p in prompts_by_slice[z])
    return PromptPlan(strategy=strategy, prompted_slices=slices, prompts=prompts)
