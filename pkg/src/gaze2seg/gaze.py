"""Gaze streams: recorded-log parsing, screen-to-image mapping, synthetic generation.

Synthetic sampling uses a splitmix-style 64-bit PRNG with index selection by
``next_u64() % n`` so fixtures are reproducible from (seed, algorithm) alone.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .interp import chamfer_distance_int

TRACKER_HZ = 90.0
SAMPLE_PERIOD_MS = 1000.0 / TRACKER_HZ

_MASK64 = (1 << 64) - 1


class GazeLogError(Exception):
    """Raised for malformed gaze logs; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class MissingViewportError(GazeLogError):
    pass


class MalformedLineError(GazeLogError):
    pass


class NonMonotonicTimeError(GazeLogError):
    pass


class EmptyMaskError(Exception):
    pass


class SplitMix64:
    """Deterministic 64-bit generator (splitmix finalizer over an additive state)."""

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def below(self, n: int) -> int:
        """Uniform index in [0, n) via modulo reduction."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n


def derive_seed(seed: int, index: int) -> int:
    """Per-slice / per-case seed: XOR of the base seed with the index."""
    return (seed ^ index) & _MASK64


@dataclass(frozen=True)
class GazeSample:
    t_ms: float
    x_px: float
    y_px: float
    slice: int
    clamped: bool = False


@dataclass(frozen=True)
class ViewportTransform:
    """Screen-to-image mapping: image = (screen - origin) / scale."""

    img_x0: float
    img_y0: float
    scale: float

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    def to_image(self, sx: float, sy: float) -> Tuple[float, float]:
        return ((sx - self.img_x0) / self.scale, (sy - self.img_y0) / self.scale)

    def to_screen(self, x: float, y: float) -> Tuple[float, float]:
        return (x * self.scale + self.img_x0, y * self.scale + self.img_y0)


@dataclass(frozen=True)
class GazeStream:
    samples: Tuple[GazeSample, ...]
    source: str = "recorded"  # recorded | synthetic | live

    def __len__(self) -> int:
        return len(self.samples)

    def for_slice(self, z: int) -> "GazeStream":
        return GazeStream(tuple(s for s in self.samples if s.slice == z), self.source)

    def slices(self) -> List[int]:
        return sorted({s.slice for s in self.samples})


def _clamp_to_image(x: float, y: float, nx: int, ny: int) -> Tuple[float, float, bool]:
    cx = min(max(x, 0.0), float(nx - 1))
    cy = min(max(y, 0.0), float(ny - 1))
    return cx, cy, (cx != x or cy != y)


def parse_gaze_log(
    path: Union[str, Path], dims: Tuple[int, int, int]
) -> Tuple[ViewportTransform, GazeStream]:
    """Parse a JSONL gaze log: one viewport record, then time-ordered gaze records.

    ``dims`` is (nx, ny, nz) of the target volume; out-of-image samples are
    clamped to the nearest boundary pixel and flagged.
    """
    nx, ny, nz = dims
    transform: Optional[ViewportTransform] = None
    samples: List[GazeSample] = []
    last_t = -math.inf

    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except ValueError as exc:
                raise MalformedLineError(f"bad JSON: {exc}", line=lineno) from exc
            kind = rec.get("kind")
            if transform is None:
                if kind != "viewport":
                    raise MissingViewportError("first record must be a viewport record", line=lineno)
                try:
                    transform = ViewportTransform(
                        float(rec["img_x0"]), float(rec["img_y0"]), float(rec["scale"])
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise MalformedLineError(f"bad viewport record: {exc}", line=lineno) from exc
                continue
            if kind != "gaze":
                raise MalformedLineError(f"unexpected record kind {kind!r}", line=lineno)
            try:
                t = float(rec["t_ms"])
                sx = float(rec["sx"])
                sy = float(rec["sy"])
                z = int(rec["slice"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedLineError(f"bad gaze record: {exc}", line=lineno) from exc
            if t < last_t:
                raise NonMonotonicTimeError(f"t_ms {t} after {last_t}", line=lineno)
            last_t = t
            if not 0 <= z < nz:
                raise MalformedLineError(f"slice {z} outside [0, {nz})", line=lineno)
            x, y = transform.to_image(sx, sy)
            x, y, clamped = _clamp_to_image(x, y, nx, ny)
            samples.append(GazeSample(t, x, y, z, clamped))

    if transform is None:
        raise MissingViewportError("log contains no viewport record")
    return transform, GazeStream(tuple(samples), source="recorded")


def serialize_gaze_log(
    path: Union[str, Path], transform: ViewportTransform, stream: GazeStream
) -> None:
    """Inverse of parse_gaze_log (lossless for samples that were never clamped)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            json.dumps(
                {
                    "kind": "viewport",
                    "img_x0": transform.img_x0,
                    "img_y0": transform.img_y0,
                    "scale": transform.scale,
                }
            )
            + "\n"
        )
        for s in stream.samples:
            sx, sy = transform.to_screen(s.x_px, s.y_px)
            f.write(
                json.dumps({"kind": "gaze", "t_ms": s.t_ms, "sx": sx, "sy": sy, "slice": s.slice})
                + "\n"
            )


def synthesize_gaze(
    gt: np.ndarray,
    n_points: int = 90,
    inside_ratio: float = 0.8,
    band_px: float = 30.0,
    seed: int = 0,
    slice_index: int = 0,
) -> GazeStream:
    """Generate a synthetic fixation stream from a ground-truth slice mask.

    Exactly round(n_points * inside_ratio) samples land uniformly on foreground
    pixels; the rest land uniformly on background pixels within chamfer distance
    band_px of the foreground, imitating fixation jitter around the structure.
    Timestamps advance at the 90 Hz tracker period. Foreground samples are
    emitted first, then band samples.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if not 0 < inside_ratio <= 1:
        raise ValueError("inside_ratio must be in (0, 1]")
    fg = np.asarray(gt, dtype=bool)
    fg_idx = np.argwhere(fg)  # row-major (y, x) order
    if fg_idx.shape[0] == 0:
        raise EmptyMaskError("ground-truth slice has no foreground pixels")

    n_in = int(math.floor(n_points * inside_ratio + 0.5))
    n_out = n_points - n_in

    band_idx = np.empty((0, 2), dtype=np.int64)
    if n_out > 0:
        dist3 = chamfer_distance_int(fg)
        band = (~fg) & (dist3 <= int(round(3 * band_px)))
        band_idx = np.argwhere(band)
        if band_idx.shape[0] == 0:
            band_idx = np.argwhere(~fg)
            if band_idx.shape[0] == 0:
                warnings.warn("mask fills the slice; emitting all samples inside")
                n_in, n_out = n_points, 0
            else:
                warnings.warn("boundary band is empty; sampling from all background pixels")

    rng = SplitMix64(seed)
    samples: List[GazeSample] = []
    t = 0.0
    for _ in range(n_in):
        y, x = fg_idx[rng.below(fg_idx.shape[0])]
        samples.append(GazeSample(t, float(x), float(y), slice_index))
        t += SAMPLE_PERIOD_MS
    for _ in range(n_out):
        y, x = band_idx[rng.below(band_idx.shape[0])]
        samples.append(GazeSample(t, float(x), float(y), slice_index))
        t += SAMPLE_PERIOD_MS
    return GazeStream(tuple(samples), source="synthetic")


def merge_streams(streams: Sequence[GazeStream], source: str = "synthetic") -> GazeStream:
    """Concatenate per-slice streams, re-stamping times as one 90 Hz session."""
    samples: List[GazeSample] = []
    t = 0.0
    for st in streams:
        for s in st.samples:
            samples.append(GazeSample(t, s.x_px, s.y_px, s.slice, s.clamped))
            t += SAMPLE_PERIOD_MS
    return GazeStream(tuple(samples), source=source)
