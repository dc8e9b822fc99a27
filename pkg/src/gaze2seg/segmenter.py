"""Box-prompted per-slice segmentation backends.

Two deterministic oracles (ground-truth lookup and intensity region growing)
keep the pipeline testable at desk scale; an HTTP adapter forwards prompts to
an external neural segmentation service with frozen weights.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import requests

from .promptgen import BBoxPrompt
from .volume_io import MaskVolume

DEFAULT_TAU_HU = 60.0
DEFAULT_TIMEOUT_S = 30.0
DEFAULT_RETRIES = 2
DEFAULT_MAX_IN_FLIGHT = 4

_DTYPE_TAGS = {np.dtype(np.uint8): "u8", np.dtype(np.int16): "i16", np.dtype(np.float32): "f32"}

# Fixed neighbor visit order keeps region growing deterministic.
_NEIGHBORS_8 = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


class BackendUnavailableError(Exception):
    pass


class BackendProtocolError(Exception):
    pass


class MissingGroundTruthError(Exception):
    pass


@dataclass(frozen=True)
class SliceSegmentation:
    slice: int
    mask: np.ndarray  # (ny, nx) uint8
    latency_ms: float


class GtOracleBackend:
    """Evaluation-mode backend: returns ground truth intersected with the boxes."""

    kind = "gt_oracle"

    def __init__(self, gt: Optional[MaskVolume]) -> None:
        if gt is None:
            raise MissingGroundTruthError("gt_oracle backend requires a ground-truth mask volume")
        self.gt = gt

    def segment(self, image_slice: np.ndarray, prompts: Sequence[BBoxPrompt]) -> np.ndarray:
        z = prompts[0].slice
        gt_slice = self.gt.slice(z)
        out = np.zeros_like(gt_slice, dtype=np.uint8)
        for b in prompts:
            win = (slice(b.y0, b.y1 + 1), slice(b.x0, b.x1 + 1))
            out[win] |= gt_slice[win].astype(np.uint8)
        return out


class RegionGrowBackend:
    """Flood fill from each box center over pixels within tau of the running
    region mean, clipped to the box; boxes merge by union.

    Intentionally imperfect so strategy comparisons have room to differ."""

    kind = "region_grow"

    def __init__(self, tau: float = DEFAULT_TAU_HU) -> None:
        if tau <= 0:
            raise ValueError("tau must be > 0")
        self.tau = float(tau)

    def segment(self, image_slice: np.ndarray, prompts: Sequence[BBoxPrompt]) -> np.ndarray:
        h, w = image_slice.shape
        out = np.zeros((h, w), dtype=np.uint8)
        for b in prompts:
            self._grow_box(image_slice, b, out)
        return out

    def _grow_box(self, image: np.ndarray, b: BBoxPrompt, out: np.ndarray) -> None:
        bw = b.x1 - b.x0 + 1
        bh = b.y1 - b.y0 + 1
        win = image[b.y0 : b.y1 + 1, b.x0 : b.x1 + 1].astype(np.float64)
        pix = win.ravel().tolist()  # plain floats: the BFS below is pure Python
        visited = bytearray(bw * bh)
        cx = (b.x0 + b.x1) // 2 - b.x0
        cy = (b.y0 + b.y1) // 2 - b.y0
        seed = cy * bw + cx
        visited[seed] = 1
        total = pix[seed]
        count = 1
        queue = [seed]
        head = 0
        tau = self.tau
        while head < len(queue):
            cur = queue[head]
            head += 1
            x = cur % bw
            y = cur // bw
            mean = total / count
            for dx, dy in _NEIGHBORS_8:
                nx = x + dx
                ny = y + dy
                if 0 <= nx < bw and 0 <= ny < bh:
                    idx = ny * bw + nx
                    if not visited[idx] and abs(pix[idx] - mean) <= tau:
                        visited[idx] = 1
                        total += pix[idx]
                        count += 1
                        queue.append(idx)
        grown = np.frombuffer(bytes(visited), dtype=np.uint8).reshape(bh, bw)
        out[b.y0 : b.y1 + 1, b.x0 : b.x1 + 1] |= grown


class ExternalBackend:
    """HTTP adapter for a real segmentation service (e.g. a SAM-2 shim).

    POSTs {url}/segment with base64 little-endian pixels plus boxes and expects
    a base64 uint8 0/1 row-major mask back. Two retries with exponential
    backoff; concurrent calls are capped by a semaphore.
    """

    kind = "external"

    def __init__(
        self,
        url: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        retries: int = DEFAULT_RETRIES,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        backoff_s: float = 0.5,
    ) -> None:
        if not url.startswith(("http://", "https://")):
            raise ValueError(f"external backend URL must be http(s), got {url!r}")
        self.url = url.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self._gate = threading.Semaphore(max_in_flight)

    def segment(self, image_slice: np.ndarray, prompts: Sequence[BBoxPrompt]) -> np.ndarray:
        h, w = image_slice.shape
        payload = {
            "width": w,
            "height": h,
            "dtype": _DTYPE_TAGS.get(image_slice.dtype, "i16"),
            "pixels": base64.b64encode(
                np.ascontiguousarray(image_slice)
                .astype(image_slice.dtype.newbyteorder("<"))
                .tobytes()
            ).decode("ascii"),
            "boxes": [{"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1} for b in prompts],
        }
        body = self._post_with_retries(payload)
        try:
            raw = base64.b64decode(body["mask"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendProtocolError(f"bad response body: {exc}") from exc
        if len(raw) != w * h:
            raise BackendProtocolError(f"mask is {len(raw)} bytes, expected {w * h}")
        mask = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
        return np.minimum(mask, 1).astype(np.uint8)

    def _post_with_retries(self, payload: dict) -> dict:
        last_err: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(
                        self.url + "/segment", json=payload, timeout=self.timeout_s
                    )
            except requests.RequestException as exc:
                last_err = exc
                continue
            if resp.status_code >= 500:
                last_err = BackendUnavailableError(f"server returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BackendProtocolError(f"unexpected status {resp.status_code}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendProtocolError(f"response is not JSON: {exc}") from exc
        raise BackendUnavailableError(f"backend unreachable after {self.retries + 1} attempts: {last_err}")


Backend = GtOracleBackend | RegionGrowBackend | ExternalBackend


def build_backend(spec: Dict, gt: Optional[MaskVolume] = None) -> Backend:
    """Instantiate a backend from a config dict {"kind": ..., ...}."""
    kind = spec.get("kind")
    if kind == "gt_oracle":
        return GtOracleBackend(gt)
    if kind == "region_grow":
        return RegionGrowBackend(tau=float(spec.get("tau", DEFAULT_TAU_HU)))
    if kind == "external":
        return ExternalBackend(
            url=spec["url"],
            timeout_s=float(spec.get("timeout_s", DEFAULT_TIMEOUT_S)),
            retries=int(spec.get("retries", DEFAULT_RETRIES)),
            max_in_flight=int(spec.get("max_in_flight", DEFAULT_MAX_IN_FLIGHT)),
            backoff_s=float(spec.get("backoff_s", 0.5)),
        )
    raise ValueError(f"unknown backend kind {kind!r}")


def segment_slice(
    backend: Backend, image_slice: np.ndarray, prompts: Sequence[BBoxPrompt]
) -> SliceSegmentation:
    """Run one backend call and record its wall-clock latency."""
    if not prompts:
        raise ValueError("segment_slice needs at least one prompt")
    z = prompts[0].slice
    if any(p.slice != z for p in prompts):
        raise ValueError("all prompts must target the same slice")
    t0 = time.perf_counter()
    mask = backend.segment(image_slice, prompts)
    latency = (time.perf_counter() - t0) * 1000.0
    return SliceSegmentation(slice=z, mask=mask, latency_ms=latency)
