"""Live annotation session service.

Sessions hold a volume plus per-slice gaze buffers; overlays (heatmap, coarse
mask, segmentation, interpolation) are computed lazily, cached per state
revision, and served as 8-bit grayscale PNGs with state-derived ETags so
clients can poll cheaply. Mutations are serialized per session; a failed
segment never replaces the previous masklet.
"""

from __future__ import annotations

import hashlib
import io
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from . import promptgen
from .gaze import GazeSample, GazeStream
from .harness import dice
from .interp import fill_masklet, Masklet
from .promptgen import EmptyHeatmapError, PromptConfig, PromptPlan, Strategy
from .segmenter import (
    BackendProtocolError,
    BackendUnavailableError,
    MissingGroundTruthError,
    build_backend,
    segment_slice,
)
from .volume_io import FormatError, MaskVolume, Volume, load_mvol, mvol_bytes

DEFAULT_TTL_S = 30 * 60
OVERLAY_LAYERS = ("heatmap", "coarse", "segmentation", "interpolated")


@dataclass
class SessionConfig:
    sigma_px: float = 25.0
    k: int = 2
    min_area_px: Optional[int] = None
    margin_px: int = 3
    backend: Dict = field(default_factory=lambda: {"kind": "region_grow"})

    def validate(self) -> None:
        if self.sigma_px <= 0:
            raise ValueError("sigma_px must be > 0")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.margin_px < 0:
            raise ValueError("margin_px must be >= 0")

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(
            sigma_px=self.sigma_px, k=self.k, min_area_px=self.min_area_px, margin_px=self.margin_px
        )


@dataclass
class Session:
    id: str
    volume: Volume
    config: SessionConfig
    gt: Optional[MaskVolume] = None
    gaze: Dict[int, List[GazeSample]] = field(default_factory=dict)
    gaze_rev: Dict[int, int] = field(default_factory=dict)
    masklet: Optional[Masklet] = None
    plan: Optional[PromptPlan] = None
    masklet_rev: int = 0
    last_access: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    # (slice, layer) -> (state token, png bytes)
    _png_cache: Dict[Tuple[int, str], Tuple[str, bytes]] = field(default_factory=dict, repr=False)

    def state_token(self, z: int, layer: str) -> str:
        rev = self.gaze_rev.get(z, 0)
        basis = f"{self.id}:{layer}:{z}:{rev}:{self.masklet_rev}:{self.config.sigma_px}:{self.config.k}:{self.config.margin_px}"
        return hashlib.sha256(basis.encode()).hexdigest()[:32]


class SessionStore:
    def __init__(self, ttl_s: float = DEFAULT_TTL_S) -> None:
        self.ttl_s = ttl_s
        self._sessions: Dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, volume: Volume, config: SessionConfig, gt: Optional[MaskVolume]) -> Session:
        session = Session(id=secrets.token_urlsafe(16), volume=volume, config=config, gt=gt)
        with self._lock:
            self._evict_idle()
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Optional[Session]:
        with self._lock:
            self._evict_idle()
            session = self._sessions.get(session_id)
            if session is not None:
                session.last_access = time.monotonic()
            return session

    def delete(self, session_id: str) -> bool:
        with self._lock:
            return self._sessions.pop(session_id, None) is not None

    def _evict_idle(self) -> None:
        now = time.monotonic()
        stale = [k for k, s in self._sessions.items() if now - s.last_access > self.ttl_s]
        for k in stale:
            del self._sessions[k]


def _gray_png(values: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(values.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _error(status: int, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": detail})


def create_app(
    ttl_s: float = DEFAULT_TTL_S, cors_origins: Optional[List[str]] = None
) -> FastAPI:
    app = FastAPI(title="gaze2seg session service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["ETag"],
    )
    store = SessionStore(ttl_s=ttl_s)
    app.state.store = store

    def _session_or_none(session_id: str) -> Optional[Session]:
        return store.get(session_id)

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        """Create a session from an uploaded mvol body or server-local paths."""
        ctype = request.headers.get("content-type", "")
        config = SessionConfig()
        gt: Optional[MaskVolume] = None

        try:
            if ctype.startswith("application/json"):
                body = await request.json()
                cfg = body.get("config", {})
                config = SessionConfig(
                    sigma_px=float(cfg.get("sigma_px", 25.0)),
                    k=int(cfg.get("k", 2)),
                    min_area_px=cfg.get("min_area_px"),
                    margin_px=int(cfg.get("margin_px", 3)),
                    backend=dict(cfg.get("backend", {"kind": "region_grow"})),
                )
                config.validate()
                vpath = body.get("volume_path")
                if not vpath or not Path(vpath).exists():
                    return _error(404, f"volume not found: {vpath}")
                volume = load_mvol(vpath)
                gpath = body.get("gt_path")
                if gpath:
                    if not Path(gpath).exists():
                        return _error(404, f"ground truth not found: {gpath}")
                    loaded = load_mvol(gpath)
                    if not isinstance(loaded, MaskVolume):
                        return _error(422, "gt_path is not a mask volume")
                    gt = loaded
            else:
                raw = await request.body()
                if not raw:
                    return _error(404, "no volume uploaded")
                qp = request.query_params
                config = SessionConfig(
                    sigma_px=float(qp.get("sigma_px", 25.0)),
                    k=int(qp.get("k", 2)),
                    min_area_px=int(qp["min_area_px"]) if "min_area_px" in qp else None,
                    margin_px=int(qp.get("margin_px", 3)),
                    backend={"kind": qp.get("backend", "region_grow")},
                )
                if config.backend["kind"] == "external":
                    config.backend["url"] = qp.get("external_url", "")
                if "tau" in qp:
                    config.backend["tau"] = float(qp["tau"])
                config.validate()
                volume = load_mvol(raw)
        except (ValueError, TypeError) as exc:
            return _error(422, f"InvalidConfig: {exc}")
        except FormatError as exc:
            return _error(422, f"bad volume: {exc}")

        if isinstance(volume, MaskVolume):
            return _error(422, "expected an image volume, got a mask")
        session = store.create(volume, config, gt)
        nx, ny, nz = volume.dims
        return JSONResponse(
            status_code=201,
            content={
                "id": session.id,
                "dims": [nx, ny, nz],
                "spacing_mm": list(volume.spacing_mm),
                "slices": nz,
                "evaluation_mode": gt is not None,
            },
        )

    @app.get("/sessions/{session_id}")
    def session_meta(session_id: str):
        session = _session_or_none(session_id)
        if session is None:
            return _error(404, "unknown session")
        nx, ny, nz = session.volume.dims
        with session.lock:
            gazed = sorted(z for z, buf in session.gaze.items() if buf)
            has_masklet = session.masklet is not None
        return {
            "id": session.id,
            "dims": [nx, ny, nz],
            "spacing_mm": list(session.volume.spacing_mm),
            "slices": nz,
            "gazed_slices": gazed,
            "has_masklet": has_masklet,
            "evaluation_mode": session.gt is not None,
        }

    @app.post("/sessions/{session_id}/gaze")
    async def post_gaze(session_id: str, request: Request):
        session = _session_or_none(session_id)
        if session is None:
            return _error(404, "unknown session")
        body = await request.json()
        batch = body.get("samples")
        if not isinstance(batch, list) or not batch:
            return _error(400, "body must carry a non-empty 'samples' list")

        nx, ny, nz = session.volume.dims
        parsed: List[GazeSample] = []
        clamped = 0
        for i, rec in enumerate(batch):
            try:
                t = float(rec["t_ms"])
                x = float(rec["sx"])
                y = float(rec["sy"])
                z = int(rec["slice"])
            except (KeyError, TypeError, ValueError):
                return _error(400, f"malformed sample at index {i}")
            if t < 0 or not 0 <= z < nz:
                return _error(400, f"invalid sample at index {i}")
            cx = min(max(x, 0.0), float(nx - 1))
            cy = min(max(y, 0.0), float(ny - 1))
            was_clamped = cx != x or cy != y
            clamped += was_clamped
            parsed.append(GazeSample(t, cx, cy, z, was_clamped))

        with session.lock:
            for s in parsed:
                session.gaze.setdefault(s.slice, []).append(s)
                session.gaze_rev[s.slice] = session.gaze_rev.get(s.slice, 0) + 1
        return {"accepted": len(parsed), "clamped": clamped}

    @app.get("/sessions/{session_id}/overlay/{z}/{layer}")
    def get_overlay(session_id: str, z: int, layer: str, request: Request):
        session = _session_or_none(session_id)
        if session is None:
            return _error(404, "unknown session")
        if layer not in OVERLAY_LAYERS:
            return _error(404, f"unknown layer {layer!r}")
        nx, ny, nz = session.volume.dims
        if not 0 <= z < nz:
            return _error(404, f"slice {z} outside [0, {nz})")

        token = session.state_token(z, layer)
        etag = f'"{token}"'
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})

        with session.lock:
            cached = session._png_cache.get((z, layer))
            if cached is not None and cached[0] == token:
                return Response(cached[1], media_type="image/png", headers={"ETag": etag})
            samples = tuple(session.gaze.get(z, ()))
            masklet = session.masklet

        cfg = session.config
        if layer == "heatmap":
            hm = promptgen.accumulate_heatmap(
                GazeStream(samples, "live"), (nx, ny), cfg.sigma_px
            )
            img = np.rint(hm.values * 255.0)
        elif layer == "coarse":
            hm = promptgen.accumulate_heatmap(
                GazeStream(samples, "live"), (nx, ny), cfg.sigma_px
            )
            try:
                coarse = promptgen.kmeans_coarse_mask(
                    hm, k=cfg.k, min_area_px=cfg.min_area_px
                )
            except EmptyHeatmapError:
                return _error(409, "EmptyHeatmap: no gaze on this slice yet")
            img = coarse.values * 255
        else:
            if masklet is None:
                return _error(409, "no segmentation yet; POST /segment first")
            tag = masklet.tags.get(z, "empty")
            if layer == "segmentation" and tag != "segmented":
                img = np.zeros((ny, nx))
            else:
                img = masklet.masks[z] * 255

        png = _gray_png(img)
        with session.lock:
            session._png_cache[(z, layer)] = (token, png)
        return Response(png, media_type="image/png", headers={"ETag": etag})

    @app.get("/sessions/{session_id}/slice/{z}")
    def get_slice(session_id: str, z: int, request: Request):
        """Base CT plane: raw little-endian scalars, or a min/max-scaled PNG."""
        session = _session_or_none(session_id)
        if session is None:
            return _error(404, "unknown session")
        nx, ny, nz = session.volume.dims
        if not 0 <= z < nz:
            return _error(404, f"slice {z} outside [0, {nz})")
        plane = session.volume.slice(z)
        accept = request.headers.get("accept", "")
        if "application/octet-stream" in accept:
            raw = np.ascontiguousarray(plane).astype(plane.dtype.newbyteorder("<")).tobytes()
            return Response(
                raw,
                media_type="application/octet-stream",
                headers={"X-Dtype": str(plane.dtype), "X-Width": str(nx), "X-Height": str(ny)},
            )
        lo, hi = float(plane.min()), float(plane.max())
        scaled = (plane.astype(np.float64) - lo) / (hi - lo) * 255.0 if hi > lo else plane * 0
        return Response(_gray_png(np.rint(scaled)), media_type="image/png")

    @app.post("/sessions/{session_id}/segment")
    async def segment(session_id: str, request: Request):
        session = _session_or_none(session_id)
        if session is None:
            return _error(404, "unknown session")
        body = {}
        if (await request.body()):
            body = await request.json()
        try:
            strategy = Strategy.parse(body.get("strategy", "all_slices"))
        except ValueError as exc:
            return _error(422, f"InvalidConfig: {exc}")
        explicit = body.get("slices")

        with session.lock:
            gaze_snapshot = {z: tuple(buf) for z, buf in session.gaze.items() if buf}
        gazed = sorted(gaze_snapshot)
        if not gazed:
            return _error(409, "no gaze recorded yet")

        nx, ny, nz = session.volume.dims
        if explicit:
            targets = sorted(int(z) for z in explicit)
            if any(not 0 <= z < nz for z in targets):
                return _error(422, "explicit slice outside volume")
        else:
            selected = promptgen.select_slices((gazed[0], gazed[-1]), strategy)
            targets = [z for z in selected if z in gaze_snapshot]

        try:
            backend = build_backend(dict(body.get("backend") or session.config.backend), gt=session.gt)
        except (ValueError, KeyError, MissingGroundTruthError) as exc:
            return _error(422, f"InvalidConfig: {exc}")

        cfg = session.config.prompt_config()
        prompts_by_slice = {}
        for z in targets:
            stream = GazeStream(gaze_snapshot.get(z, ()), "live")
            prompts_by_slice[z] = promptgen.gaze_slice_prompts(stream, (nx, ny), z, cfg)
        plan = promptgen.make_plan(strategy, prompts_by_slice)
        if not plan.prompted_slices:
            return _error(409, "gaze produced no prompts on the requested slices")

        try:
            segmented = {}
            for z in plan.prompted_slices:
                seg = segment_slice(backend, session.volume.slice(z), plan.for_slice(z))
                segmented[z] = seg.mask
            masklet = fill_masklet(segmented, z_range=(0, nz - 1))
            masklet.provenance = plan
        except (BackendUnavailableError, BackendProtocolError, MissingGroundTruthError) as exc:
            return _error(502, f"{type(exc).__name__}: {exc}")

        with session.lock:
            session.masklet = masklet
            session.plan = plan
            session.masklet_rev += 1

        out = {
            "prompted_slices": list(plan.prompted_slices),
            "slices": [{"slice": z, "tag": masklet.tags[z]} for z in range(nz)],
            "tag_counts": masklet.tag_counts(),
        }
        if session.gt is not None:
            out["dice"] = dice(masklet.to_array(), session.gt.voxels)
        return out

    @app.get("/sessions/{session_id}/masklet")
    def get_masklet(session_id: str):
        session = _session_or_none(session_id)
        if session is None:
            return _error(404, "unknown session")
        with session.lock:
            masklet = session.masklet
        if masklet is None:
            return _error(404, "no masklet yet; POST /segment first")
        mv = MaskVolume(masklet.to_array(), session.volume.spacing_mm, label_name="masklet")
        return Response(
            mvol_bytes(mv),
            media_type="application/octet-stream",
            headers={"Content-Disposition": 'attachment; filename="masklet.mvol"'},
        )

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        if not store.delete(session_id):
            return _error(404, "unknown session")
        return Response(status_code=204)

    return app


app = create_app()
