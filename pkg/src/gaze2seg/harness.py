"""Experiment harness: phantom generation, Dice scoring, strategy/prompt-source
grids, and CSV/JSON/markdown reports with per-phase wall-clock timings.

Reported times cover algorithm phases on local hardware only; they are not
comparable to interactive annotation sessions that include human and GPU time.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import promptgen
from .gaze import EmptyMaskError, derive_seed, parse_gaze_log, synthesize_gaze
from .interp import DimensionMismatchError, Masklet, fill_masklet
from .promptgen import BBoxPrompt, PromptConfig, PromptPlan, Strategy
from .segmenter import build_backend, segment_slice
from .volume_io import MaskVolume, Volume, save_mvol


class SpecError(Exception):
    """The experiment spec is structurally invalid."""


def dice(pred: Union[MaskVolume, np.ndarray], gt: Union[MaskVolume, np.ndarray]) -> float:
    """2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    p = (pred.voxels if isinstance(pred, Volume) else np.asarray(pred)).astype(bool)
    g = (gt.voxels if isinstance(gt, Volume) else np.asarray(gt)).astype(bool)
    if p.shape != g.shape:
        raise DimensionMismatchError(f"shape mismatch: {p.shape} vs {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


@dataclass(frozen=True)
class PhantomParams:
    dims: Tuple[int, int, int] = (128, 128, 128)
    center: Optional[Tuple[float, float, float]] = None
    radii: Tuple[float, float, float] = (20.0, 20.0, 20.0)
    inside_hu: float = 60.0
    outside_hu: float = -30.0
    noise_sd: float = 10.0


def make_phantom(params: PhantomParams, seed: int = 0) -> Tuple[Volume, MaskVolume]:
    """Ellipsoid phantom: ground truth from the analytic surface, image from a
    two-level intensity model plus Gaussian noise."""
    nx, ny, nz = params.dims
    cx, cy, cz = params.center or ((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0)
    rx, ry, rz = params.radii
    if min(rx, ry, rz) <= 0:
        raise ValueError(f"degenerate radii {params.radii}")
    if cx - rx < 0 or cx + rx > nx - 1 or cy - ry < 0 or cy + ry > ny - 1 or cz - rz < 0 or cz + rz > nz - 1:
        raise ValueError(f"radii {params.radii} do not fit dims {params.dims} at center {(cx, cy, cz)}")

    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 + ((zz - cz) / rz) ** 2 <= 1.0
    rng = np.random.default_rng(seed)
    img = np.where(inside, params.inside_hu, params.outside_hu) + rng.normal(
        0.0, params.noise_sd, size=inside.shape
    )
    volume = Volume(np.clip(np.rint(img), -32768, 32767).astype(np.int16), (1.0, 1.0, 1.0))
    gt = MaskVolume(inside.astype(np.uint8), (1.0, 1.0, 1.0), label_name="phantom")
    return volume, gt


@dataclass(frozen=True)
class Case:
    id: str
    organ: str
    volume: Volume
    gt: MaskVolume


def make_phantom_suite(
    n_cases: int = 10,
    dims: Tuple[int, int, int] = (128, 128, 128),
    seed: int = 7,
) -> List[Case]:
    """Varied ellipsoids; at the default 128-deep grid the z-extent spans 100+ slices."""
    cases = []
    nx, ny, nz = dims
    rxy = min(nx, ny)
    for i in range(n_cases):
        case_seed = derive_seed(seed, i)
        rng = np.random.default_rng(case_seed)
        jitter = 0.045 * rxy
        params = PhantomParams(
            dims=dims,
            center=(
                (nx - 1) / 2.0 + rng.uniform(-jitter, jitter),
                (ny - 1) / 2.0 + rng.uniform(-jitter, jitter),
                (nz - 1) / 2.0,
            ),
            radii=(
                rng.uniform(0.11, 0.17) * rxy,
                rng.uniform(0.11, 0.17) * rxy,
                rng.uniform(0.40, 0.47) * nz,
            ),
        )
        volume, gt = make_phantom(params, seed=case_seed)
        cases.append(Case(id=f"phantom-{i:03d}", organ="phantom", volume=volume, gt=gt))
    return cases


@dataclass(frozen=True)
class SyntheticGazeSource:
    n_points: int = 90
    inside_ratio: float = 0.8
    band_px: float = 30.0
    sigma_px: Optional[float] = None  # None: 25 px scaled by min(nx, ny)/512

    label = "synthetic_gaze"


@dataclass(frozen=True)
class GtBBoxSource:
    margin_px: int = 0

    label = "gt_bbox"


@dataclass(frozen=True)
class RecordedGazeSource:
    path: str
    sigma_px: Optional[float] = None

    label = "recorded_gaze"


PromptSource = Union[GtBBoxSource, SyntheticGazeSource, RecordedGazeSource]


def parse_prompt_source(obj: Union[str, Mapping]) -> PromptSource:
    if isinstance(obj, str):
        obj = {"kind": obj}
    kind = obj.get("kind")
    if kind == "gt_bbox":
        return GtBBoxSource(margin_px=int(obj.get("margin_px", 0)))
    if kind == "synthetic_gaze":
        return SyntheticGazeSource(
            n_points=int(obj.get("n_points", 90)),
            inside_ratio=float(obj.get("inside_ratio", 0.8)),
            band_px=float(obj.get("band_px", 30.0)),
            sigma_px=obj.get("sigma_px"),
        )
    if kind == "recorded_gaze":
        if "path" not in obj:
            raise SpecError("recorded_gaze source needs a path")
        return RecordedGazeSource(path=str(obj["path"]), sigma_px=obj.get("sigma_px"))
    raise SpecError(f"unknown prompt source {kind!r}")


def _auto_sigma(dims: Tuple[int, int], override: Optional[float]) -> float:
    if override is not None:
        return float(override)
    return 25.0 * min(dims) / 512.0


def build_prompt_plan(
    case: Case, source: PromptSource, strategy: Strategy, seed: int
) -> PromptPlan:
    """Construct the per-slice box prompts for one case under one strategy."""
    nx, ny, nz = case.volume.dims
    if isinstance(source, RecordedGazeSource):
        _, stream = parse_gaze_log(source.path, (nx, ny, nz))
        gazed = stream.slices()
        if not gazed:
            raise SpecError(f"gaze log {source.path} contains no samples")
        extent = (gazed[0], gazed[-1])
    else:
        extent = case.gt.foreground_extent_z()
        if extent is None:
            raise SpecError(f"case {case.id} has an empty ground-truth mask")

    prompted = promptgen.select_slices(extent, strategy)
    prompts_by_slice: Dict[int, List[BBoxPrompt]] = {}

    if isinstance(source, GtBBoxSource):
        for z in prompted:
            prompts_by_slice[z] = promptgen.extract_bboxes(
                case.gt.slice(z), z, margin_px=source.margin_px
            )
    elif isinstance(source, SyntheticGazeSource):
        cfg = PromptConfig(sigma_px=_auto_sigma((nx, ny), source.sigma_px))
        for z in prompted:
            try:
                stream = synthesize_gaze(
                    case.gt.slice(z),
                    n_points=source.n_points,
                    inside_ratio=source.inside_ratio,
                    band_px=source.band_px,
                    seed=derive_seed(seed, z),
                    slice_index=z,
                )
            except EmptyMaskError:
                continue
            prompts_by_slice[z] = promptgen.gaze_slice_prompts(stream, (nx, ny), z, cfg)
    else:
        cfg = PromptConfig(sigma_px=_auto_sigma((nx, ny), source.sigma_px))
        for z in prompted:
            prompts_by_slice[z] = promptgen.gaze_slice_prompts(stream, (nx, ny), z, cfg)

    return promptgen.make_plan(strategy, prompts_by_slice)


@dataclass
class EvalRecord:
    case: str
    organ: str
    strategy: str
    source: str
    backend: str
    dice: float
    prompt_ms: float
    segment_ms: float
    interp_ms: float
    total_ms: float
    error: Optional[str] = None
    masklet_path: Optional[str] = None


def run_case(
    case: Case,
    strategy: Strategy,
    source: PromptSource,
    backend_spec: Mapping,
    seed: int = 0,
    output_dir: Optional[Path] = None,
) -> Tuple[EvalRecord, Masklet]:
    """One full pipeline pass: prompts -> per-slice segmentation -> masklet -> Dice."""
    nz = case.volume.nz
    backend = build_backend(dict(backend_spec), gt=case.gt)
    t_start = time.perf_counter()

    plan = build_prompt_plan(case, source, strategy, seed)
    t_prompt = time.perf_counter()
    if not plan.prompted_slices:
        raise SpecError(f"case {case.id}: no slice produced any prompt")

    segmented: Dict[int, np.ndarray] = {}
    for z in plan.prompted_slices:
        seg = segment_slice(backend, case.volume.slice(z), plan.for_slice(z))
        segmented[z] = seg.mask
    t_segment = time.perf_counter()

    masklet = fill_masklet(segmented, z_range=(0, nz - 1))
    masklet.provenance = plan
    t_interp = time.perf_counter()

    score = dice(masklet.to_array(), case.gt.voxels)
    t_end = time.perf_counter()

    masklet.timings_ms = {
        "prompt": (t_prompt - t_start) * 1000.0,
        "segment": (t_segment - t_prompt) * 1000.0,
        "interp": (t_interp - t_segment) * 1000.0,
    }

    masklet_path: Optional[str] = None
    if output_dir is not None:
        mdir = Path(output_dir) / "masklets"
        mdir.mkdir(parents=True, exist_ok=True)
        name = f"{case.id}__{strategy}__{source.label}__{backend.kind}.mvol"
        out = mdir / name
        save_mvol(
            MaskVolume(masklet.to_array(), case.volume.spacing_mm, label_name=case.organ), out
        )
        masklet_path = str(out)

    record = EvalRecord(
        case=case.id,
        organ=case.organ,
        strategy=str(strategy),
        source=source.label,
        backend=backend.kind,
        dice=score,
        prompt_ms=(t_prompt - t_start) * 1000.0,
        segment_ms=(t_segment - t_prompt) * 1000.0,
        interp_ms=(t_interp - t_segment) * 1000.0,
        total_ms=(t_end - t_start) * 1000.0,
        masklet_path=masklet_path,
    )
    return record, masklet


@dataclass
class GridSpec:
    """Cross product of strategies, prompt sources and backends over a dataset."""

    cases: List[Case]
    strategies: List[Strategy]
    sources: List[PromptSource]
    backends: List[Dict]
    seed: int = 0
    output_dir: Optional[Path] = None
    parallelism: int = 1


def run_grid(grid: GridSpec) -> List[EvalRecord]:
    """Run every (case, strategy, source, backend) combination; failures become
    records with error text and NaN Dice rather than aborting the grid."""
    jobs = []
    for ci, case in enumerate(grid.cases):
        for strategy in grid.strategies:
            for source in grid.sources:
                for backend_spec in grid.backends:
                    jobs.append((ci, case, strategy, source, backend_spec))

    def _one(job) -> EvalRecord:
        ci, case, strategy, source, backend_spec = job
        try:
            record, _ = run_case(
                case,
                strategy,
                source,
                backend_spec,
                seed=derive_seed(grid.seed, ci),
                output_dir=grid.output_dir,
            )
            return record
        except Exception as exc:  # noqa: BLE001 - grid isolation is the contract
            return EvalRecord(
                case=case.id,
                organ=case.organ,
                strategy=str(strategy),
                source=source.label,
                backend=str(backend_spec.get("kind")),
                dice=float("nan"),
                prompt_ms=0.0,
                segment_ms=0.0,
                interp_ms=0.0,
                total_ms=0.0,
                error=f"{type(exc).__name__}: {exc}",
            )

    if grid.parallelism > 1:
        with ThreadPoolExecutor(max_workers=grid.parallelism) as pool:
            records = list(pool.map(_one, jobs))
    else:
        records = [_one(j) for j in jobs]

    if grid.output_dir is not None:
        write_reports(records, Path(grid.output_dir))
    return records


CSV_COLUMNS = [
    "case", "organ", "strategy", "source", "backend",
    "dice", "prompt_ms", "segment_ms", "interp_ms", "total_ms",
]


def write_reports(records: Sequence[EvalRecord], output_dir: Path) -> None:
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "report.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(CSV_COLUMNS)
        for r in records:
            wr.writerow([
                r.case, r.organ, r.strategy, r.source, r.backend,
                f"{r.dice:.6f}" if not math.isnan(r.dice) else "nan",
                f"{r.prompt_ms:.3f}", f"{r.segment_ms:.3f}",
                f"{r.interp_ms:.3f}", f"{r.total_ms:.3f}",
            ])
    with open(output_dir / "report.json", "w") as f:
        json.dump(
            {
                "records": [asdict(r) for r in records],
                "failures": [asdict(r) for r in records if r.error],
            },
            f,
            indent=2,
        )
    with open(output_dir / "report.md", "w") as f:
        f.write(summarize_markdown(records))


def _mean_sd(xs: Sequence[float]) -> Tuple[float, float]:
    if not xs:
        return float("nan"), float("nan")
    return (statistics.fmean(xs), statistics.stdev(xs) if len(xs) > 1 else 0.0)


def summarize_markdown(records: Sequence[EvalRecord]) -> str:
    """Mean +/- sd Dice and time per (backend, source, strategy) cell."""
    groups: Dict[Tuple[str, str, str], List[EvalRecord]] = {}
    for r in records:
        if r.error:
            continue
        groups.setdefault((r.backend, r.source, r.strategy), []).append(r)

    lines = [
        "# Segmentation grid summary",
        "",
        "| Backend | Source | Strategy | Dice | Time (s) |",
        "|---|---|---|---|---|",
    ]
    for key in sorted(groups):
        rs = groups[key]
        dm, dsd = _mean_sd([r.dice for r in rs])
        tm, tsd = _mean_sd([r.total_ms / 1000.0 for r in rs])
        lines.append(
            f"| {key[0]} | {key[1]} | {key[2]} | "
            f"{dm:.3f} ± {dsd:.3f} | {tm:.1f} ± {tsd:.1f} |"
        )
    failures = [r for r in records if r.error]
    lines.append("")
    lines.append(f"Cases: {len(records)} total, {len(failures)} failed.")
    if failures:
        lines.append("")
        lines.append("## Failures")
        for r in failures:
            lines.append(f"- {r.case} / {r.strategy} / {r.source} / {r.backend}: {r.error}")
    lines.append("")
    lines.append(
        "_Times are local algorithm wall-clock per phase; they exclude any human "
        "interaction or model-server latency characteristics._"
    )
    return "\n".join(lines) + "\n"


def grid_from_json(obj: Mapping, base_dir: Optional[Path] = None) -> GridSpec:
    """Materialize a GridSpec from a parsed JSON experiment description."""
    try:
        dataset = obj["dataset"]
        kind = dataset["kind"]
    except (KeyError, TypeError) as exc:
        raise SpecError(f"spec missing dataset.kind: {exc}") from exc

    if kind == "phantom":
        cases = make_phantom_suite(
            n_cases=int(dataset.get("cases", 10)),
            dims=tuple(dataset.get("dims", (128, 128, 128))),
            seed=int(dataset.get("seed", 7)),
        )
    elif kind == "files":
        from .volume_io import load_mvol, load_nifti

        cases = []
        for i, c in enumerate(dataset.get("cases", [])):
            vpath = Path(c["volume"])
            gpath = Path(c["gt"])
            if base_dir is not None:
                vpath = vpath if vpath.is_absolute() else base_dir / vpath
                gpath = gpath if gpath.is_absolute() else base_dir / gpath
            if not vpath.exists() or not gpath.exists():
                raise SpecError(f"case {i}: missing file {vpath} or {gpath}")
            volume = load_nifti(vpath) if vpath.suffix == ".nii" else load_mvol(vpath)
            if gpath.suffix == ".nii":
                gt = load_nifti(gpath, label=c.get("label"), as_mask="label" not in c)
            else:
                gt = load_mvol(gpath)
            if not isinstance(gt, MaskVolume):
                raise SpecError(f"case {i}: {gpath} is not a mask volume")
            if gt.dims != volume.dims:
                raise SpecError(f"case {i}: volume dims {volume.dims} != gt dims {gt.dims}")
            cases.append(
                Case(
                    id=str(c.get("id", f"case-{i:03d}")),
                    organ=str(c.get("organ", gt.label_name or "organ")),
                    volume=volume,
                    gt=gt,
                )
            )
        if not cases:
            raise SpecError("files dataset lists no cases")
    else:
        raise SpecError(f"unknown dataset kind {kind!r}")

    def _as_list(key, single_key):
        if key in obj:
            return list(obj[key])
        if single_key in obj:
            return [obj[single_key]]
        raise SpecError(f"spec needs {key!r} or {single_key!r}")

    try:
        strategies = [Strategy.parse(s) for s in _as_list("strategies", "strategy")]
        sources = [parse_prompt_source(s) for s in _as_list("prompt_sources", "prompt_source")]
        backends = [dict(b) if isinstance(b, Mapping) else {"kind": b} for b in _as_list("backends", "backend")]
    except ValueError as exc:
        raise SpecError(str(exc)) from exc

    output_dir = obj.get("output_dir")
    if output_dir is not None:
        output_dir = Path(output_dir)
        if base_dir is not None and not output_dir.is_absolute():
            output_dir = base_dir / output_dir

    return GridSpec(
        cases=cases,
        strategies=strategies,
        sources=sources,
        backends=backends,
        seed=int(obj.get("seed", 0)),
        output_dir=output_dir,
        parallelism=int(obj.get("parallelism", 1)),
    )
