"""Command-line entry points: experiment grids, gaze synthesis, interpolation,
Dice scoring, and the session service."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import harness
from .gaze import ViewportTransform, merge_streams, serialize_gaze_log, synthesize_gaze, derive_seed
from .interp import fill_masklet
from .volume_io import MaskVolume, load_mvol, load_nifti, save_mvol


def _load_any(path: str):
    p = Path(path)
    return load_nifti(p) if p.suffix == ".nii" else load_mvol(p)


@click.group()
def main() -> None:
    """Gaze-prompted volumetric segmentation toolkit."""


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
def run(spec_path: str) -> None:
    """Run the experiment grid described by a JSON spec file.

    Exit codes: 0 all cases succeeded, 1 some cases failed, 2 invalid spec.
    """
    try:
        with open(spec_path) as f:
            obj = json.load(f)
        grid = harness.grid_from_json(obj, base_dir=Path(spec_path).parent)
    except (ValueError, harness.SpecError) as exc:
        click.echo(f"invalid spec: {exc}", err=True)
        sys.exit(2)
    records = harness.run_grid(grid)
    failures = [r for r in records if r.error]
    click.echo(harness.summarize_markdown(records))
    if grid.output_dir:
        click.echo(f"reports written to {grid.output_dir}")
    sys.exit(1 if failures else 0)


@main.command("synth-gaze")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", "n_points", default=90, show_default=True, help="Samples per slice.")
@click.option("--inside", "inside_ratio", default=0.8, show_default=True)
@click.option("--band", "band_px", default=30.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--slice", "slice_index", default=None, type=int, help="Single slice (default: all non-empty).")
@click.option("--out", "out_path", default="-", help="Output JSONL gaze log ('-' for stdout).")
def synth_gaze(gt_path, n_points, inside_ratio, band_px, seed, slice_index, out_path) -> None:
    """Generate a synthetic gaze log from a ground-truth mask volume."""
    gt = _load_any(gt_path)
    if not isinstance(gt, MaskVolume):
        raise click.ClickException(f"{gt_path} is not a mask volume")
    if slice_index is not None:
        slices = [slice_index]
    else:
        extent = gt.foreground_extent_z()
        if extent is None:
            raise click.ClickException("mask volume is empty")
        slices = [z for z in range(extent[0], extent[1] + 1) if gt.slice(z).any()]
    streams = [
        synthesize_gaze(
            gt.slice(z), n_points=n_points, inside_ratio=inside_ratio,
            band_px=band_px, seed=derive_seed(seed, z), slice_index=z,
        )
        for z in slices
    ]
    merged = merge_streams(streams)
    transform = ViewportTransform(0.0, 0.0, 1.0)
    if out_path == "-":
        import tempfile

        with tempfile.NamedTemporaryFile("r", suffix=".jsonl") as tmp:
            serialize_gaze_log(tmp.name, transform, merged)
            click.echo(Path(tmp.name).read_text(), nl=False)
    else:
        serialize_gaze_log(out_path, transform, merged)
        click.echo(f"wrote {len(merged)} samples over {len(slices)} slices to {out_path}")


@main.command()
@click.option("--masks", "masks_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--slices", "slices_text", required=True, help="Comma-separated prompted slice indices.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def interp(masks_path, slices_text, out_path) -> None:
    """Keep the given slices of a mask volume and rebuild the rest by
    shape-based interpolation."""
    mv = _load_any(masks_path)
    if not isinstance(mv, MaskVolume):
        raise click.ClickException(f"{masks_path} is not a mask volume")
    try:
        prompted = sorted({int(s) for s in slices_text.split(",")})
    except ValueError:
        raise click.ClickException(f"cannot parse slice list {slices_text!r}")
    nz = mv.nz
    if any(not 0 <= z < nz for z in prompted):
        raise click.ClickException(f"slice outside [0, {nz})")
    masklet = fill_masklet({z: mv.slice(z) for z in prompted}, z_range=(0, nz - 1))
    save_mvol(MaskVolume(masklet.to_array(), mv.spacing_mm, label_name=mv.label_name), out_path)
    counts = masklet.tag_counts()
    click.echo(
        f"wrote {out_path}: {counts['segmented']} kept, "
        f"{counts['interpolated']} interpolated, {counts['empty']} empty"
    )


@main.command()
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
def dice(pred_path, gt_path) -> None:
    """Dice overlap between two mask volumes."""
    score = harness.dice(_load_any(pred_path), _load_any(gt_path))
    click.echo(f"{score:.6f}")


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--cors-origin", "cors_origins", multiple=True, help="Allowed UI origins (default: any).")
def serve(port, host, cors_origins) -> None:
    """Start the interactive annotation session service."""
    import uvicorn

    from .service import create_app

    app = create_app(cors_origins=list(cors_origins) or None)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
