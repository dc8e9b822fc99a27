"""Gaze-prompted interactive 3D segmentation toolkit."""

from .volume_io import MaskVolume, Volume, load_mvol, load_nifti, save_mvol
from .gaze import GazeSample, GazeStream, ViewportTransform, parse_gaze_log, synthesize_gaze
from .promptgen import (
    BBoxPrompt,
    CoarseMask,
    Heatmap,
    PromptConfig,
    PromptPlan,
    Strategy,
    accumulate_heatmap,
    extract_bboxes,
    kmeans_coarse_mask,
    select_slices,
)
from .interp import Masklet, SignedDistanceMap, chamfer_sdt, fill_masklet, interpolate_masks
from .segmenter import build_backend, segment_slice
from .harness import PhantomParams, dice, make_phantom, make_phantom_suite, run_grid

__version__ = "0.1.0"

__all__ = [
    "MaskVolume", "Volume", "load_mvol", "load_nifti", "save_mvol",
    "GazeSample", "GazeStream", "ViewportTransform", "parse_gaze_log", "synthesize_gaze",
    "BBoxPrompt", "CoarseMask", "Heatmap", "PromptConfig", "PromptPlan", "Strategy",
    "accumulate_heatmap", "extract_bboxes", "kmeans_coarse_mask", "select_slices",
    "Masklet", "SignedDistanceMap", "chamfer_sdt", "fill_masklet", "interpolate_masks",
    "build_backend", "segment_slice",
    "PhantomParams", "dice", "make_phantom", "make_phantom_suite", "run_grid",
    "__version__",
]
