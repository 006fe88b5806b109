"""Software 3D Gaussian splat renderer with per-Gaussian adaptive tile footprints."""

from ._backend import BACKEND
from .analysis import contribution_profile, pair_report, skip_experiment
from .calibrate import (CalibrationError, CalibrationResult, TUpperLUT, build_lut, calibrate,
                        peripheral_score_closed, peripheral_score_exact, sample_views, search_k)
from .gsio import load_cameras, load_ply, save_ply, write_image
from .metrics import psnr, psnr_drop
from .pairs import PairBudgetError, TileGrid, generate_pairs, intersect_tiles
from .preprocess import SplatBatch, SplatView, compute_th, eval_sh, preprocess_view, project
from .raster import RenderReport, SkipRule, alpha_at, rasterize, raster_tile, render
from .scene import Camera, Gaussian3D, GaussianSet, Mode, RenderConfig, synth_scene
from .sorting import SortedPairs, sort_pairs

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Camera", "CalibrationError", "CalibrationResult", "Gaussian3D", "GaussianSet", "Mode",
    "PairBudgetError", "RenderConfig", "RenderReport", "SkipRule", "SortedPairs", "SplatBatch", "SplatView",
    "TUpperLUT", "TileGrid", "alpha_at", "build_lut", "calibrate", "compute_th", "contribution_profile",
    "eval_sh", "generate_pairs", "intersect_tiles", "load_cameras", "load_ply", "pair_report",
    "peripheral_score_closed", "peripheral_score_exact", "preprocess_view", "project", "psnr", "psnr_drop",
    "raster_tile", "rasterize", "render", "sample_views", "save_ply", "search_k", "skip_experiment",
    "sort_pairs", "synth_scene", "write_image",
]
