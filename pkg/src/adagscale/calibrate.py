"""Offline calibration of the depth-binned transmittance bound and the loss budget K."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .metrics import DEFAULT_BASELINE_PSNR, aggregate_drop, psnr_drop
from .pairs import TileGrid
from .preprocess import TWO_PI, SplatBatch, SplatView, apply_threshold, project_view
from .raster import render_splats
from .scene import Camera, GaussianSet, Mode, RenderConfig, covariances_3d

log = logging.getLogger(__name__)

N_BINS = 20


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TUpperLUT:
    """Piecewise-constant upper bound of per-Gaussian max transmittance over depth."""

    bins: np.ndarray
    depth_min: float = 0.0
    depth_max: float = 100.0

    def __post_init__(self) -> None:
        bins = np.array(self.bins, dtype=np.float64).reshape(-1)
        if bins.size == 0 or np.any(~((bins > 0) & (bins <= 1))):
            raise ValueError("LUT bins must lie in (0, 1]")
        if not self.depth_max > self.depth_min:
            raise ValueError("depth_max must exceed depth_min")
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)

    @classmethod
    def ones(cls, n_bins: int = N_BINS, depth_min: float = 0.0, depth_max: float = 100.0) -> "TUpperLUT":
        return cls(np.ones(n_bins), depth_min, depth_max)

    @property
    def bin_width(self) -> float:
        return (self.depth_max - self.depth_min) / self.bins.size

    def bin_index(self, depth):
        """Bin of ``depth``; depths past either end clamp to the first/last bin."""
        idx = np.floor((np.asarray(depth, dtype=np.float64) - self.depth_min) / self.bin_width)
        idx = np.clip(idx, 0, self.bins.size - 1).astype(np.int64)
        return int(idx) if idx.ndim == 0 else idx

    def lookup(self, depth):
        return self.bins[self.bin_index(depth)]

    def to_dict(self) -> dict:
        return {"depth_min": self.depth_min, "depth_max": self.depth_max, "bins": self.bins.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TUpperLUT":
        return cls(d["bins"], float(d.get("depth_min", 0.0)), float(d.get("depth_max", 100.0)))


@dataclass(eq=False)
class CalibrationResult:
    k: float
    lut: TUpperLUT
    target_drop: float
    achieved_drop: float
    iterations: int
    calib_view_ids: list = field(default_factory=list)
    seed: Optional[int] = None
    criterion: str = "mean"
    baseline_psnr: float = DEFAULT_BASELINE_PSNR
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "target_drop": self.target_drop,
            "achieved_drop": self.achieved_drop,
            "lut": self.lut.to_dict(),
            "calib_view_ids": list(self.calib_view_ids),
            "iterations": self.iterations,
            "seed": self.seed,
            "criterion": self.criterion,
            "baseline_psnr": self.baseline_psnr,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        return cls(
            k=float(d["k"]), lut=TUpperLUT.from_dict(d["lut"]), target_drop=float(d["target_drop"]),
            achieved_drop=float(d["achieved_drop"]), iterations=int(d.get("iterations", 0)),
            calib_view_ids=list(d.get("calib_view_ids", [])), seed=d.get("seed"),
            criterion=d.get("criterion", "mean"),
            baseline_psnr=float(d.get("baseline_psnr", DEFAULT_BASELINE_PSNR)),
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        return cls.from_dict(json.loads(text))


def sample_views(cameras: Sequence[Camera], n: int = 16, seed: int = 0
                 ) -> tuple[list[Camera], list[Camera]]:
    """Seeded uniform sample of ``n`` calibration views; returns ``(calib, held_out)``."""
    cameras = list(cameras)
    if n >= len(cameras):
        return cameras, []
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(cameras), size=n, replace=False))
    chosen = set(pick.tolist())
    return [cameras[i] for i in pick], [c for i, c in enumerate(cameras) if i not in chosen]


def build_lut(scene, calib_views: Sequence[Camera], cfg: RenderConfig, *, n_bins: int = N_BINS,
              depth_min: float = 0.0, depth_max: float = 100.0) -> TUpperLUT:
    """Fold each view's per-Gaussian max transmittance into its depth bin by maximum."""
    if not calib_views:
        raise ValueError("need at least one calibration view")
    scene = GaussianSet.from_gaussians(scene)
    cfg = cfg.replace(mode=Mode.ELLIPSE)
    lut = TUpperLUT.ones(n_bins, depth_min, depth_max)
    bins = np.zeros(n_bins)
    seen = np.zeros(n_bins, dtype=bool)
    cov3d = covariances_3d(scene.scales, scene.rotations) if len(scene) else None
    for cam in calib_views:
        splats = project_view(scene, cam, cfg, cov3d)
        rep = render_splats(splats, cam, cfg, n_gaussians=len(scene), record_max_t=True)
        mt = rep.max_t[splats.source_id]
        observed = mt > 0
        idx = lut.bin_index(splats.depth[observed])
        np.maximum.at(bins, idx, mt[observed])
        seen[idx] = True
    return TUpperLUT(np.where(seen, bins, 1.0), depth_min, depth_max)


def peripheral_score_exact(s: SplatView, x: float, t_const: float, grid: TileGrid,
                           tau: float = 1.0 / 255.0) -> float:
    """t_const · Σ α over the image's pixel centers where τ ≤ α < x (unclamped α)."""
    if not tau <= x <= 1.0:
        raise ValueError("need tau <= x <= 1")
    xs = np.arange(grid.width) + 0.5
    ys = np.arange(grid.height) + 0.5
    dx = xs[None, :] - s.mean2d[0]
    dy = ys[:, None] - s.mean2d[1]
    ic = np.asarray(s.inv_cov, dtype=np.float64)
    q = ic[0, 0] * dx * dx + 2.0 * ic[0, 1] * dx * dy + ic[1, 1] * dy * dy
    alpha = s.opacity * np.exp(-0.5 * q)
    band = (alpha >= tau) & (alpha < x)
    return float(t_const * alpha[band].sum())


def peripheral_score_closed(cov2d, x: float, t_const: float, tau: float = 1.0 / 255.0) -> float:
    """t_const · 2π·√det(cov2d) · (x − τ)."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0] if cov2d.shape == (2, 2) \
        else cov2d[0] * cov2d[2] - cov2d[1] ** 2
    if not det > 0:
        raise ValueError("cov2d must have a positive determinant")
    if x < tau:
        raise ValueError("x must be >= tau")
    return t_const * TWO_PI * math.sqrt(det) * (x - tau)


class DropEvaluator:
    """Mean (or worst) quality drop of ADAGSCALE renders at a given K, memoised.

    Projections and lossless reference renders are computed once per view.
    """

    def __init__(self, scene, views: Sequence[Camera], cfg: RenderConfig, lut: TUpperLUT, *,
                 ground_truth: Optional[Sequence[np.ndarray]] = None,
                 baseline_psnr: float = DEFAULT_BASELINE_PSNR, criterion: str = "mean"):
        self.scene = GaussianSet.from_gaussians(scene)
        self.views = list(views)
        self.cfg = cfg
        self.lut = lut
        self.ground_truth = list(ground_truth) if ground_truth is not None else None
        self.baseline_psnr = baseline_psnr
        self.criterion = criterion
        cov3d = covariances_3d(self.scene.scales, self.scene.rotations) if len(self.scene) else None
        ref_cfg = cfg.replace(mode=Mode.ELLIPSE)
        self._base = [project_view(self.scene, cam, ref_cfg, cov3d) for cam in self.views]
        self.references = [render_splats(b, cam, ref_cfg).image for b, cam in zip(self._base, self.views)]
        self._memo: dict[float, tuple[float, list[float], int]] = {}

    def render_at(self, k: float, view: int):
        cfg = self.cfg.replace(mode=Mode.ADAGSCALE, k=float(k))
        splats = apply_threshold(self._base[view], cfg, self.lut)
        return render_splats(splats, self.views[view], cfg)

    def evaluate(self, k: float) -> tuple[float, list[float], int]:
        """Return ``(aggregate drop, per-view drops, total pair count)``."""
        k = float(k)
        if k not in self._memo:
            drops, pairs = [], 0
            for i in range(len(self.views)):
                rep = self.render_at(k, i)
                gt = self.ground_truth[i] if self.ground_truth is not None else None
                drops.append(psnr_drop(rep.image, self.references[i], gt, self.baseline_psnr))
                pairs += rep.pair_count
            self._memo[k] = (aggregate_drop(drops, self.criterion), drops, pairs)
        return self._memo[k]

    def drop(self, k: float) -> float:
        return self.evaluate(k)[0]


def search_k(scene, calib_views: Sequence[Camera], target_drop: float, cfg: RenderConfig,
             lut: TUpperLUT, *, evaluator: Optional[DropEvaluator] = None,
             ground_truth: Optional[Sequence[np.ndarray]] = None,
             baseline_psnr: float = DEFAULT_BASELINE_PSNR, criterion: str = "mean",
             max_doublings: int = 40, bisection_steps: int = 20) -> CalibrationResult:
    """Largest tested K whose calibration-view drop stays within ``target_drop``.

    K_hi starts at 1 and doubles until the drop exceeds the target, then the
    bracket is bisected a fixed number of times.
    """
    if target_drop < 0:
        raise ValueError("target_drop must be non-negative")
    ev = evaluator or DropEvaluator(scene, calib_views, cfg, lut, ground_truth=ground_truth,
                                    baseline_psnr=baseline_psnr, criterion=criterion)
    ids = [c.id for c in ev.views]
    trace: list[tuple[float, float]] = []

    def probe(k):
        d = ev.drop(k)
        trace.append((k, d))
        return d

    if probe(0.0) != 0.0:
        raise CalibrationError("K = 0 render differs from the lossless reference")
    if target_drop == 0:
        return CalibrationResult(0.0, lut, target_drop, 0.0, len(trace), ids, criterion=ev.criterion,
                                 baseline_psnr=ev.baseline_psnr, trace=trace)

    lo, hi = 0.0, 1.0
    doublings = 0
    while probe(hi) <= target_drop:
        lo = hi
        if doublings == max_doublings:
            break
        hi *= 2.0
        doublings += 1
    else:
        for _ in range(bisection_steps):
            mid = 0.5 * (lo + hi)
            if probe(mid) <= target_drop:
                lo = mid
            else:
                hi = mid
    ok = [(k, d) for k, d in trace if d <= target_drop]
    k_best, d_best = max(ok, key=lambda kd: kd[0])
    log.info("search_k: target %.4g dB -> K=%.6g (drop %.4g dB, %d renders of %d views)",
             target_drop, k_best, d_best, len(trace), len(ev.views))
    return CalibrationResult(k_best, lut, target_drop, d_best, len(trace), ids, criterion=ev.criterion,
                             baseline_psnr=ev.baseline_psnr, trace=trace)


def calibrate(scene, cameras: Sequence[Camera], target_drop: float, cfg: RenderConfig, *,
              n_views: int = 16, seed: int = 0, criterion: str = "mean",
              baseline_psnr: float = DEFAULT_BASELINE_PSNR) -> CalibrationResult:
    """Sample calibration views, build the LUT, then search K."""
    calib, _ = sample_views(cameras, n_views, seed)
    lut = build_lut(scene, calib, cfg)
    result = search_k(scene, calib, target_drop, cfg, lut, criterion=criterion, baseline_psnr=baseline_psnr)
    result.seed = seed
    return result
