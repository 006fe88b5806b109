"""Quality and workload studies built on the renderer: skipping, profiles, pair tables."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _backend
from .calibrate import TUpperLUT, build_lut
from .metrics import PSNR_CAP, mse, psnr, psnr_drop
from .preprocess import apply_threshold, preprocess_view, project_view
from .raster import STAGES, RenderReport, SkipRule, render_splats
from .scene import Camera, GaussianSet, Mode, RenderConfig, covariances_3d

__all__ = [
    "psnr", "ORDERINGS", "SKIP_COLUMNS", "PROFILE_COLUMNS", "PAIR_COLUMNS", "BENCH_COLUMNS",
    "skip_experiment", "contribution_profile", "pair_report", "bench", "csv_value",
]

ORDERINGS = ("exact", "maxt", "tupper")
SKIP_COLUMNS = ("ordering", "skip_fraction", "psnr")
PROFILE_COLUMNS = ("distance", "mean_contribution", "count")
PAIR_COLUMNS = ("mode", "K", "pair_count", "reduction_vs_ellipse_pct", "psnr_drop",
                "time_preprocess", "time_pair_gen", "time_sort", "time_raster")
BENCH_COLUMNS = ("backend", "mode", "K", "pair_count", "repeats",
                 "median_preprocess", "median_pair_gen", "median_sort", "median_raster", "median_total")


def csv_value(v):
    """Cap infinite PSNR values for tabular output."""
    if isinstance(v, float) and math.isinf(v):
        return PSNR_CAP if v > 0 else -PSNR_CAP
    return v


class _Views:
    """Per-view lossless projections of one scene, computed once."""

    def __init__(self, scene, views: Sequence[Camera], cfg: RenderConfig):
        self.scene = GaussianSet.from_gaussians(scene)
        self.views = list(views)
        self.cfg = cfg.replace(mode=Mode.ELLIPSE)
        cov3d = covariances_3d(self.scene.scales, self.scene.rotations) if len(self.scene) else None
        self.splats = []
        self.preprocess_time = []
        for cam in self.views:
            t0 = time.perf_counter()
            self.splats.append(project_view(self.scene, cam, self.cfg, cov3d))
            self.preprocess_time.append(time.perf_counter() - t0)

    def render(self, i: int, cfg: Optional[RenderConfig] = None, lut=None, **kw) -> RenderReport:
        cfg = cfg or self.cfg
        t0 = time.perf_counter()
        splats = apply_threshold(self.splats[i], cfg, lut)
        extra = time.perf_counter() - t0
        return render_splats(splats, self.views[i], cfg, n_gaussians=len(self.scene),
                             preprocess_time=self.preprocess_time[i] + extra, **kw)


def _quantile_cutoff(metric: np.ndarray, fraction: float) -> float:
    """Metric value below which ``round(fraction · n)`` of the sorted events fall."""
    if fraction <= 0.0:
        return -math.inf
    if fraction >= 1.0:
        return math.inf
    ordered = np.sort(metric, kind="stable")
    idx = int(round(fraction * ordered.size))
    return math.inf if idx >= ordered.size else float(ordered[idx])


def skip_experiment(scene, views: Sequence[Camera], fractions: Sequence[float],
                    orderings: Sequence[str] = ORDERINGS, cfg: Optional[RenderConfig] = None,
                    lut: Optional[TUpperLUT] = None) -> list[tuple[str, float, float]]:
    """PSNR against the unskipped render when the lowest-ranked blends are skipped.

    For every view, pass 1 records all blend events and the per-Gaussian max
    transmittance; the cutoff is the ordering metric at the requested fraction
    of the sorted event stream. Pass 2 re-renders skipping any blend whose
    metric falls below it. PSNR pools the squared error over all views.
    Rows are ``(ordering, fraction, psnr)`` in the order requested.
    """
    cfg = cfg or RenderConfig()
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"skip fraction {f} outside [0, 1]")
    orderings = [o.lower() for o in orderings]
    for o in orderings:
        if o not in ORDERINGS:
            raise ValueError(f"unknown ordering {o!r}")
    vs = _Views(scene, views, cfg)
    if lut is None and "tupper" in orderings and vs.views:
        lut = build_lut(vs.scene, vs.views, vs.cfg)

    err = {(o, f): [] for o in orderings for f in fractions}
    for i in range(len(vs.views)):
        ref = vs.render(i, record_max_t=True, record_contributions=True)
        ev = ref.contributions
        splats = vs.splats[i]
        for o in orderings:
            weights = None
            if o == "exact":
                metric = ev.contribution
            else:
                if o == "maxt":
                    weights = ref.max_t
                else:
                    weights = np.ones(len(vs.scene))
                    weights[splats.source_id] = lut.lookup(splats.depth)
                metric = ev.alpha * weights[ev.gaussian]
            for f in fractions:
                cutoff = _quantile_cutoff(metric, f)
                if cutoff == -math.inf:
                    img = ref.image
                else:
                    img = vs.render(i, skip=SkipRule(cutoff, weights)).image
                err[(o, f)].append(mse(img, ref.image))

    rows = []
    for o in orderings:
        for f in fractions:
            m = float(np.mean(err[(o, f)])) if err[(o, f)] else 0.0
            rows.append((o, float(f), math.inf if m == 0.0 else 10.0 * math.log10(1.0 / m)))
    return rows


@dataclass(frozen=True)
class Profile:
    distance: np.ndarray          # bin centers, Mahalanobis units
    mean_contribution: np.ndarray
    count: np.ndarray
    edges: np.ndarray

    def rows(self):
        return [(float(d), float(c), int(n)) for d, c, n in zip(self.distance, self.mean_contribution, self.count)]

    def __len__(self) -> int:
        return int(self.count.size)


def contribution_profile(scene, views: Sequence[Camera], cfg: Optional[RenderConfig] = None, *,
                         n_bins: int = 20, r_max: Optional[float] = None) -> Profile:
    """Mean α·T of all blend events, binned by Gaussian-pixel Mahalanobis distance.

    Bins span ``[0, r_max]`` with ``r_max`` defaulting to the radius at which a
    fully opaque splat reaches the blending threshold. Empty bins are dropped.
    """
    cfg = cfg or RenderConfig()
    if r_max is None:
        r_max = math.sqrt(2.0 * math.log(1.0 / cfg.alpha_threshold))
    edges = np.linspace(0.0, r_max, n_bins + 1)
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    vs = _Views(scene, views, cfg)
    for i in range(len(vs.views)):
        rep = vs.render(i, record_contributions=True)
        ev = rep.contributions
        if not len(ev):
            continue
        splats = rep.splats
        pos = np.full(len(vs.scene), -1, dtype=np.int64)
        pos[splats.source_id] = np.arange(len(splats))
        k = pos[ev.gaussian]
        py, px = np.divmod(ev.pixel, ev.width)
        dx = px + 0.5 - splats.mean2d[k, 0]
        dy = py + 0.5 - splats.mean2d[k, 1]
        a, b, c = splats.conic[k, 0], splats.conic[k, 1], splats.conic[k, 2]
        r = np.sqrt(np.maximum(a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, 0.0))
        idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n_bins - 1)
        sums += np.bincount(idx, weights=ev.contribution, minlength=n_bins)
        counts += np.bincount(idx, minlength=n_bins)
    keep = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Profile(centers[keep], sums[keep] / counts[keep], counts[keep], edges)


def pair_report(scene, views: Sequence[Camera], cfgs: Sequence[RenderConfig],
                lut: Optional[TUpperLUT] = None) -> list[dict]:
    """One row per configuration: pairs, reduction and drop against ELLIPSE, stage times.

    ``pair_count`` is summed over views; reduction, drop and times are view means.
    """
    vs = _Views(scene, views, cfgs[0] if cfgs else RenderConfig())
    if not vs.views:
        raise ValueError("pair_report needs at least one view")
    if lut is None and any(Mode.parse(c.mode) is Mode.ADAGSCALE for c in cfgs):
        lut = build_lut(vs.scene, vs.views, vs.cfg)
    base = [vs.render(i) for i in range(len(vs.views))]
    rows = []
    for cfg in cfgs:
        mode = Mode.parse(cfg.mode)
        reps = base if mode is Mode.ELLIPSE else \
            [vs.render(i, cfg, lut if mode is Mode.ADAGSCALE else None) for i in range(len(vs.views))]
        red, drops = [], []
        for rep, ref in zip(reps, base):
            red.append(0.0 if ref.pair_count == 0 else 100.0 * (1.0 - rep.pair_count / ref.pair_count))
            drops.append(psnr_drop(rep.image, ref.image))
        row = {
            "mode": mode.value,
            "K": float(cfg.k) if mode is Mode.ADAGSCALE else 0.0,
            "pair_count": int(sum(r.pair_count for r in reps)),
            "reduction_vs_ellipse_pct": float(np.mean(red)),
            "psnr_drop": float(np.mean(drops)),
        }
        for st in STAGES:
            row[f"time_{st}"] = float(np.mean([r.stage_times[st] for r in reps]))
        rows.append(row)
    return rows


def bench(scene, views: Sequence[Camera], cfgs: Sequence[RenderConfig], lut: Optional[TUpperLUT] = None, *,
          repeats: int = 5, backends: Optional[Sequence[str]] = None) -> list[dict]:
    """Median stage times over ``repeats`` full renders of every view, per backend and config."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    scene = GaussianSet.from_gaussians(scene)
    rows = []
    for name in backends or [_backend.BACKEND]:
        with _backend.use(name) as k:
            for cfg in cfgs:
                mode = Mode.parse(cfg.mode)
                samples = {st: [] for st in STAGES}
                totals = []
                pairs = 0
                for _ in range(repeats):
                    pairs = 0
                    acc = dict.fromkeys(STAGES, 0.0)
                    for cam in views:
                        t0 = time.perf_counter()
                        splats = preprocess_view(scene, cam, cfg, lut if mode is Mode.ADAGSCALE else None)
                        rep = render_splats(splats, cam, cfg, n_gaussians=len(scene),
                                            preprocess_time=time.perf_counter() - t0)
                        pairs += rep.pair_count
                        for st in STAGES:
                            acc[st] += rep.stage_times[st]
                    for st in STAGES:
                        samples[st].append(acc[st])
                    totals.append(sum(acc.values()))
                row = {"backend": k.BACKEND, "mode": mode.value,
                       "K": float(cfg.k) if mode is Mode.ADAGSCALE else 0.0,
                       "pair_count": pairs, "repeats": repeats}
                for st in STAGES:
                    row[f"median_{st}"] = statistics.median(samples[st])
                row["median_total"] = statistics.median(totals)
                rows.append(row)
    return rows
