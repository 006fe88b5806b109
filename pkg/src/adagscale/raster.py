"""Tile rasterization and the end-to-end render pipeline."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .pairs import TileGrid, generate_pairs
from .preprocess import SplatBatch, SplatView, preprocess_view
from .scene import Camera, GaussianSet, RenderConfig
from .sorting import SortedPairs, sort_pairs

STAGES = ("preprocess", "pair_gen", "sort", "raster")


@dataclass(frozen=True, eq=False)
class Contributions:
    """One record per blend event, ordered by tile, then pixel, then depth."""

    pixel: np.ndarray         # flat index y * width + x
    gaussian: np.ndarray      # scene index of the blended Gaussian
    alpha: np.ndarray
    contribution: np.ndarray  # alpha * T
    width: int

    def __len__(self) -> int:
        return int(self.pixel.size)


@dataclass(frozen=True)
class SkipRule:
    """Drop blends whose ordering metric is below ``cutoff``.

    With ``weights`` unset the metric is the exact contribution α·T (T of the
    unskipped render); otherwise it is α·weights[gaussian].
    """

    cutoff: float
    weights: Optional[np.ndarray] = None


@dataclass(eq=False)
class RenderReport:
    image: np.ndarray
    pair_count: int
    splat_count: int
    stage_times: dict = field(default_factory=dict)
    max_t: Optional[np.ndarray] = None
    contributions: Optional[Contributions] = None
    blend_count: int = 0
    final_t: Optional[np.ndarray] = None
    splats: Optional[SplatBatch] = None
    pairs_per_splat: Optional[np.ndarray] = None


def alpha_at(s: SplatView, pixel, alpha_clamp: float = 0.99) -> float:
    """Opacity of ``s`` at the center of integer pixel ``(px, py)``, clamped."""
    d = np.asarray(pixel, dtype=np.float64) + 0.5 - np.asarray(s.mean2d, dtype=np.float64)
    q = float(d @ np.asarray(s.inv_cov, dtype=np.float64) @ d)
    return min(alpha_clamp, s.opacity * math.exp(-0.5 * q))


def _run_tiles(tiles, sorted_pairs: SortedPairs, splats: SplatBatch, grid: TileGrid, cfg: RenderConfig,
               image, final_t, maxt, record_maxt, record_events, skip_mode, skip_weight, skip_cutoff):
    return _backend.kernels.raster_tiles(
        np.ascontiguousarray(tiles, dtype=np.int64), sorted_pairs.ranges, sorted_pairs.splat_index,
        splats.mean2d, splats.conic, splats.opacity, splats.rgb,
        grid.width, grid.height, grid.tile_size,
        cfg.alpha_threshold, cfg.transmittance_floor, cfg.alpha_clamp,
        np.asarray(cfg.background, dtype=np.float64),
        image, final_t, maxt, record_maxt, record_events, skip_mode, skip_weight, skip_cutoff,
    )


def rasterize(sorted_pairs: SortedPairs, splats: SplatBatch, grid: TileGrid, cfg: RenderConfig, *,
              record_max_t: bool = False, record_contributions: bool = False,
              skip: Optional[SkipRule] = None, tile_order: Optional[np.ndarray] = None):
    """Blend every tile; returns ``(image, final_t, max_t, events, n_blend)``.

    ``max_t`` and event splat indices refer to positions in ``splats``.
    Tiles are split into contiguous chunks over ``cfg.thread_count`` workers;
    each chunk writes disjoint pixels, per-chunk ``max_t`` arrays merge by
    elementwise maximum and event streams concatenate in tile order.
    """
    image = np.zeros((grid.height, grid.width, 3))
    final_t = np.ones((grid.height, grid.width))
    n = len(splats)
    skip_mode, skip_weight, skip_cutoff = 0, np.zeros(0), 0.0
    if skip is not None:
        skip_cutoff = float(skip.cutoff)
        if skip.weights is None:
            skip_mode = 1
        else:
            skip_mode = 2
            skip_weight = np.ascontiguousarray(np.asarray(skip.weights, dtype=np.float64)[splats.source_id])
    tiles = np.arange(grid.n_tiles, dtype=np.int64) if tile_order is None else np.asarray(tile_order, np.int64)
    n_chunks = 1 if cfg.thread_count == 1 else min(len(tiles), 4 * cfg.thread_count)
    chunks = np.array_split(tiles, max(n_chunks, 1))
    maxts = [np.zeros(n if record_max_t else 0) for _ in chunks]

    def work(i):
        return _run_tiles(chunks[i], sorted_pairs, splats, grid, cfg, image, final_t, maxts[i],
                          record_max_t, record_contributions, skip_mode, skip_weight, skip_cutoff)

    if len(chunks) == 1:
        results = [work(0)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.thread_count) as pool:
            results = list(pool.map(work, range(len(chunks))))
    n_blend = sum(int(r[0]) for r in results)
    max_t = np.maximum.reduce(maxts) if record_max_t else None
    events = None
    if record_contributions:
        parts = [r[1] for r in results]
        events = tuple(np.concatenate([p[k] for p in parts]) for k in range(4))
    return image, final_t, max_t, events, n_blend


def raster_tile(span: np.ndarray, splats: SplatBatch, tile: int, grid: TileGrid, cfg: RenderConfig):
    """Blend one tile from an already depth-ordered span of splat indices.

    Returns the tile's colors and final transmittance, each cropped to the tile.
    """
    span = np.ascontiguousarray(span, dtype=np.int32)
    ranges = np.zeros((grid.n_tiles, 2), dtype=np.int64)
    ranges[tile] = (0, span.size)
    sp = SortedPairs(np.zeros(span.size, np.uint64), span, ranges)
    image = np.zeros((grid.height, grid.width, 3))
    final_t = np.ones((grid.height, grid.width))
    _run_tiles(np.array([tile]), sp, splats, grid, cfg, image, final_t, np.zeros(0),
               False, False, 0, np.zeros(0), 0.0)
    x0, x1, y0, y1 = grid.tile_bounds(tile)
    return image[y0:y1, x0:x1], final_t[y0:y1, x0:x1]


def render_splats(splats: SplatBatch, cam: Camera, cfg: RenderConfig, *, n_gaussians: Optional[int] = None,
                  record_max_t: bool = False, record_contributions: bool = False,
                  skip: Optional[SkipRule] = None, preprocess_time: float = 0.0,
                  tile_order: Optional[np.ndarray] = None) -> RenderReport:
    """Pair generation, sorting and rasterization for already-preprocessed splats."""
    grid = TileGrid(cam.width, cam.height, cfg.tile_size)
    t0 = time.perf_counter()
    pairs = generate_pairs(splats, grid, cfg.mode, tau=cfg.alpha_threshold, max_pairs=cfg.max_pairs,
                           aabb_fixed_radius=cfg.aabb_fixed_radius)
    t1 = time.perf_counter()
    sorted_pairs = sort_pairs(pairs, grid.n_tiles)
    t2 = time.perf_counter()
    image, final_t, max_t, events, n_blend = rasterize(
        sorted_pairs, splats, grid, cfg, record_max_t=record_max_t,
        record_contributions=record_contributions, skip=skip, tile_order=tile_order)
    t3 = time.perf_counter()

    scene_max_t = None
    if record_max_t:
        size = n_gaussians if n_gaussians is not None else int(splats.source_id.max(initial=-1)) + 1
        scene_max_t = np.zeros(size)
        scene_max_t[splats.source_id] = max_t
    contributions = None
    if record_contributions:
        pix, spl, alp, con = events
        contributions = Contributions(pix, splats.source_id[spl], alp, con, cam.width)
    return RenderReport(
        image=image, pair_count=len(pairs), splat_count=len(splats),
        stage_times={"preprocess": preprocess_time, "pair_gen": t1 - t0, "sort": t2 - t1, "raster": t3 - t2},
        max_t=scene_max_t, contributions=contributions, blend_count=n_blend, final_t=final_t,
        splats=splats, pairs_per_splat=pairs.counts,
    )


def render(scene, cam: Camera, cfg: RenderConfig, lut=None, **kwargs) -> RenderReport:
    """Preprocess, generate pairs, sort and rasterize one view."""
    scene = GaussianSet.from_gaussians(scene)
    t0 = time.perf_counter()
    splats = preprocess_view(scene, cam, cfg, lut)
    t1 = time.perf_counter()
    return render_splats(splats, cam, cfg, n_gaussians=len(scene), preprocess_time=t1 - t0, **kwargs)
