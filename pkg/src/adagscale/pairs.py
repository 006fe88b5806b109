"""Gaussian-tile pair generation under the four intersection tests."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _backend
from .preprocess import SplatBatch, SplatView
from .scene import Mode

# Relative widening of every tested level set. Keeps pixels that sit exactly on
# the α = th contour inside the footprint despite rounding in log/exp.
RADIUS_SLACK = 1e-7

_MODE_CODE = {Mode.AABB: 0, Mode.OBB: 1, Mode.ELLIPSE: 2, Mode.ADAGSCALE: 2}


class PairBudgetError(MemoryError):
    """Raised when a view would generate more pairs than the configured budget."""


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    tile_size: int = 16

    @property
    def tiles_x(self) -> int:
        return -(-self.width // self.tile_size)

    @property
    def tiles_y(self) -> int:
        return -(-self.height // self.tile_size)

    @property
    def n_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile_of(self, px: int, py: int) -> int:
        return (py // self.tile_size) * self.tiles_x + px // self.tile_size

    def tile_bounds(self, tile: int) -> tuple[int, int, int, int]:
        """Pixel bounds ``(x0, x1, y0, y1)`` of a tile, end-exclusive."""
        ty, tx = divmod(tile, self.tiles_x)
        ts = self.tile_size
        return tx * ts, min((tx + 1) * ts, self.width), ty * ts, min((ty + 1) * ts, self.height)


class GaussianTilePair(NamedTuple):
    key: int
    splat_index: int


@dataclass(frozen=True, eq=False)
class PairList:
    keys: np.ndarray          # uint64
    splat_index: np.ndarray   # int32
    counts: np.ndarray        # int64, tiles per splat

    def __len__(self) -> int:
        return int(self.keys.size)

    def __iter__(self):
        for k, s in zip(self.keys.tolist(), self.splat_index.tolist()):
            yield GaussianTilePair(k, s)

    @property
    def tiles(self) -> np.ndarray:
        return (self.keys >> np.uint64(32)).astype(np.int64)


def pack_key(tile: int, depth: float) -> int:
    if not depth > 0:
        raise ValueError("depth must be positive")
    (bits,) = struct.unpack("<I", struct.pack("<f", depth))
    return (int(tile) << 32) | bits


def unpack_key(key: int) -> tuple[int, float]:
    key = int(key)
    (depth,) = struct.unpack("<f", struct.pack("<I", key & 0xFFFFFFFF))
    return key >> 32, depth


def _eig2(cov: np.ndarray):
    a, b, c = cov[..., 0], cov[..., 1], cov[..., 2]
    mid = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    lam1 = mid + rad
    lam2 = np.maximum(mid - rad, 0.0)
    return lam1, lam2, np.cos(theta), np.sin(theta)


def effective_radius(opacity, th, cov2d) -> tuple[float, float]:
    """Mahalanobis and pixel radius of the ``α = th`` contour of a splat with peak ``opacity``."""
    if not opacity > th:
        raise ValueError("opacity must exceed the threshold")
    cov2d = np.asarray(cov2d, dtype=np.float64)
    packed = np.array([cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]]) if cov2d.shape == (2, 2) else cov2d
    r = math.sqrt(2.0 * math.log(opacity / th))
    lam1 = float(_eig2(packed)[0])
    return r, r * math.sqrt(lam1)


def _geometry(splats: SplatBatch, mode: Mode, tau: float, aabb_fixed_radius: bool):
    lam1, lam2, ux, uy = _eig2(splats.cov2d)
    eig = np.ascontiguousarray(np.column_stack([lam1, lam2, ux, uy]))
    th = splats.th if mode is Mode.ADAGSCALE else np.full(len(splats), tau)
    radius = np.sqrt(2.0 * np.log(splats.opacity / th)) * (1.0 + RADIUS_SLACK)
    if mode is Mode.AABB and aabb_fixed_radius:
        rbox = 3.0 * np.sqrt(lam1)
    else:
        rbox = radius * np.sqrt(lam1)
    return eig, np.ascontiguousarray(radius), np.ascontiguousarray(rbox)


def intersect_tiles(s: SplatView | SplatBatch, grid: TileGrid, mode: Mode | str,
                    tau: float = 1.0 / 255.0, aabb_fixed_radius: bool = False) -> list[int]:
    """Row-major list of tiles a single splat intersects under ``mode``."""
    batch = s if isinstance(s, SplatBatch) else SplatBatch.from_views([s])
    if len(batch) != 1:
        raise ValueError("intersect_tiles expects a single splat")
    pairs = generate_pairs(batch, grid, mode, tau=tau, aabb_fixed_radius=aabb_fixed_radius)
    return pairs.tiles.tolist()


def generate_pairs(splats: SplatBatch, grid: TileGrid, mode: Mode | str, *, tau: float = 1.0 / 255.0,
                   max_pairs: int | None = None, aabb_fixed_radius: bool = False) -> PairList:
    """Pairs in splat order, tiles row-major within a splat.

    Counting runs first so the output can be laid out by prefix sum.
    """
    mode = Mode.parse(mode)
    n = len(splats)
    if n == 0:
        return PairList(np.zeros(0, np.uint64), np.zeros(0, np.int32), np.zeros(0, np.int64))
    eig, radius, rbox = _geometry(splats, mode, tau, aabb_fixed_radius)
    code = _MODE_CODE[mode]
    args = (splats.mean2d, splats.conic, eig, radius, rbox, code, grid.width, grid.height, grid.tile_size)
    counts = np.asarray(_backend.kernels.count_tiles(*args))
    total = int(counts.sum())
    if max_pairs is not None and total > max_pairs:
        raise PairBudgetError(f"{total} Gaussian-tile pairs exceed the budget of {max_pairs}")
    offsets = np.cumsum(counts) - counts
    depth32 = np.ascontiguousarray(splats.depth, dtype=np.float32)
    keys, vals = _backend.kernels.emit_tiles(*args, depth32, np.ascontiguousarray(offsets, np.int64), total)
    return PairList(np.asarray(keys), np.asarray(vals), counts)
