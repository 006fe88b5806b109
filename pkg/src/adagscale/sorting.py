"""Sorting of Gaussian-tile pairs into per-tile, front-to-back spans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .pairs import PairList


@dataclass(frozen=True, eq=False)
class SortedPairs:
    keys: np.ndarray
    splat_index: np.ndarray
    ranges: np.ndarray  # (n_tiles, 2) half-open spans into keys

    def __len__(self) -> int:
        return int(self.keys.size)

    def span(self, tile: int) -> np.ndarray:
        start, end = self.ranges[tile]
        return self.splat_index[start:end]


def tile_ranges(sorted_keys: np.ndarray, n_tiles: int) -> np.ndarray:
    tiles = (np.asarray(sorted_keys, dtype=np.uint64) >> np.uint64(32)).astype(np.int64)
    edges = np.arange(n_tiles + 1)
    bounds = np.searchsorted(tiles, edges, side="left")
    return np.ascontiguousarray(np.column_stack([bounds[:-1], bounds[1:]]).astype(np.int64))


def sort_pairs(pairs: PairList, n_tiles: int) -> SortedPairs:
    keys, vals = _backend.kernels.radix_sort_pairs(pairs.keys, pairs.splat_index)
    keys = np.asarray(keys)
    vals = np.asarray(vals)
    if keys.size and int(keys[-1] >> np.uint64(32)) >= n_tiles:
        raise ValueError("pair key references a tile outside the grid")
    return SortedPairs(keys, vals, tile_ranges(keys, n_tiles))
