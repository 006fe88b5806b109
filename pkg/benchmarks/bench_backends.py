"""Compiled vs numpy kernels: median wall time per pipeline stage.

    python3 benchmarks/bench_backends.py [--n 20000] [--width 320] [--height 240] [--repeats 5]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from adagscale import _backend
from adagscale.pairs import TileGrid, generate_pairs
from adagscale.preprocess import preprocess_view
from adagscale.raster import rasterize
from adagscale.scene import Mode, RenderConfig, synth_scene
from adagscale.sorting import sort_pairs


def time_stages(scene, cam, cfg, repeats):
    splats = preprocess_view(scene, cam, cfg)
    grid = TileGrid(cam.width, cam.height, cfg.tile_size)
    out = {"pair_gen": [], "sort": [], "raster": []}
    image = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        pairs = generate_pairs(splats, grid, cfg.mode)
        t1 = time.perf_counter()
        sp = sort_pairs(pairs, grid.n_tiles)
        t2 = time.perf_counter()
        image = rasterize(sp, splats, grid, cfg)[0]
        t3 = time.perf_counter()
        out["pair_gen"].append(t1 - t0)
        out["sort"].append(t2 - t1)
        out["raster"].append(t3 - t2)
    return {k: statistics.median(v) for k, v in out.items()}, image, len(pairs)


def time_sort(n, repeats, seed=0):
    rng = np.random.default_rng(seed)
    keys = (rng.integers(0, 4096, n, dtype=np.uint64) << np.uint64(32)) | rng.integers(0, 2**31, n, dtype=np.uint64)
    vals = np.arange(n, dtype=np.int32)
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _backend.kernels.radix_sort_pairs(keys, vals)
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--layout", default="slab")
    ap.add_argument("--width", type=int, default=320)
    ap.add_argument("--height", type=int, default=240)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--sort-pairs", type=int, default=1_000_000)
    args = ap.parse_args(argv)

    scene, cams = synth_scene(0, args.n, args.layout, n_views=1, width=args.width, height=args.height)
    cfg = RenderConfig(mode=Mode.ELLIPSE)
    backends = _backend.available()
    images = {}
    print(f"{args.n} splats, {args.width}x{args.height}, median of {args.repeats}")
    print(f"{'backend':>8} {'pairs':>9} {'pair_gen':>10} {'sort':>10} {'raster':>10} {'sort 1e6':>10}")
    rows = {}
    for name in backends:
        with _backend.use(name):
            stages, images[name], n_pairs = time_stages(scene, cams[0], cfg, args.repeats)
            sort_t = time_sort(args.sort_pairs, max(1, args.repeats // 2))
        rows[name] = stages
        print(f"{name:>8} {n_pairs:>9d} {stages['pair_gen']:>10.4f} {stages['sort']:>10.4f} "
              f"{stages['raster']:>10.4f} {sort_t:>10.4f}")
    if len(backends) == 2:
        diff = float(np.abs(images["cython"] - images["python"]).max())
        speed = sum(rows["python"].values()) / sum(rows["cython"].values())
        print(f"max image difference {diff:.3g}; compiled kernels {speed:.1f}x faster end to end")


if __name__ == "__main__":
    main()
