"""Command-line entry point: render, calibrate, compare, bench, analyze."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _backend, analysis, gsio
from .calibrate import (CalibrationError, CalibrationResult, DropEvaluator, build_lut, calibrate, sample_views,
                        search_k)
from .metrics import psnr
from .pairs import PairBudgetError
from .raster import STAGES, render
from .scene import LAYOUTS, Mode, RenderConfig, synth_cameras, synth_scene

log = logging.getLogger("adagscale")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CALIBRATION = 0, 2, 3, 4


class UsageError(Exception):
    pass


class MissingCalibration(Exception):
    pass


# ---------------------------------------------------------------- parsing helpers

def _parse_synth(spec: str) -> dict:
    """``synth:layout[,n=..][,width=..][,height=..][,views=..]``."""
    body = spec[len("synth:"):] if spec.startswith("synth:") else ""
    parts = [p for p in body.split(",") if p]
    opts = {"layout": "slab", "n": 5000, "width": 640, "height": 480, "views": 24}
    for p in parts:
        if "=" in p:
            key, val = p.split("=", 1)
            if key not in ("n", "width", "height", "views"):
                raise UsageError(f"unknown synthetic scene option {key!r}")
            try:
                opts[key] = int(float(val))
            except ValueError:
                raise UsageError(f"bad value for {key}: {val!r}") from None
        else:
            opts["layout"] = p
    if opts["layout"] not in LAYOUTS:
        raise UsageError(f"unknown layout {opts['layout']!r}; expected one of {', '.join(LAYOUTS)}")
    if opts["n"] < 1 or opts["width"] < 1 or opts["height"] < 1 or opts["views"] < 1:
        raise UsageError("synthetic scene sizes must be positive")
    return opts


def load_inputs(args):
    """Return ``(scene, cameras)`` from the --scene and --cameras flags."""
    synth = None
    if args.scene == "synth" or args.scene.startswith("synth:"):
        synth = _parse_synth(args.scene)
        scene, cams = synth_scene(args.seed, synth["n"], synth["layout"], n_views=synth["views"],
                                  width=synth["width"], height=synth["height"])
    else:
        scene = gsio.load_ply(args.scene)
        cams = None
    if args.cameras == "synth":
        if cams is None:
            cams = synth_cameras(np.random.default_rng([args.seed, 1]), 24, 640, 480)
    else:
        cams = gsio.load_cameras(args.cameras)
    if not cams:
        raise UsageError("no cameras")
    return scene, cams


def _floats(text: str, what: str) -> list[float]:
    """Comma list, or ``lo..hi[:step]`` (default step 0.1, inclusive)."""
    try:
        if ".." in text:
            rng, _, step = text.partition(":")
            lo, hi = (float(v) for v in rng.split(".."))
            step = float(step) if step else 0.1
            if step <= 0:
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return [round(lo + i * step, 10) for i in range(max(n, 0))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {what} list {text!r}") from None


def _modes(text: str) -> list[Mode]:
    try:
        return [Mode.parse(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as e:
        raise UsageError(str(e)) from None


def _config(args, mode: Mode = Mode.ELLIPSE, k: float = 0.0) -> RenderConfig:
    try:
        return RenderConfig(tile_size=args.tile_size, thread_count=args.threads, mode=mode, k=k)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _adagscale_params(args, scene, cams, cfg: RenderConfig):
    """Resolve ``(k, lut)`` for adagscale mode from --calibration or --k."""
    if args.calibration:
        cal = CalibrationResult.from_json(Path(args.calibration).read_text())
        return cal.k, cal.lut
    if args.k is None:
        raise MissingCalibration("adagscale mode needs --k or --calibration")
    calib, _ = sample_views(cams, args.views, args.seed)
    return args.k, build_lut(scene, calib, cfg)


def _adagscale_configs(args, scene, cams, base: RenderConfig):
    """Configurations for compare/bench: one per --k value or --target-drops entry."""
    calib, _ = sample_views(cams, args.views, args.seed)
    if args.calibration:
        cal = CalibrationResult.from_json(Path(args.calibration).read_text())
        return [base.replace(mode=Mode.ADAGSCALE, k=cal.k)], cal.lut
    if args.ks is None and args.target_drops is None:
        raise MissingCalibration("adagscale mode needs --k, --ks, --target-drops or --calibration")
    lut = build_lut(scene, calib, base)
    ks = list(args.ks or [])
    if args.target_drops:
        ev = DropEvaluator(scene, calib, base, lut)
        ks += [search_k(scene, calib, t, base, lut, evaluator=ev).k for t in args.target_drops]
    return [base.replace(mode=Mode.ADAGSCALE, k=float(k)) for k in ks], lut


def _configs(args, scene, cams):
    base = _config(args)
    cfgs, lut = [], None
    for m in _modes(args.modes):
        if m is Mode.ADAGSCALE:
            extra, lut = _adagscale_configs(args, scene, cams, base)
            cfgs += extra
        else:
            cfgs.append(base.replace(mode=m))
    return cfgs, lut


def _select_views(cams, count: Optional[int]):
    return list(cams) if count is None else list(cams)[:count]


# ---------------------------------------------------------------- commands

def cmd_render(args) -> int:
    scene, cams = load_inputs(args)
    mode = Mode.parse(args.mode)
    cfg = _config(args, mode)
    k, lut = 0.0, None
    if mode is Mode.ADAGSCALE:
        k, lut = _adagscale_params(args, scene, cams, cfg)
        cfg = cfg.replace(k=k)
    out = _out_dir(args)
    views = _select_views(cams, args.render_views)
    per_view = []
    totals = dict.fromkeys(STAGES, 0.0)
    pair_count = splat_count = 0
    for cam in views:
        rep = render(scene, cam, cfg, lut)
        name = f"{cam.name or f'view_{cam.id:03d}'}.{args.format}"
        gsio.write_image(rep.image, out / name)
        entry = {"id": cam.id, "image": name, "pair_count": rep.pair_count, "splat_count": rep.splat_count}
        if args.psnr_vs_ellipse:
            ref = render(scene, cam, cfg.replace(mode=Mode.ELLIPSE)).image
            entry["psnr_vs_ellipse"] = analysis.csv_value(psnr(rep.image, ref))
        per_view.append(entry)
        pair_count += rep.pair_count
        splat_count += rep.splat_count
        for st in STAGES:
            totals[st] += rep.stage_times[st]
    report = {"mode": mode.value, "k": float(k), "pair_count": pair_count, "splat_count": splat_count,
              "stage_times": totals, "views": per_view, "tile_size": cfg.tile_size}
    _write_text(out / "report.json", _dumps(report))
    print(f"rendered {len(views)} view(s): {pair_count} pairs")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    scene, cams = load_inputs(args)
    if args.target_drop is None or args.target_drop < 0:
        raise UsageError("--target-drop must be a non-negative number")
    cfg = _config(args)
    result = calibrate(scene, cams, args.target_drop, cfg, n_views=args.views, seed=args.seed,
                       criterion=args.criterion)
    out = _out_dir(args)
    _write_text(out / "calibration.json", result.to_json())
    _, held = sample_views(cams, args.views, args.seed)
    msg = f"k={result.k!r} achieved_drop={result.achieved_drop!r}"
    if held and args.held_out:
        held_drop = DropEvaluator(scene, held, cfg, result.lut, criterion=args.criterion).drop(result.k)
        msg += f" held_out_drop={held_drop!r}"
    print(msg)
    return EXIT_OK


def _csv(out: Path, name: str, columns, rows) -> None:
    path = out / name
    gsio.write_csv(path, columns, [[analysis.csv_value(r[c] if isinstance(r, dict) else r[i])
                                    for i, c in enumerate(columns)] for r in rows])
    log.info("wrote %s", path)


def cmd_compare(args) -> int:
    scene, cams = load_inputs(args)
    cfgs, lut = _configs(args, scene, cams)
    rows = analysis.pair_report(scene, _select_views(cams, args.eval_views), cfgs, lut)
    _csv(_out_dir(args), "compare.csv", analysis.PAIR_COLUMNS, rows)
    for r in rows:
        print(f"{r['mode']:>9} K={r['K']:<10.4g} pairs={r['pair_count']:<9d} "
              f"reduction={r['reduction_vs_ellipse_pct']:6.2f}% drop={r['psnr_drop']:.4f} dB")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repeats < 5:
        raise UsageError("--repeats must be at least 5")
    scene, cams = load_inputs(args)
    cfgs, lut = _configs(args, scene, cams)
    backends = [b.strip() for b in args.backends.split(",")] if args.backends else _backend.available()
    for b in backends:
        if b not in _backend.available():
            raise UsageError(f"backend {b!r} is not available")
    rows = analysis.bench(scene, _select_views(cams, args.eval_views), cfgs, lut,
                          repeats=args.repeats, backends=backends)
    _csv(_out_dir(args), "bench.csv", analysis.BENCH_COLUMNS, rows)
    for r in rows:
        print(f"{r['backend']:>7} {r['mode']:>9} K={r['K']:<10.4g} median total {r['median_total']:.4f} s")
    return EXIT_OK


def cmd_analyze(args) -> int:
    scene, cams = load_inputs(args)
    orderings = [o.strip().lower() for o in args.orderings.split(",") if o.strip()]
    for o in orderings:
        if o not in analysis.ORDERINGS:
            raise UsageError(f"unknown ordering {o!r}")
    fractions = _floats(args.fractions, "fraction")
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise UsageError("skip fractions must lie in [0, 1]")
    views = _select_views(cams, args.eval_views)
    cfg = _config(args)
    out = _out_dir(args)
    rows = analysis.skip_experiment(scene, views, fractions, orderings, cfg)
    _csv(out, "skip.csv", analysis.SKIP_COLUMNS, rows)
    prof = analysis.contribution_profile(scene, views, cfg)
    _csv(out, "profile.csv", analysis.PROFILE_COLUMNS, prof.rows())
    print(f"{len(rows)} skip rows, {len(prof)} profile bins")
    return EXIT_OK


# ---------------------------------------------------------------- argument parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True, help="PLY path or synth:layout[,n=N,width=W,height=H,views=V]")
    p.add_argument("--cameras", default="synth", help="camera JSON path or 'synth'")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tile-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=16, help="calibration view count")


def _configs_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modes", default="aabb,obb,ellipse")
    p.add_argument("--ks", type=lambda s: _floats(s, "K"), default=None)
    p.add_argument("--target-drops", type=lambda s: _floats(s, "target drop"), default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--eval-views", type=int, default=None, help="evaluate only the first N cameras")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adagscale", description="Tile-footprint-adaptive Gaussian splat renderer")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render views to images plus a report")
    _common(p)
    p.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--render-views", type=int, default=1, help="render the first N cameras")
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--psnr-vs-ellipse", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("calibrate", help="search K for a target quality drop")
    _common(p)
    p.add_argument("--target-drop", type=float, required=True)
    p.add_argument("--criterion", choices=("mean", "worst"), default="mean")
    p.add_argument("--held-out", action="store_true", help="also report the drop on views not used")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="pair counts, reduction and drop per configuration")
    _common(p)
    _configs_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="median stage times over repeated renders")
    _common(p)
    _configs_flags(p)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--backends", default=None, help="comma list of kernel backends (default: all available)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="contribution-skipping experiment and distance profile")
    _common(p)
    p.add_argument("--orderings", default="exact,maxt,tupper")
    p.add_argument("--fractions", default="0.1..0.9")
    p.add_argument("--eval-views", type=int, default=2)
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1 or args.tile_size < 1 or args.views < 1:
        print("error: --threads, --tile-size and --views must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MissingCalibration as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (OSError, ValueError, KeyError, json.JSONDecodeError, gsio.PlyFormatError,
            gsio.CameraFormatError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_IO
    except (CalibrationError, PairBudgetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
