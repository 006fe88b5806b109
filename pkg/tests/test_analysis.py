import math

import numpy as np
import pytest

from adagscale import analysis
from adagscale.analysis import contribution_profile, pair_report, psnr, skip_experiment
from adagscale.metrics import psnr_drop
from adagscale.raster import render
from adagscale.scene import GaussianSet, Mode, RenderConfig, synth_scene

from conftest import camera, gaussian_set

CFG = RenderConfig()


def test_psnr_examples():
    a = np.random.default_rng(0).uniform(size=(4, 5, 3))
    assert psnr(a, a) == math.inf
    assert analysis.csv_value(psnr(a, a)) == 100.0
    b = np.clip(a, 0, 0.9)
    assert psnr(np.full((3, 3, 3), 0.6), np.full((3, 3, 3), 0.5)) == pytest.approx(20.0)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, a[:2])


def test_psnr_drop_properties():
    rng = np.random.default_rng(1)
    ref = rng.uniform(size=(8, 8, 3))
    assert psnr_drop(ref, ref) == 0.0
    near = ref + 0.001
    far = ref + 0.01
    assert 0 < psnr_drop(near, ref) < psnr_drop(far, ref)
    gt = np.clip(ref + rng.normal(0, 0.03, ref.shape), 0, 1)
    assert psnr_drop(ref, ref, gt) == 0.0
    assert psnr_drop(far, ref, gt) == pytest.approx(psnr(ref, gt) - psnr(far, gt))


@pytest.fixture(scope="module")
def skip_rows():
    scene, cams = synth_scene(0, 5000, "slab", n_views=1, width=160, height=120)
    fr = [0.0] + [round(0.1 * i, 1) for i in range(1, 10)] + [1.0]
    return scene, cams, fr, skip_experiment(scene, cams, fr, cfg=CFG)


def test_skip_shape(skip_rows):
    _, _, fr, rows = skip_rows
    assert len(rows) == 3 * len(fr)
    assert [r[0] for r in rows[:len(fr)]] == ["exact"] * len(fr)


def test_skip_zero_is_lossless(skip_rows):
    _, _, _, rows = skip_rows
    assert all(r[2] == math.inf for r in rows if r[1] == 0.0)


def test_skip_all_is_background(skip_rows):
    scene, cams, _, rows = skip_rows
    ref = render(scene, cams[0], CFG).image
    expect = psnr(np.zeros_like(ref), ref)
    for r in rows:
        if r[1] == 1.0:
            assert r[2] == pytest.approx(expect, rel=1e-12)


def test_skip_monotone_and_ordered(skip_rows):
    _, _, fr, rows = skip_rows
    table = {(o, f): p for o, f, p in rows}
    for o in analysis.ORDERINGS:
        vals = [table[(o, f)] for f in fr]
        assert all(b <= a for a, b in zip(vals, vals[1:])), o
    for f in fr:
        assert table[("exact", f)] >= table[("maxt", f)] - 1.0
        assert table[("maxt", f)] >= table[("tupper", f)] - 1.0


def test_skip_bad_args():
    scene, cams = synth_scene(0, 50, n_views=1, width=32, height=32)
    with pytest.raises(ValueError):
        skip_experiment(scene, cams, [1.5])
    with pytest.raises(ValueError):
        skip_experiment(scene, cams, [0.5], ["random"])


def test_profile_single_splat_analytic():
    f, z = 200.0, 10.0
    sigma_px = 40.0
    s = math.sqrt(sigma_px ** 2 - 0.3) * z / f
    opacity = 0.9
    scene = gaussian_set([[0, 0, z]], [s, s, s], [opacity])
    cam = camera(320, 320, f)
    prof = contribution_profile(scene, [cam], CFG)
    r_cut = math.sqrt(2 * math.log(opacity / CFG.alpha_threshold))
    assert len(prof) >= 19
    for d, mean in zip(prof.distance, prof.mean_contribution):
        i = int(np.searchsorted(prof.edges, d)) - 1
        a, b = prof.edges[i], min(prof.edges[i + 1], r_cut)
        oracle = opacity * (math.exp(-a * a / 2) - math.exp(-b * b / 2)) / ((b * b - a * a) / 2)
        assert mean == pytest.approx(oracle, rel=0.05)


def test_profile_empty():
    prof = contribution_profile(GaussianSet.empty(), [camera()], CFG)
    assert len(prof) == 0 and prof.rows() == []


@pytest.mark.parametrize("layout", ["slab", "cloud", "depth-ramp"])
def test_profile_trend(layout):
    scene, cams = synth_scene(0, 2000, layout, n_views=1, width=96, height=72)
    prof = contribution_profile(scene, cams, CFG)
    assert prof.mean_contribution[-1] < prof.mean_contribution[0]
    assert len(prof.edges) == 21


def pair_rows():
    scene, cams = synth_scene(0, 1500, "slab", n_views=2, width=160, height=120)
    cfgs = [CFG.replace(mode=m) for m in ("aabb", "obb", "ellipse")]
    cfgs += [CFG.replace(mode=Mode.ADAGSCALE, k=k) for k in (0.0, 2.0, 8.0, 32.0)]
    return pair_report(scene, cams, cfgs)


def test_pair_report():
    rows = pair_rows()
    assert list(rows[0]) == list(analysis.PAIR_COLUMNS)
    by = [(r["mode"], r["K"]) for r in rows]
    ell = rows[by.index(("ellipse", 0.0))]
    assert ell["reduction_vs_ellipse_pct"] == 0.0 and ell["psnr_drop"] == 0.0
    k0 = rows[by.index(("adagscale", 0.0))]
    assert k0["reduction_vs_ellipse_pct"] == 0.0 and k0["psnr_drop"] == 0.0
    assert k0["pair_count"] == ell["pair_count"]
    ada = [r for r in rows if r["mode"] == "adagscale"]
    red = [r["reduction_vs_ellipse_pct"] for r in ada]
    assert red == sorted(red) and red[-1] > 0
    for r in rows[:3]:
        assert r["psnr_drop"] == 0.0
    assert rows[0]["pair_count"] >= rows[1]["pair_count"] >= rows[2]["pair_count"]


def test_pair_report_reproducible():
    strip = lambda rows: [(r["mode"], r["K"], r["pair_count"], r["reduction_vs_ellipse_pct"], r["psnr_drop"])
                          for r in rows]
    assert strip(pair_rows()) == strip(pair_rows())


def test_bench_rows():
    scene, cams = synth_scene(0, 300, "slab", n_views=1, width=64, height=48)
    rows = analysis.bench(scene, cams, [CFG], repeats=5)
    assert len(rows) == 1 and rows[0]["repeats"] == 5
    for st in ("preprocess", "pair_gen", "sort", "raster"):
        assert rows[0][f"median_{st}"] > 0
    with pytest.raises(ValueError):
        analysis.bench(scene, cams, [CFG], repeats=0)
