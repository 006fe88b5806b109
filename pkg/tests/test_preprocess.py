import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adagscale.calibrate import TUpperLUT
from adagscale.preprocess import (SH_C0, apply_threshold, compute_th, eval_color, eval_sh, preprocess_view,
                                  project, project_view)
from adagscale.scene import Gaussian3D, Mode, RenderConfig, synth_scene

from conftest import camera, gaussian_set, splats

TAU = 1.0 / 255.0
CFG = RenderConfig()


def gauss(mean, s=0.1, opacity=0.5, sh=None):
    return Gaussian3D(np.asarray(mean, float), np.full(3, s), np.array([1.0, 0, 0, 0]), opacity,
                      np.zeros(3) if sh is None else sh)


def test_on_axis_projects_to_center():
    cam = camera(640, 480, 500.0)
    mean2d, cov, depth = project(gauss([0, 0, 5.0]), cam, CFG)
    assert np.allclose(mean2d, [320, 240]) and depth == 5.0


def test_on_axis_covariance_oracle():
    f, s, d = 500.0, 0.1, 5.0
    cam = camera(640, 480, f)
    _, cov, _ = project(gauss([0, 0, d], s), cam, CFG)
    j = np.array([[f / d, 0, 0], [0, f / d, 0]])
    oracle = j @ (s * s * np.eye(3)) @ j.T + 0.3 * np.eye(2)
    assert np.allclose(cov, oracle, rtol=1e-12)
    assert np.isclose(cov[0, 0], (f * s / d) ** 2 + 0.3)


def test_off_axis_jacobian_oracle():
    f, cam = 400.0, camera(640, 480, 400.0)
    g = Gaussian3D(np.array([0.7, -0.4, 4.0]), np.array([0.3, 0.1, 0.2]),
                   np.array([0.9, 0.1, 0.3, 0.2]) / np.linalg.norm([0.9, 0.1, 0.3, 0.2]), 0.5, np.zeros(3))
    mean2d, cov, depth = project(g, cam, CFG)
    x, y, z = g.mean
    j = np.array([[f / z, 0, -f * x / z ** 2], [0, f / z, -f * y / z ** 2]])
    from adagscale.scene import covariance_3d
    oracle = j @ covariance_3d(g) @ j.T + 0.3 * np.eye(2)
    assert np.allclose(cov, oracle, rtol=1e-10)
    assert np.allclose(mean2d, [f * x / z + 320, f * y / z + 240])


def test_rotated_camera():
    th = 0.3
    rot = np.array([[math.cos(th), 0, -math.sin(th)], [0, 1, 0], [math.sin(th), 0, math.cos(th)]])
    cam = camera(640, 480, 500.0, position=(1.0, 2.0, -3.0), rotation=rot)
    p = np.array([0.2, 2.1, 2.0])
    mean2d, _, depth = project(gauss(p), cam, CFG)
    t = rot @ (p - cam.position)
    assert np.isclose(depth, t[2])
    assert np.allclose(mean2d, [500 * t[0] / t[2] + 320, 500 * t[1] / t[2] + 240])


def test_near_plane_cull():
    assert project(gauss([0, 0, 0.1]), camera(), CFG) is None
    assert project(gauss([0, 0, -3.0]), camera(), CFG) is None


def test_guard_band_cull():
    cam = camera(640, 480, 500.0)
    z = 10.0
    half = 320.0 / 500.0 * z  # world half-extent at depth z
    assert project(gauss([1.2 * half, 0, z]), cam, CFG) is not None
    assert project(gauss([1.4 * half, 0, z]), cam, CFG) is None
    assert project(gauss([0, 1.4 * 240 / 500 * z, z]), cam, CFG) is None


def test_color_dc_zero():
    assert np.allclose(eval_color(gauss([0, 0, 1]), [0, 0, 1]), 0.5)


@pytest.mark.parametrize("c0", [-3.0, -0.5, 0.0, 0.7, 4.0])
def test_color_dc(c0):
    rgb = eval_color(gauss([0, 0, 1], sh=np.full(3, c0)), [0, 0, 1])
    assert np.allclose(rgb, np.clip(0.2820947918 * c0 + 0.5, 0, 1), atol=1e-10)
    assert abs(SH_C0 - 1 / (2 * math.sqrt(math.pi))) < 1e-15


def test_color_view_independent_at_degree0():
    g = gauss([0, 0, 1], sh=np.array([0.3, -0.2, 0.1]))
    assert np.array_equal(eval_color(g, [0, 0, 1]), eval_color(g, [1, 0, 0]))


def test_color_degree1_direction():
    sh = np.zeros((3, 4))
    sh[:, 2] = 1.0  # z-linear term
    g = gauss([0, 0, 1], sh=sh)
    c1 = 0.4886025119029199
    assert np.allclose(eval_color(g, [0, 0, 1]), 0.5 + c1)
    assert np.allclose(eval_color(g, [0, 0, -1]), 0.5 - c1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_color_range(seed):
    rng = np.random.default_rng(seed)
    sh = rng.normal(scale=3, size=(5, 3, 16))
    d = rng.normal(size=(5, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out = eval_sh(sh, d)
    assert out.min() >= 0 and out.max() <= 1


class Const:
    def __init__(self, v):
        self.v = v

    def lookup(self, depth):
        return np.full(np.shape(depth), self.v, dtype=float) if np.ndim(depth) else self.v


def test_th_k_zero():
    assert compute_th(np.eye(2) * 3, 5.0, Const(0.3), 0.0, TAU) == TAU


def test_th_example():
    th = compute_th(np.diag([2.0, 2.0]), 5.0, Const(0.5), 0.01 * 2 * math.pi, TAU)
    assert th == pytest.approx(0.01 * 2 * math.pi / (0.5 * 2 * math.pi * 2) + TAU, rel=1e-12)
    assert round(th, 6) == 0.013922


def test_th_excludes_everything():
    th = compute_th(np.eye(2), 5.0, Const(1.0), 2 * math.pi, TAU)
    assert th == pytest.approx(1 + TAU) and th > 0.999


def test_th_bad_det():
    with pytest.raises(ValueError):
        compute_th(np.zeros((2, 2)), 1.0, Const(1.0), 1.0, TAU)


@given(st.floats(0, 100), st.floats(0.01, 1.0), st.floats(1e-3, 1e4))
def test_th_at_least_tau(k, t, det):
    assert compute_th(np.diag([det, 1.0]), 3.0, Const(t), k, TAU) >= TAU


def test_threshold_exclusion_example():
    sp = splats([[10, 10], [20, 20]], [np.diag([2.0, 2.0])] * 2, [0.01, 0.5], depths=[5.0, 5.0])
    lut = TUpperLUT(np.full(20, 0.5))
    out = apply_threshold(sp, RenderConfig(mode=Mode.ADAGSCALE, k=0.01 * 2 * math.pi), lut)
    assert out.source_id.tolist() == [1]
    assert out.th[0] == pytest.approx(0.013922, abs=1e-6)


def test_equality_excluded():
    sp = splats([[10, 10]], [np.diag([1.0, 1.0])], [0.5], depths=[5.0])
    k = (0.5 - TAU) * 2 * math.pi  # Th == σ up to rounding
    th = compute_th(np.eye(2), 5.0, Const(1.0), k, TAU)
    out = apply_threshold(sp, RenderConfig(mode=Mode.ADAGSCALE, k=k), TUpperLUT(np.ones(20)))
    assert len(out) == (1 if th < 0.5 else 0)


def test_lossless_th_is_tau():
    scene, cams = synth_scene(0, 500)
    for mode in ("aabb", "obb", "ellipse"):
        sp = preprocess_view(scene, cams[0], RenderConfig(mode=mode))
        assert len(sp) and np.all(sp.th == TAU)
        assert np.all(np.diff(sp.source_id) > 0)


def test_k_zero_matches_ellipse():
    scene, cams = synth_scene(0, 500)
    lut = TUpperLUT(np.linspace(0.2, 1.0, 20))
    a = preprocess_view(scene, cams[0], RenderConfig())
    b = preprocess_view(scene, cams[0], RenderConfig(mode=Mode.ADAGSCALE, k=0.0), lut)
    assert np.array_equal(a.source_id, b.source_id) and np.array_equal(a.th, b.th)
    assert np.array_equal(a.cov2d, b.cov2d) and np.array_equal(a.rgb, b.rgb)


def test_adagscale_needs_lut():
    scene, cams = synth_scene(0, 10)
    with pytest.raises(ValueError):
        preprocess_view(scene, cams[0], RenderConfig(mode=Mode.ADAGSCALE, k=1.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50))
def test_monotone_in_k(k1, k2):
    k1, k2 = sorted((k1, k2))
    scene, cams = synth_scene(4, 400, "cloud", n_views=1, width=160, height=120)
    lut = TUpperLUT(np.linspace(0.3, 1.0, 20))
    a = preprocess_view(scene, cams[0], RenderConfig(mode=Mode.ADAGSCALE, k=k1), lut)
    b = preprocess_view(scene, cams[0], RenderConfig(mode=Mode.ADAGSCALE, k=k2), lut)
    assert set(b.source_id.tolist()) <= set(a.source_id.tolist())
    pos = {s: i for i, s in enumerate(a.source_id.tolist())}
    for s, th in zip(b.source_id.tolist(), b.th):
        assert a.th[pos[s]] <= th


def test_viewpoint_adaptivity():
    lut = TUpperLUT(np.linspace(0.1, 1.0, 20))
    cov = np.diag([3.0, 5.0])
    # depths 11 and 14 share bin 2
    assert compute_th(cov, 11.0, lut, 2.0, TAU) == compute_th(cov, 14.0, lut, 2.0, TAU)
    assert compute_th(cov, 11.0, lut, 2.0, TAU) != compute_th(cov, 16.0, lut, 2.0, TAU)


def test_deterministic_and_thread_invariant():
    scene, cams = synth_scene(2, 1000, "cloud", n_views=1)
    a = preprocess_view(scene, cams[0], RenderConfig(thread_count=1))
    b = preprocess_view(scene, cams[0], RenderConfig(thread_count=8))
    for f in ("mean2d", "cov2d", "conic", "depth", "rgb", "opacity", "th", "source_id"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_low_opacity_never_survives():
    scene = gaussian_set([[0, 0, 5.0], [0.1, 0, 5.0]], 0.1, [TAU * 0.5, 0.5])
    sp = project_view(scene, camera(), CFG)
    assert sp.source_id.tolist() == [1]


def test_splat_view_fields():
    scene, cams = synth_scene(0, 50, n_views=1)
    sp = preprocess_view(scene, cams[0], CFG)
    v = sp[0]
    assert np.allclose(v.inv_cov @ v.cov2d, np.eye(2))
    assert v.depth > CFG.near_plane and v.th < v.opacity and np.linalg.det(v.cov2d) > 0
