"""Per-view preprocessing: cull, project, shade and assign per-splat alpha thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .scene import SH_C0, Camera, Gaussian3D, GaussianSet, Mode, RenderConfig, covariances_3d

SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class SplatView:
    mean2d: np.ndarray
    cov2d: np.ndarray
    inv_cov: np.ndarray
    depth: float
    rgb: np.ndarray
    opacity: float
    th: float
    source_id: int


class SplatBatch(Sequence[SplatView]):
    """Projected splats for one view, stored column-wise.

    2×2 symmetric matrices are packed as ``(xx, xy, yy)`` rows in ``cov2d`` and
    ``conic`` (the inverse covariance).
    """

    __slots__ = ("mean2d", "cov2d", "conic", "depth", "rgb", "opacity", "th", "source_id")

    def __init__(self, mean2d, cov2d, conic, depth, rgb, opacity, th, source_id):
        self.mean2d = np.ascontiguousarray(mean2d, dtype=np.float64).reshape(-1, 2)
        self.cov2d = np.ascontiguousarray(cov2d, dtype=np.float64).reshape(-1, 3)
        self.conic = np.ascontiguousarray(conic, dtype=np.float64).reshape(-1, 3)
        self.depth = np.ascontiguousarray(depth, dtype=np.float64).reshape(-1)
        self.rgb = np.ascontiguousarray(rgb, dtype=np.float64).reshape(-1, 3)
        self.opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(-1)
        self.th = np.ascontiguousarray(th, dtype=np.float64).reshape(-1)
        self.source_id = np.ascontiguousarray(source_id, dtype=np.int64).reshape(-1)

    @classmethod
    def from_views(cls, views: Sequence[SplatView]) -> "SplatBatch":
        if isinstance(views, SplatBatch):
            return views
        views = list(views)
        if not views:
            return cls.empty()
        cov = np.stack([np.asarray(v.cov2d, dtype=np.float64) for v in views])
        packed = np.column_stack([cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]])
        return cls(
            np.stack([v.mean2d for v in views]), packed, conic_of(packed),
            [v.depth for v in views], np.stack([v.rgb for v in views]),
            [v.opacity for v in views], [v.th for v in views], [v.source_id for v in views],
        )

    @classmethod
    def empty(cls) -> "SplatBatch":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z, np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.depth.shape[0]

    def __getitem__(self, index):
        if isinstance(index, slice) or (isinstance(index, np.ndarray) and index.ndim == 1):
            return self.take(index)
        i = range(len(self))[index]
        a, b, c = self.cov2d[i]
        ia, ib, ic = self.conic[i]
        return SplatView(
            self.mean2d[i].copy(), np.array([[a, b], [b, c]]), np.array([[ia, ib], [ib, ic]]),
            float(self.depth[i]), self.rgb[i].copy(), float(self.opacity[i]),
            float(self.th[i]), int(self.source_id[i]),
        )

    def __iter__(self) -> Iterator[SplatView]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index) -> "SplatBatch":
        return SplatBatch(*(getattr(self, name)[index] for name in self.__slots__))

    def with_th(self, th: np.ndarray) -> "SplatBatch":
        out = self.take(slice(None))
        out.th = np.ascontiguousarray(th, dtype=np.float64).reshape(-1)
        return out

    def det(self) -> np.ndarray:
        return self.cov2d[:, 0] * self.cov2d[:, 2] - self.cov2d[:, 1] ** 2


def conic_of(cov: np.ndarray) -> np.ndarray:
    a, b, c = cov[:, 0], cov[:, 1], cov[:, 2]
    det = a * c - b * b
    return np.column_stack([c / det, -b / det, a / det])


# ---------------------------------------------------------------------------
# projection

def _project_arrays(means: np.ndarray, cov3d: np.ndarray, cam: Camera, cfg: RenderConfig):
    t = cam.world_to_camera(means)
    tz = t[:, 2]
    keep = tz > cfg.near_plane
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(keep, 1.0 / np.where(keep, tz, 1.0), 0.0)
        u = cam.fx * t[:, 0] * inv_z + 0.5 * cam.width
        v = cam.fy * t[:, 1] * inv_z + 0.5 * cam.height
        ndc_x = (u - 0.5 * cam.width) / (0.5 * cam.width)
        ndc_y = (v - 0.5 * cam.height) / (0.5 * cam.height)
    keep &= (np.abs(ndc_x) <= cfg.frustum_guard) & (np.abs(ndc_y) <= cfg.frustum_guard)
    idx = np.flatnonzero(keep)
    t, inv_z = t[idx], inv_z[idx]
    n = idx.size
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 0, 2] = -cam.fx * t[:, 0] * inv_z * inv_z
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 1, 2] = -cam.fy * t[:, 1] * inv_z * inv_z
    m = jac @ cam.rotation
    cov2 = m @ cov3d[idx] @ np.swapaxes(m, 1, 2)
    packed = np.column_stack([cov2[:, 0, 0] + cfg.dilation, 0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0]),
                              cov2[:, 1, 1] + cfg.dilation])
    return idx, np.column_stack([u[idx], v[idx]]), packed, t[:, 2]


def project(g: Gaussian3D, cam: Camera, cfg: RenderConfig):
    """Return ``(mean2d, cov2d, depth)`` for a single Gaussian, or ``None`` if culled."""
    cov3d = covariances_3d(g.scale, g.rotation)[None]
    idx, mean2d, packed, depth = _project_arrays(g.mean[None], cov3d, cam, cfg)
    if idx.size == 0:
        return None
    a, b, c = packed[0]
    return mean2d[0], np.array([[a, b], [b, c]]), float(depth[0])


def eval_sh(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate real SH colors, offset by 0.5 and clamped to [0, 1].

    ``sh`` has shape (N, 3, d*d); ``dirs`` holds unit view directions (N, 3).
    """
    sh = np.asarray(sh, dtype=np.float64)
    n_coef = sh.shape[-1]
    res = SH_C0 * sh[..., 0]
    if n_coef > 1:
        x, y, z = (dirs[:, i:i + 1] for i in range(3))
        res = res - SH_C1 * y * sh[..., 1] + SH_C1 * z * sh[..., 2] - SH_C1 * x * sh[..., 3]
        if n_coef > 4:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            res = (res + SH_C2[0] * xy * sh[..., 4] + SH_C2[1] * yz * sh[..., 5]
                   + SH_C2[2] * (2.0 * zz - xx - yy) * sh[..., 6]
                   + SH_C2[3] * xz * sh[..., 7] + SH_C2[4] * (xx - yy) * sh[..., 8])
            if n_coef > 9:
                res = (res + SH_C3[0] * y * (3.0 * xx - yy) * sh[..., 9]
                       + SH_C3[1] * xy * z * sh[..., 10]
                       + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[..., 11]
                       + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[..., 12]
                       + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[..., 13]
                       + SH_C3[5] * z * (xx - yy) * sh[..., 14]
                       + SH_C3[6] * x * (xx - 3.0 * yy) * sh[..., 15])
    return np.clip(res + 0.5, 0.0, 1.0)


def eval_color(g: Gaussian3D, view_dir) -> np.ndarray:
    d = np.asarray(view_dir, dtype=np.float64).reshape(1, 3)
    return eval_sh(g.sh_coeffs[None], d)[0]


# ---------------------------------------------------------------------------
# adjusted threshold

def compute_th(cov2d, depth: float, lut, k: float, tau: float) -> float:
    """Adjusted alpha cutoff K / (T_upper(depth)·2π·√det) + τ for one splat."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    if cov2d.shape == (2, 2):
        det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
    else:
        det = cov2d[0] * cov2d[2] - cov2d[1] ** 2
    if not det > 0:
        raise ValueError("cov2d must have a positive determinant")
    t_upper = float(lut.lookup(depth)) if lut is not None else 1.0
    return k / (t_upper * TWO_PI * math.sqrt(det)) + tau


def compute_th_batch(det: np.ndarray, depth: np.ndarray, lut, k: float, tau: float) -> np.ndarray:
    if k == 0.0:
        return np.full(det.shape, tau)
    t_upper = lut.lookup(depth)
    return k / (t_upper * TWO_PI * np.sqrt(det)) + tau


# ---------------------------------------------------------------------------

def project_view(scene: GaussianSet, cam: Camera, cfg: RenderConfig, cov3d: Optional[np.ndarray] = None
                 ) -> SplatBatch:
    """Lossless survivors of one view (``th = τ``), in scene order.

    Splats with opacity at or below τ can never reach the blend threshold and
    are dropped here.
    """
    if len(scene) == 0:
        return SplatBatch.empty()
    if cov3d is None:
        cov3d = covariances_3d(scene.scales, scene.rotations)
    idx, mean2d, packed, depth = _project_arrays(scene.means, cov3d, cam, cfg)
    opac = scene.opacities[idx]
    live = opac > cfg.alpha_threshold
    idx, mean2d, packed, depth, opac = idx[live], mean2d[live], packed[live], depth[live], opac[live]
    dirs = scene.means[idx] - cam.position
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rgb = eval_sh(scene.sh_coeffs[idx], dirs)
    return SplatBatch(mean2d, packed, conic_of(packed), depth, rgb, opac,
                      np.full(idx.size, cfg.alpha_threshold), idx)


def apply_threshold(splats: SplatBatch, cfg: RenderConfig, lut=None) -> SplatBatch:
    """Assign per-mode thresholds and drop splats whose threshold reaches their opacity."""
    if cfg.mode is not Mode.ADAGSCALE:
        return splats.with_th(np.full(len(splats), cfg.alpha_threshold))
    if lut is None:
        raise ValueError("ADAGSCALE mode requires a T_upper lookup table")
    th = compute_th_batch(splats.det(), splats.depth, lut, cfg.k, cfg.alpha_threshold)
    keep = th < splats.opacity
    out = splats.take(keep)
    out.th = np.ascontiguousarray(th[keep])
    return out


def preprocess_view(scene, cam: Camera, cfg: RenderConfig, lut=None) -> SplatBatch:
    if cfg.mode is Mode.ADAGSCALE and lut is None:
        raise ValueError("ADAGSCALE mode requires a T_upper lookup table")
    scene = GaussianSet.from_gaussians(scene)
    return apply_threshold(project_view(scene, cam, cfg), cfg, lut)
