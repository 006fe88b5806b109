"""Scene, camera and render-configuration types plus seeded synthetic scenes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

SH_C0 = 0.28209479177387814


class Mode(str, enum.Enum):
    AABB = "aabb"
    OBB = "obb"
    ELLIPSE = "ellipse"
    ADAGSCALE = "adagscale"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mode {value!r}") from None


def _sh_degree_from_count(count: int) -> int:
    for degree in range(4):
        if count == (degree + 1) ** 2:
            return degree
    raise ValueError(f"unsupported number of SH coefficients per channel: {count}")


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    """A single world-space Gaussian.

    ``sh_coeffs`` has shape ``(3, d*d)`` with ``d`` in 1..4; row ``c`` holds the
    coefficients of color channel ``c``.
    """

    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh_coeffs: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        sh = np.asarray(self.sh_coeffs, dtype=np.float64)
        if sh.ndim == 1:
            if sh.size % 3:
                raise ValueError("sh_coeffs length must be a multiple of 3")
            sh = sh.reshape(3, -1)
        _sh_degree_from_count(sh.shape[1])
        if abs(np.linalg.norm(rotation) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm")
        if not np.all(scale > 0):
            raise ValueError("scale components must be strictly positive")
        if not 0.0 < float(self.opacity) < 1.0:
            raise ValueError("opacity must lie in (0, 1)")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(sh))):
            raise ValueError("non-finite Gaussian parameters")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "sh_coeffs", sh)

    @property
    def sh_degree(self) -> int:
        return _sh_degree_from_count(self.sh_coeffs.shape[1])


class GaussianSet(Sequence[Gaussian3D]):
    """Struct-of-arrays container behaving as a read-only sequence of :class:`Gaussian3D`.

    All per-view stages operate on the arrays directly; indexing materialises a
    single :class:`Gaussian3D` on demand.
    """

    def __init__(self, means, scales, rotations, opacities, sh_coeffs, *, validate: bool = True):
        self.means = np.array(means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.scales = np.array(scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.array(rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.array(opacities, dtype=np.float64).reshape(n)
        sh = np.array(sh_coeffs, dtype=np.float64)
        if sh.ndim == 2:
            sh = sh.reshape(n, 3, sh.shape[1] // 3)
        self.sh_coeffs = sh.reshape(n, 3, sh.shape[-1])
        self.sh_degree = _sh_degree_from_count(self.sh_coeffs.shape[2])
        for arr in (self.means, self.scales, self.rotations, self.opacities, self.sh_coeffs):
            arr.setflags(write=False)
        if validate:
            self.validate()

    def validate(self) -> None:
        if self.means.shape[0] == 0:
            return
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotation quaternions must have unit norm")
        if np.any(~(self.scales > 0)):
            raise ValueError("scale components must be strictly positive")
        if np.any(~((self.opacities > 0) & (self.opacities < 1))):
            raise ValueError("opacities must lie in (0, 1)")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.sh_coeffs))):
            raise ValueError("non-finite Gaussian parameters")

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianSet":
        d2 = (sh_degree + 1) ** 2
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3, d2)))

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D]) -> "GaussianSet":
        if isinstance(gaussians, GaussianSet):
            return gaussians
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.sh_coeffs for g in gaussians]),
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, index):
        if isinstance(index, slice):
            return GaussianSet(
                self.means[index], self.scales[index], self.rotations[index],
                self.opacities[index], self.sh_coeffs[index], validate=False,
            )
        i = range(len(self))[index]
        return Gaussian3D(self.means[i], self.scales[i], self.rotations[i],
                          float(self.opacities[i]), self.sh_coeffs[i])

    def __iter__(self) -> Iterator[Gaussian3D]:
        for i in range(len(self)):
            yield self[i]

    def tobytes(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.means, self.scales, self.rotations,
                                              self.opacities, self.sh_coeffs))


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``rotation`` maps world to camera axes (x right, y down, z forward)."""

    position: np.ndarray
    rotation: np.ndarray
    fx: float
    fy: float
    width: int
    height: int
    id: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        position = np.array(self.position, dtype=np.float64).reshape(3)
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > 1e-5:
            raise ValueError("camera rotation must be orthonormal")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (int(self.width) > 0 and int(self.height) > 0):
            raise ValueError("image dimensions must be positive")
        position.setflags(write=False)
        rotation.setflags(write=False)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation.T


@dataclass(frozen=True)
class RenderConfig:
    tile_size: int = 16
    alpha_threshold: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    alpha_clamp: float = 0.99
    near_plane: float = 0.2
    mode: Mode = Mode.ELLIPSE
    k: float = 0.0
    thread_count: int = 1
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    frustum_guard: float = 1.3
    dilation: float = 0.3
    # reference-renderer parity: AABB half-extent of 3 standard deviations
    aabb_fixed_radius: bool = False
    max_pairs: int = 200_000_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))
        if not 0.0 < self.alpha_threshold < self.alpha_clamp <= 1.0:
            raise ValueError("need 0 < alpha_threshold < alpha_clamp <= 1")
        if not self.transmittance_floor > 0:
            raise ValueError("transmittance_floor must be positive")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if not self.k >= 0:
            raise ValueError("K must be non-negative")
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")

    def replace(self, **changes) -> "RenderConfig":
        return replace(self, **changes)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (w, x, y, z) quaternions; accepts shape (4,) or (N, 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return r.reshape(q.shape[:-1] + (3, 3))


def covariances_3d(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched R·diag(s)²·Rᵀ."""
    r = quat_to_rotmat(rotations)
    m = r * np.asarray(scales, dtype=np.float64)[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def covariance_3d(g: Gaussian3D) -> np.ndarray:
    return covariances_3d(g.scale, g.rotation)


# ---------------------------------------------------------------------------
# synthetic scenes

LAYOUTS = ("slab", "two-slab", "depth-ramp", "cloud")


def _random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _z_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    half = rng.uniform(0, np.pi, size=n)
    return np.stack([np.cos(half), np.zeros(n), np.zeros(n), np.sin(half)], axis=1)


def _dc_from_rgb(rgb: np.ndarray) -> np.ndarray:
    return ((rgb - 0.5) / SH_C0)[:, :, None]


def _checker_rgb(xy: np.ndarray, period: float, rng: np.random.Generator,
                 a: tuple, b: tuple) -> np.ndarray:
    cell = (np.floor(xy[:, 0] / period) + np.floor(xy[:, 1] / period)) % 2
    rgb = np.where(cell[:, None] > 0, np.array(a), np.array(b))
    return np.clip(rgb + rng.normal(scale=0.06, size=rgb.shape), 0.02, 0.98)


def _slab(rng, n, half_w, half_h, z0, z1, spacing_scale, opacity_range, flat, colors, period):
    xy = rng.uniform([-half_w, -half_h], [half_w, half_h], size=(n, 2))
    z = rng.uniform(z0, z1, size=n)
    spacing = math.sqrt(4 * half_w * half_h / max(n, 1))
    s = spacing * spacing_scale * rng.lognormal(0.0, 0.35, size=(n, 2))
    scales = np.column_stack([s, spacing * flat * np.ones(n)])
    opac = rng.uniform(*opacity_range, size=n)
    rgb = _checker_rgb(xy, period, rng, *colors)
    return np.column_stack([xy, z]), scales, _z_quats(rng, n), opac, rgb


def _layout_slab(rng, n):
    n_front = max(1, int(round(0.4 * n))) if n > 1 else n
    n_back = n - n_front
    parts = [_slab(rng, n_front, 2.6, 2.0, 6.0, 6.6, 0.9, (0.55, 0.99), 0.15,
                   ((0.9, 0.35, 0.2), (0.95, 0.85, 0.3)), 0.8)]
    if n_back:
        parts.append(_slab(rng, n_back, 20.0, 15.0, 30.0, 34.0, 0.8, (0.08, 0.95), 0.3,
                           ((0.15, 0.3, 0.8), (0.3, 0.75, 0.45)), 4.0))
    return [np.concatenate(cols) for cols in zip(*parts)]


def _layout_depth_ramp(rng, n):
    z = np.exp(rng.uniform(np.log(2.0), np.log(90.0), size=n))
    half = 0.9 * math.tan(math.radians(30.0)) * z
    x = rng.uniform(-1, 1, size=n) * half
    y = rng.uniform(-0.75, 0.75, size=n) * half
    scales = (0.004 * z)[:, None] * rng.lognormal(0.0, 0.5, size=(n, 3)) * math.sqrt(20000.0 / max(n, 1))
    opac = rng.uniform(0.05, 0.95, size=n)
    rgb = rng.uniform(0.05, 0.95, size=(n, 3))
    return np.column_stack([x, y, z]), scales, _random_quats(rng, n), opac, rgb


def _layout_cloud(rng, n):
    z = rng.uniform(4.0, 12.0, size=n)
    half = math.tan(math.radians(30.0)) * z
    x = rng.uniform(-1, 1, size=n) * half
    y = rng.uniform(-0.75, 0.75, size=n) * half
    base = 0.35 * (8.0 * 8.0 * 0.75 * 1.2 / max(n, 1)) ** (1 / 3) * 4.0
    aniso = np.exp(rng.uniform(-1.2, 1.2, size=(n, 3)))
    scales = base * aniso
    opac = rng.uniform(0.05, 0.95, size=n)
    rgb = rng.uniform(0.05, 0.95, size=(n, 3))
    return np.column_stack([x, y, z]), scales, _random_quats(rng, n), opac, rgb


def _rot_xyz(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ rx @ ry


def synth_cameras(rng: np.random.Generator, n_views: int, width: int, height: int,
                  fov_deg: float = 60.0, jitter: float = 0.5, max_angle_deg: float = 3.0) -> list[Camera]:
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    cams = []
    a = math.radians(max_angle_deg)
    for i in range(n_views):
        pos = rng.uniform(-jitter, jitter, size=3)
        yaw, pitch, roll = rng.uniform(-a, a, size=3)
        cams.append(Camera(pos, _rot_xyz(yaw, pitch, roll), f, f, width, height, id=i, name=f"view_{i:03d}"))
    return cams


def synth_scene(seed: int, n: int, spec: str = "slab", *, n_views: int = 24,
                width: int = 640, height: int = 480, fov_deg: float = 60.0
                ) -> tuple[GaussianSet, list[Camera]]:
    """Deterministic synthetic scene plus cameras looking down +z from near the origin.

    Layouts: ``slab`` (alias ``two-slab``) is an opaque textured foreground slab
    partially occluding a textured background wall; ``depth-ramp`` spreads
    Gaussians over depths 2..90; ``cloud`` is a volume of strongly anisotropic,
    randomly rotated Gaussians.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    builders = {"slab": _layout_slab, "two-slab": _layout_slab,
                "depth-ramp": _layout_depth_ramp, "cloud": _layout_cloud}
    if spec not in builders:
        raise ValueError(f"unknown layout {spec!r}; expected one of {', '.join(LAYOUTS)}")
    rng = np.random.default_rng(seed)
    means, scales, quats, opac, rgb = builders[spec](rng, n)
    scene = GaussianSet(means, scales, quats, opac, _dc_from_rgb(rgb))
    cams = synth_cameras(np.random.default_rng([seed, 1]), n_views, width, height, fov_deg)
    return scene, cams
