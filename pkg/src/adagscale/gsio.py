"""Readers and writers: trained-splat PLY, cameras JSON, PNG/PPM images, CSV tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .scene import Camera, GaussianSet

log = logging.getLogger(__name__)

PathLike = str | os.PathLike


class PlyFormatError(ValueError):
    pass


class CameraFormatError(ValueError):
    pass


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

_MANDATORY = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
              "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")

# f_rest counts allowed per SH degree 0..3
_REST_COUNTS = {3 * ((d + 1) ** 2 - 1): d for d in range(4)}


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_bytes()


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyFormatError("not a PLY file (missing magic or end_header)")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyFormatError("truncated PLY header")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    body_offset = nl + 1
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for raw in lines[1:]:
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyFormatError(f"malformed element line: {raw!r}")
            try:
                elements.append((parts[1], int(parts[2]), []))
            except ValueError:
                raise PlyFormatError(f"malformed element count: {raw!r}") from None
        elif parts[0] == "property":
            if not elements:
                raise PlyFormatError("property before any element")
            if parts[1] == "list":
                raise PlyFormatError("list properties are not supported")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyFormatError(f"malformed property line: {raw!r}")
            elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise PlyFormatError(f"unexpected header line: {raw!r}")
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported PLY format {fmt!r}; need binary_little_endian")
    return elements, body_offset


def load_ply_report(source) -> tuple[GaussianSet, int]:
    """Parse a trained-splat PLY; returns the scene and the number of rejected elements."""
    data = _read_bytes(source)
    elements, offset = _parse_header(data)
    vertex = None
    for name, count, props in elements:
        dtype = np.dtype([(p, "<" + t) for p, t in props])
        if name == "vertex":
            vertex = (count, dtype)
            break
        offset += count * dtype.itemsize
    if vertex is None:
        raise PlyFormatError("no vertex element")
    count, dtype = vertex
    names = set(dtype.names or ())
    missing = [p for p in _MANDATORY if p not in names]
    if missing:
        raise PlyFormatError(f"missing properties: {', '.join(missing)}")
    rest = sorted((p for p in names if p.startswith("f_rest_")), key=lambda p: int(p[7:]))
    if len(rest) not in _REST_COUNTS or rest != [f"f_rest_{i}" for i in range(len(rest))]:
        raise PlyFormatError(f"unsupported spherical-harmonics layout ({len(rest)} f_rest properties)")
    degree = _REST_COUNTS[len(rest)]
    if len(data) < offset + count * dtype.itemsize:
        raise PlyFormatError("truncated PLY body")
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=offset)

    def cols(keys):
        return np.column_stack([rec[k].astype(np.float64) for k in keys]) if keys else np.zeros((count, 0))

    means = cols(["x", "y", "z"])
    logit = rec["opacity"].astype(np.float64)
    log_scale = cols(["scale_0", "scale_1", "scale_2"])
    quat = cols(["rot_0", "rot_1", "rot_2", "rot_3"])
    dc = cols(["f_dc_0", "f_dc_1", "f_dc_2"])
    n_rest = len(rest) // 3
    rest_vals = cols(rest).reshape(count, 3, n_rest)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        scales = np.exp(log_scale)
        qnorm = np.linalg.norm(quat, axis=1)
        opac = 1.0 / (1.0 + np.exp(-logit))
    ok = (np.all(np.isfinite(means), axis=1) & np.isfinite(logit)
          & np.all(np.isfinite(log_scale), axis=1) & np.all(np.isfinite(quat), axis=1)
          & np.all(np.isfinite(dc), axis=1) & np.all(np.isfinite(rest_vals), axis=(1, 2))
          & np.all((scales > 0) & np.isfinite(scales), axis=1) & (qnorm > 0))
    n_bad = int(count - np.count_nonzero(ok))
    if n_bad:
        log.warning("rejected %d of %d PLY elements with non-finite or degenerate values", n_bad, count)
    # saturated logits would round to exactly 0 or 1
    opac = np.clip(opac[ok], np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    sh = np.concatenate([dc[ok][:, :, None], rest_vals[ok]], axis=2)
    scene = GaussianSet(means[ok], scales[ok], quat[ok] / qnorm[ok, None], opac, sh)
    assert scene.sh_degree == degree
    return scene, n_bad


def load_ply(source) -> GaussianSet:
    return load_ply_report(source)[0]


def ply_bytes(scene: GaussianSet) -> bytes:
    """Serialise ``scene`` in the standard trained-splat PLY layout (float32)."""
    n = len(scene)
    n_rest = scene.sh_coeffs.shape[2] - 1
    props = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
             + [f"f_rest_{i}" for i in range(3 * n_rest)]
             + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    with np.errstate(divide="ignore"):
        logit = np.log(scene.opacities) - np.log1p(-scene.opacities)
    body = np.column_stack([
        scene.means, np.zeros((n, 3)), scene.sh_coeffs[:, :, 0],
        scene.sh_coeffs[:, :, 1:].reshape(n, 3 * n_rest), logit,
        np.log(scene.scales), scene.rotations,
    ]).astype("<f4")
    return ("\n".join(header) + "\n").encode("ascii") + body.tobytes()


def save_ply(scene: GaussianSet, path: PathLike) -> None:
    Path(path).write_bytes(ply_bytes(scene))


# ---------------------------------------------------------------------------
# cameras

_CAMERA_FIELDS = ("width", "height", "position", "rotation", "fx", "fy")


def _orthonormalize(rot: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def _camera_from_record(rec: dict, index: int) -> Camera:
    missing = [f for f in _CAMERA_FIELDS if f not in rec]
    if missing:
        raise CameraFormatError(f"camera {index}: missing field(s) {', '.join(missing)}")
    c2w = np.asarray(rec["rotation"], dtype=np.float64)
    if c2w.shape != (3, 3) or not np.all(np.isfinite(c2w)):
        raise CameraFormatError(f"camera {index}: rotation must be a finite 3x3 matrix")
    drift = float(np.max(np.abs(c2w @ c2w.T - np.eye(3))))
    if drift >= 1e-2:
        raise CameraFormatError(f"camera {index}: rotation is not orthonormal (drift {drift:.3g})")
    if drift > 1e-5:
        c2w = _orthonormalize(c2w)
    try:
        return Camera(
            position=rec["position"], rotation=c2w.T, fx=float(rec["fx"]), fy=float(rec["fy"]),
            width=int(rec["width"]), height=int(rec["height"]),
            id=int(rec.get("id", index)), name=str(rec.get("img_name", "")),
        )
    except (TypeError, ValueError) as exc:
        raise CameraFormatError(f"camera {index}: {exc}") from None


def load_cameras(source) -> list[Camera]:
    """Parse a cameras JSON array.

    ``rotation`` in the file is camera-to-world (the convention of the usual
    trained-model tooling); it is transposed into :attr:`Camera.rotation`.
    """
    if isinstance(source, str) and source.lstrip().startswith("["):
        text = source
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CameraFormatError(f"invalid cameras JSON: {exc}") from None
    if not isinstance(records, list):
        raise CameraFormatError("cameras JSON must be an array")
    return [_camera_from_record(r, i) for i, r in enumerate(records)]


def cameras_json(cameras: Sequence[Camera]) -> str:
    out = []
    for cam in cameras:
        out.append({
            "id": cam.id, "img_name": cam.name, "width": cam.width, "height": cam.height,
            "position": cam.position.tolist(), "rotation": cam.rotation.T.tolist(),
            "fx": cam.fx, "fy": cam.fy,
        })
    return json.dumps(out, indent=1)


# ---------------------------------------------------------------------------
# images

def quantize(pixels: np.ndarray) -> np.ndarray:
    """Round-half-up to 8 bits after clamping to [0, 1]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if not np.all(np.isfinite(pixels)):
        raise ValueError("image contains non-finite values")
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(pixels: np.ndarray, path: PathLike) -> None:
    """Write an H×W×3 float image as PNG, or binary PPM for ``.ppm`` paths."""
    data = quantize(pixels)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        h, w, _ = data.shape
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())
    else:
        from PIL import Image

        Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_image(path: PathLike) -> np.ndarray:
    """Load an 8-bit RGB image as floats in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        tokens = []
        pos = 2
        while len(tokens) < 3:
            while raw[pos:pos + 1].isspace():
                pos += 1
            if raw[pos:pos + 1] == b"#":
                pos = raw.index(b"\n", pos)
                continue
            start = pos
            while not raw[pos:pos + 1].isspace():
                pos += 1
            tokens.append(int(raw[start:pos]))
        w, h, maxval = tokens
        data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1).reshape(h, w, 3)
        return data.astype(np.float64) / maxval
    from PIL import Image

    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# CSV

def write_csv(path_or_file, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    def emit(fh):
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
