"""Image quality metrics on float buffers."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

PSNR_CAP = 100.0
DEFAULT_BASELINE_PSNR = 30.0


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10·log10(1/MSE) over all pixels and channels; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def capped(value: float, cap: float = PSNR_CAP) -> float:
    return min(value, cap)


def psnr_drop(image: np.ndarray, reference: np.ndarray, ground_truth: Optional[np.ndarray] = None,
              baseline_psnr: float = DEFAULT_BASELINE_PSNR) -> float:
    """Quality lost by ``image`` relative to the lossless ``reference`` render, in dB.

    With a ground-truth image this is ``PSNR(reference, gt) - PSNR(image, gt)``.
    Without one, the reference is assumed to sit ``baseline_psnr`` dB from an
    unseen ground truth with an error uncorrelated to the deviation
    ``image - reference``, giving ``10·log10(1 + MSE(image, reference) / MSE_base)``.
    Identical images always give exactly 0.
    """
    if ground_truth is not None:
        ref_err = mse(reference, ground_truth)
        img_err = mse(image, ground_truth)
        if ref_err == img_err:
            return 0.0
        if ref_err == 0.0:
            return math.inf
        return 10.0 * math.log10(img_err / ref_err)
    dev = mse(image, reference)
    if dev == 0.0:
        return 0.0
    base = 10.0 ** (-baseline_psnr / 10.0)
    return 10.0 * math.log10(1.0 + dev / base)


def aggregate_drop(drops: Sequence[float], criterion: str = "mean") -> float:
    if not drops:
        return 0.0
    if criterion == "mean":
        return float(np.mean(drops))
    if criterion in ("worst", "max"):
        return float(np.max(drops))
    raise ValueError(f"unknown drop criterion {criterion!r}")
