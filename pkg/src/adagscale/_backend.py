"""Kernel backend chosen at import: the compiled extension if importable, else numpy.

Set ``ADAGSCALE_BACKEND=python`` to force the numpy fallback, or
``ADAGSCALE_BACKEND=cython`` to fail loudly when the extension is missing.
"""

from __future__ import annotations

import contextlib
import importlib
import os

from . import _pykernels


def load(name: str | None = None):
    name = (name or os.environ.get("ADAGSCALE_BACKEND", "auto")).lower()
    if name == "python":
        return _pykernels
    try:
        return importlib.import_module("adagscale._ckernels")
    except ImportError:
        if name == "cython":
            raise
        return _pykernels


kernels = load()
BACKEND = kernels.BACKEND


def available() -> list[str]:
    names = ["python"]
    try:
        importlib.import_module("adagscale._ckernels")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


@contextlib.contextmanager
def use(name: str):
    """Temporarily route every kernel call through the named backend."""
    global kernels, BACKEND
    prev = kernels
    kernels = load(name)
    BACKEND = kernels.BACKEND
    try:
        yield kernels
    finally:
        kernels = prev
        BACKEND = prev.BACKEND
