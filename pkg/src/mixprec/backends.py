"""Kernel backend selection.

The compiled Cython extension is used when available; otherwise (or when
``MIXPREC_PURE_PYTHON=1`` is set) the NumPy fallback takes over.  Both
expose the same functions and produce bitwise-identical results; only
throughput differs.
"""

from __future__ import annotations

import os
import warnings

from . import _mma_np

_BACKENDS = {"numpy": _mma_np}

try:
    from . import _mma_cy

    _BACKENDS["compiled"] = _mma_cy
except ImportError:  # pragma: no cover - build-environment dependent
    _mma_cy = None

if os.environ.get("MIXPREC_PURE_PYTHON"):
    _active = "numpy"
elif "compiled" in _BACKENDS:
    _active = "compiled"
else:  # pragma: no cover
    warnings.warn(
        "mixprec compiled kernels unavailable; falling back to the slower "
        "NumPy backend (run `python setup.py build_ext --inplace` to build)",
        RuntimeWarning,
        stacklevel=2,
    )
    _active = "numpy"


def active_backend() -> str:
    return _active


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None):
    """Kernel module for ``name`` (default: the active backend)."""
    return _BACKENDS[name or _active]


class use_backend:
    """Context manager forcing a backend, for tests and benchmarks."""

    def __init__(self, name: str):
        if name not in _BACKENDS:
            raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
        self.name = name
        self._saved: str | None = None

    def __enter__(self):
        global _active
        self._saved = _active
        _active = self.name
        return self

    def __exit__(self, *exc):
        global _active
        _active = self._saved
        return False
