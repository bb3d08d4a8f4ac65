"""Backend selection for the hot kernels.

The numba backend is the default; set EQCSC_BACKEND=numpy to force the pure
numpy fallback (or call set_backend at runtime, e.g. from the benchmark).
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
try:
    from . import numba_backend

    _BACKENDS["numba"] = numba_backend
    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False

_requested = os.environ.get("EQCSC_BACKEND", "").strip().lower()
if _requested and _requested not in ("numba", "numpy"):
    raise RuntimeError(f"EQCSC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if not _requested:
    _requested = "numba" if _HAVE_NUMBA else "numpy"
if _requested == "numba" and not _HAVE_NUMBA:
    _requested = "numpy"

_impl = _BACKENDS[_requested]


def backend_name():
    return "numba" if _impl is _BACKENDS.get("numba") else "numpy"


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch the active backend; returns the previous backend name."""
    global _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    prev = backend_name()
    _impl = _BACKENDS[name]
    return prev


def corr2d_mc(w, s):
    return _impl.corr2d_mc(w, s)


def corr2d_mc_adj(w, r):
    return _impl.corr2d_mc_adj(w, r)


def corr2d_mc_wgrad(s, g, k):
    return _impl.corr2d_mc_wgrad(s, g, k)


def corr3d_mc(d, h):
    return _impl.corr3d_mc(d, h)


def corr3d_mc_adj(d, r):
    return _impl.corr3d_mc_adj(d, r)


def corr3d_mc_wgrad(h, g, kb, k):
    return _impl.corr3d_mc_wgrad(h, g, kb, k)


def diff3(x, kern, mode):
    return _impl.diff3(x, kern, mode)


def diff3_bwd(x, kern, mode, dy):
    return _impl.diff3_bwd(x, kern, mode, dy)


def warmup(dtype="float64"):
    """Compile every kernel signature once so timings exclude JIT cost."""
    import numpy as np

    w2 = np.zeros((1, 1, 3, 3), dtype=dtype)
    s2 = np.zeros((1, 4, 4), dtype=dtype)
    r2 = np.zeros((1, 4, 4), dtype=dtype)
    d3 = np.zeros((1, 3, 3, 3), dtype=dtype)
    h3 = np.zeros((1, 2, 4, 4), dtype=dtype)
    r3 = np.zeros((2, 4, 4), dtype=dtype)
    corr2d_mc(w2, s2)
    corr2d_mc_adj(w2, r2)
    corr2d_mc_wgrad(s2, r2, 3)
    corr3d_mc(d3, h3)
    corr3d_mc_adj(d3, r3)
    corr3d_mc_wgrad(h3, r3, 3, 3)
    kern = np.zeros((3, 3, 3), dtype=dtype)
    for mode in range(5):
        diff3(h3, kern, mode)
        diff3_bwd(h3, kern, mode, h3)
