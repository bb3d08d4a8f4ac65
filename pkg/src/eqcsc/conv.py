"""Dictionary convolution operators on hyperspectral cubes and code stacks.

Array conventions, used everywhere in this package:

* cube:        (B, H, W)      band-major image stack, values nominally in [0, 1]
* shared code: (M, H, W)      one spatial map per shared 2D atom
* local code:  (J, B, H, W)   one cube-shaped map per local 3D atom
* 2D bank:     (M, B, k, k)   per-(atom, band) spatial kernels, k odd
* 3D bank:     (J, kb, k, k)  per-atom spectral-spatial kernels, kb and k odd

All convolutions are cross-correlations with zero-padded "same" output, so
every operator here is linear and `*_adjoint` is the exact transpose of the
matching forward map. `*_weight_grad` gives the gradient of <g, forward(w, x)>
with respect to w; the same primitive also serves as the weight gradient of
the adjoint-shaped operator with (x, g) swapped into (cotangent, input).
"""

import numpy as np

from . import kernels
from .errors import ShapeError


def _as_float_array(x, name, ndim):
    x = np.asarray(x)
    if x.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dims, got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x)


def _check_odd(k, name):
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"{name} must be odd and positive, got {k}")


def check_bank2d(w):
    w = _as_float_array(w, "2D bank", 4)
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"2D bank kernels must be square, got {w.shape}")
    _check_odd(w.shape[2], "2D kernel size")
    return w


def check_bank3d(d):
    d = _as_float_array(d, "3D bank", 4)
    if d.shape[2] != d.shape[3]:
        raise ShapeError(f"3D bank spatial kernels must be square, got {d.shape}")
    _check_odd(d.shape[1], "3D spectral kernel size")
    _check_odd(d.shape[2], "3D spatial kernel size")
    return d


def conv2d_shared(w, s):
    """Synthesize a cube from shared codes: out[b] = sum_m w[m,b] (*) s[m]."""
    w = check_bank2d(w)
    s = _as_float_array(s, "shared code", 3)
    if w.shape[0] != s.shape[0]:
        raise ShapeError(f"atom counts differ: bank {w.shape[0]}, code {s.shape[0]}")
    return kernels.corr2d_mc(w, s)


def conv2d_shared_adjoint(w, r):
    """Exact adjoint of conv2d_shared in the code argument."""
    w = check_bank2d(w)
    r = _as_float_array(r, "cube", 3)
    if w.shape[1] != r.shape[0]:
        raise ShapeError(f"band counts differ: bank {w.shape[1]}, cube {r.shape[0]}")
    return kernels.corr2d_mc_adj(w, r)


def conv2d_shared_weight_grad(s, g, ksize):
    """Gradient of <g, conv2d_shared(w, s)> with respect to the bank w."""
    s = _as_float_array(s, "shared code", 3)
    g = _as_float_array(g, "cube", 3)
    _check_odd(ksize, "2D kernel size")
    if s.shape[1:] != g.shape[1:]:
        raise ShapeError(f"spatial dims differ: {s.shape[1:]} vs {g.shape[1:]}")
    return kernels.corr2d_mc_wgrad(s, g, ksize)


def conv3d(d, h):
    """Synthesize a cube from local codes: out = sum_j d[j] (*) h[j]."""
    d = check_bank3d(d)
    h = _as_float_array(h, "local code", 4)
    if d.shape[0] != h.shape[0]:
        raise ShapeError(f"atom counts differ: bank {d.shape[0]}, code {h.shape[0]}")
    return kernels.corr3d_mc(d, h)


def conv3d_adjoint(d, r):
    """Exact adjoint of conv3d in the code argument."""
    d = check_bank3d(d)
    r = _as_float_array(r, "cube", 3)
    return kernels.corr3d_mc_adj(d, r)


def conv3d_weight_grad(h, g, kb, ksize):
    """Gradient of <g, conv3d(d, h)> with respect to the bank d."""
    h = _as_float_array(h, "local code", 4)
    g = _as_float_array(g, "cube", 3)
    _check_odd(kb, "3D spectral kernel size")
    _check_odd(ksize, "3D spatial kernel size")
    if h.shape[1:] != g.shape:
        raise ShapeError(f"cube dims differ: {h.shape[1:]} vs {g.shape}")
    return kernels.corr3d_mc_wgrad(h, g, kb, ksize)


def inner_product(a, b):
    """Flat double-precision inner product of two equally sized arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size != b.size:
        raise ShapeError(f"sizes differ: {a.size} vs {b.size}")
    return float(np.dot(a.ravel(), b.ravel()))
