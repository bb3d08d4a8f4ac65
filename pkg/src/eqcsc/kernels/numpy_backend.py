"""Pure-numpy mirrors of the numba kernels.

Same operator semantics, vectorized over pixels with a short python loop over
kernel taps. Kept as a fallback (EQCSC_BACKEND=numpy) and as a cross-check
implementation for the backend-equivalence tests.
"""

import numpy as np


def _pad2(s, c):
    M, H, W = s.shape
    sp = np.zeros((M, H + 2 * c, W + 2 * c), dtype=s.dtype)
    sp[:, c:c + H, c:c + W] = s
    return sp


def corr2d_mc(w, s):
    M, B, k, _ = w.shape
    _, H, W = s.shape
    c = k // 2
    sp = _pad2(s, c)
    out = np.zeros((B, H, W), dtype=s.dtype)
    for u in range(k):
        for v in range(k):
            out += np.einsum("mb,mhw->bhw", w[:, :, u, v], sp[:, u:u + H, v:v + W])
    return out


def corr2d_mc_adj(w, r):
    M, B, k, _ = w.shape
    _, H, W = r.shape
    c = k // 2
    rp = np.zeros((B, H + 2 * c, W + 2 * c), dtype=r.dtype)
    rp[:, c:c + H, c:c + W] = r
    out = np.zeros((M, H, W), dtype=r.dtype)
    for u in range(k):
        uu = 2 * c - u
        for v in range(k):
            vv = 2 * c - v
            out += np.einsum("mb,bhw->mhw", w[:, :, u, v], rp[:, uu:uu + H, vv:vv + W])
    return out


def corr2d_mc_wgrad(s, g, k):
    M, H, W = s.shape
    B = g.shape[0]
    c = k // 2
    sp = _pad2(s, c)
    out = np.zeros((M, B, k, k), dtype=s.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u, v] = np.einsum("mhw,bhw->mb", sp[:, u:u + H, v:v + W], g)
    return out


def _pad3(h, cb, c):
    J, B, H, W = h.shape
    hp = np.zeros((J, B + 2 * cb, H + 2 * c, W + 2 * c), dtype=h.dtype)
    hp[:, cb:cb + B, c:c + H, c:c + W] = h
    return hp


def corr3d_mc(d, h):
    J, kb, k, _ = d.shape
    _, B, H, W = h.shape
    cb = kb // 2
    c = k // 2
    hp = _pad3(h, cb, c)
    out = np.zeros((B, H, W), dtype=h.dtype)
    for wk in range(kb):
        for u in range(k):
            for v in range(k):
                out += np.einsum(
                    "j,jbhw->bhw", d[:, wk, u, v], hp[:, wk:wk + B, u:u + H, v:v + W]
                )
    return out


def corr3d_mc_adj(d, r):
    J, kb, k, _ = d.shape
    B, H, W = r.shape
    cb = kb // 2
    c = k // 2
    rp = np.zeros((B + 2 * cb, H + 2 * c, W + 2 * c), dtype=r.dtype)
    rp[cb:cb + B, c:c + H, c:c + W] = r
    out = np.zeros((J, B, H, W), dtype=r.dtype)
    for wk in range(kb):
        ww = 2 * cb - wk
        for u in range(k):
            uu = 2 * c - u
            for v in range(k):
                vv = 2 * c - v
                out += np.einsum(
                    "j,bhw->jbhw", d[:, wk, u, v], rp[ww:ww + B, uu:uu + H, vv:vv + W]
                )
    return out


def corr3d_mc_wgrad(h, g, kb, k):
    J, B, H, W = h.shape
    cb = kb // 2
    c = k // 2
    hp = _pad3(h, cb, c)
    out = np.zeros((J, kb, k, k), dtype=h.dtype)
    for wk in range(kb):
        for u in range(k):
            for v in range(k):
                out[:, wk, u, v] = np.einsum(
                    "jbhw,bhw->j", hp[:, wk:wk + B, u:u + H, v:v + W], g
                )
    return out


def _take(x, db, du, dv):
    # edge-replicate gather of the (db, du, dv) neighbor
    _, B, H, W = x.shape
    bi = np.clip(np.arange(B) + db, 0, B - 1)
    ri = np.clip(np.arange(H) + du, 0, H - 1)
    ci = np.clip(np.arange(W) + dv, 0, W - 1)
    return x[:, bi[:, None, None], ri[None, :, None], ci[None, None, :]]


def _fold(v, off, axis):
    # adjoint of the edge-replicate shift along one axis
    if off == 0:
        return v
    out = np.zeros_like(v)
    src = [slice(None)] * v.ndim
    dst = [slice(None)] * v.ndim
    edge = [slice(None)] * v.ndim
    if off == 1:
        src[axis] = slice(None, -1)
        dst[axis] = slice(1, None)
        edge[axis] = slice(-1, None)
    else:
        src[axis] = slice(1, None)
        dst[axis] = slice(None, -1)
        edge[axis] = slice(None, 1)
    out[tuple(dst)] = v[tuple(src)]
    out[tuple(edge)] += v[tuple(edge)]
    return out


def _scatter(v, db, du, dv):
    return _fold(_fold(_fold(v, db, 1), du, 2), dv, 3)


_REF_TAPS = {
    2: lambda db, du, dv: (0, du, dv),
    3: lambda db, du, dv: (db, du, 0),
    4: lambda db, du, dv: (db, 0, dv),
}


def diff3(x, kern, mode):
    out = np.zeros_like(x)
    for db in (-1, 0, 1):
        for du in (-1, 0, 1):
            for dv in (-1, 0, 1):
                kk = kern[db + 1, du + 1, dv + 1]
                nb = _take(x, db, du, dv)
                if mode == 0:
                    out += kk * nb
                elif mode == 1:
                    out += kk * (nb - x)
                else:
                    rb, ru, rv = _REF_TAPS[mode](db, du, dv)
                    out += kk * (nb - _take(x, rb, ru, rv))
    return out


def diff3_bwd(x, kern, mode, dy):
    dx = np.zeros_like(x)
    dk = np.zeros((3, 3, 3), dtype=x.dtype)
    for db in (-1, 0, 1):
        for du in (-1, 0, 1):
            for dv in (-1, 0, 1):
                kk = kern[db + 1, du + 1, dv + 1]
                nb = _take(x, db, du, dv)
                if mode == 0:
                    diff = nb
                elif mode == 1:
                    diff = nb - x
                else:
                    rb, ru, rv = _REF_TAPS[mode](db, du, dv)
                    diff = nb - _take(x, rb, ru, rv)
                dk[db + 1, du + 1, dv + 1] = float(np.sum(dy * diff))
                kg = kk * dy
                dx += _scatter(kg, db, du, dv)
                if mode == 1:
                    dx -= kg
                elif mode in _REF_TAPS:
                    rb, ru, rv = _REF_TAPS[mode](db, du, dv)
                    dx -= _scatter(kg, rb, ru, rv)
    return dx, dk
