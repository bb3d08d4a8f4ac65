"""Hot loops compiled with numba.

All kernels are serial njit: accumulation order is fixed by the loop nests,
so outputs are bitwise reproducible regardless of thread count. Convolutions
are cross-correlations with zero-padded "same" output; the diff3 family uses
edge-replicate indexing instead (see eqcsc.detail). Loops are tap-outer so
the innermost loop runs contiguously along image rows.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def corr2d_mc(w, s):
    # w: (M, B, k, k), s: (M, H, W) -> (B, H, W)
    M, B, k, _ = w.shape
    H, W = s.shape[1], s.shape[2]
    c = k // 2
    out = np.zeros((B, H, W), dtype=s.dtype)
    for b in range(B):
        for m in range(M):
            for u in range(k):
                i0 = max(0, c - u)
                i1 = min(H, H + c - u)
                for v in range(k):
                    wv = w[m, b, u, v]
                    j0 = max(0, c - v)
                    j1 = min(W, W + c - v)
                    dv = v - c
                    for i in range(i0, i1):
                        ii = i + u - c
                        for j in range(j0, j1):
                            out[b, i, j] += wv * s[m, ii, j + dv]
    return out


@njit(cache=True)
def corr2d_mc_adj(w, r):
    # exact adjoint of corr2d_mc in its second argument
    # w: (M, B, k, k), r: (B, H, W) -> (M, H, W)
    M, B, k, _ = w.shape
    H, W = r.shape[1], r.shape[2]
    c = k // 2
    out = np.zeros((M, H, W), dtype=r.dtype)
    for m in range(M):
        for b in range(B):
            for u in range(k):
                i0 = max(0, u - c)
                i1 = min(H, H + u - c)
                for v in range(k):
                    wv = w[m, b, u, v]
                    j0 = max(0, v - c)
                    j1 = min(W, W + v - c)
                    dv = c - v
                    for i in range(i0, i1):
                        ii = i - u + c
                        for j in range(j0, j1):
                            out[m, i, j] += wv * r[b, ii, j + dv]
    return out


@njit(cache=True)
def corr2d_mc_wgrad(s, g, k):
    # gradient of <g, corr2d_mc(w, s)> with respect to w
    # s: (M, H, W), g: (B, H, W) -> (M, B, k, k)
    M, H, W = s.shape
    B = g.shape[0]
    c = k // 2
    out = np.zeros((M, B, k, k), dtype=s.dtype)
    for m in range(M):
        for b in range(B):
            for u in range(k):
                i0 = max(0, c - u)
                i1 = min(H, H + c - u)
                for v in range(k):
                    j0 = max(0, c - v)
                    j1 = min(W, W + c - v)
                    dv = v - c
                    acc = 0.0
                    for i in range(i0, i1):
                        ii = i + u - c
                        for j in range(j0, j1):
                            acc += g[b, i, j] * s[m, ii, j + dv]
                    out[m, b, u, v] = acc
    return out


@njit(cache=True)
def corr3d_mc(d, h):
    # d: (J, kb, k, k), h: (J, B, H, W) -> (B, H, W)
    J, kb, k, _ = d.shape
    B, H, W = h.shape[1], h.shape[2], h.shape[3]
    cb = kb // 2
    c = k // 2
    out = np.zeros((B, H, W), dtype=h.dtype)
    for b in range(B):
        w0 = max(0, cb - b)
        w1 = min(kb, B + cb - b)
        for a in range(J):
            for wk in range(w0, w1):
                bb = b + wk - cb
                for u in range(k):
                    i0 = max(0, c - u)
                    i1 = min(H, H + c - u)
                    for v in range(k):
                        wv = d[a, wk, u, v]
                        j0 = max(0, c - v)
                        j1 = min(W, W + c - v)
                        dv = v - c
                        for i in range(i0, i1):
                            ii = i + u - c
                            for j in range(j0, j1):
                                out[b, i, j] += wv * h[a, bb, ii, j + dv]
    return out


@njit(cache=True)
def corr3d_mc_adj(d, r):
    # d: (J, kb, k, k), r: (B, H, W) -> (J, B, H, W)
    J, kb, k, _ = d.shape
    B, H, W = r.shape
    cb = kb // 2
    c = k // 2
    out = np.zeros((J, B, H, W), dtype=r.dtype)
    for a in range(J):
        for b in range(B):
            w0 = max(0, b + cb - B + 1)
            w1 = min(kb, b + cb + 1)
            for wk in range(w0, w1):
                bb = b - wk + cb
                for u in range(k):
                    i0 = max(0, u - c)
                    i1 = min(H, H + u - c)
                    for v in range(k):
                        wv = d[a, wk, u, v]
                        j0 = max(0, v - c)
                        j1 = min(W, W + v - c)
                        dv = c - v
                        for i in range(i0, i1):
                            ii = i - u + c
                            for j in range(j0, j1):
                                out[a, b, i, j] += wv * r[bb, ii, j + dv]
    return out


@njit(cache=True)
def corr3d_mc_wgrad(h, g, kb, k):
    # gradient of <g, corr3d_mc(d, h)> with respect to d
    # h: (J, B, H, W), g: (B, H, W) -> (J, kb, k, k)
    J, B, H, W = h.shape
    cb = kb // 2
    c = k // 2
    out = np.zeros((J, kb, k, k), dtype=h.dtype)
    for a in range(J):
        for wk in range(kb):
            b0 = max(0, cb - wk)
            b1 = min(B, B + cb - wk)
            for u in range(k):
                i0 = max(0, c - u)
                i1 = min(H, H + c - u)
                for v in range(k):
                    j0 = max(0, c - v)
                    j1 = min(W, W + c - v)
                    dv = v - c
                    acc = 0.0
                    for b in range(b0, b1):
                        bb = b + wk - cb
                        for i in range(i0, i1):
                            ii = i + u - c
                            for j in range(j0, j1):
                                acc += g[b, i, j] * h[a, bb, ii, j + dv]
                    out[a, wk, u, v] = acc
    return out


@njit(cache=True)
def diff3(x, kern, mode):
    # depthwise 3x3x3 correlation with edge-replicate taps.
    # mode 0: plain; 1: tap minus center; 2: tap minus same-spatial center-band tap;
    # 3: tap minus same-column tap; 4: tap minus same-row tap.
    C, B, H, W = x.shape
    out = np.zeros_like(x)
    for ch in range(C):
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for db in range(-1, 2):
                        nb = min(max(b + db, 0), B - 1)
                        for du in range(-1, 2):
                            ni = min(max(i + du, 0), H - 1)
                            for dv in range(-1, 2):
                                nj = min(max(j + dv, 0), W - 1)
                                v = x[ch, nb, ni, nj]
                                if mode == 1:
                                    v -= x[ch, b, i, j]
                                elif mode == 2:
                                    v -= x[ch, b, ni, nj]
                                elif mode == 3:
                                    v -= x[ch, nb, ni, j]
                                elif mode == 4:
                                    v -= x[ch, nb, i, nj]
                                acc += kern[db + 1, du + 1, dv + 1] * v
                    out[ch, b, i, j] = acc
    return out


@njit(cache=True)
def diff3_bwd(x, kern, mode, dy):
    # reverse-mode of diff3: returns (dx, dkern)
    C, B, H, W = x.shape
    dx = np.zeros_like(x)
    dk = np.zeros((3, 3, 3), dtype=x.dtype)
    for ch in range(C):
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    g = dy[ch, b, i, j]
                    for db in range(-1, 2):
                        nb = min(max(b + db, 0), B - 1)
                        for du in range(-1, 2):
                            ni = min(max(i + du, 0), H - 1)
                            for dv in range(-1, 2):
                                nj = min(max(j + dv, 0), W - 1)
                                kk = kern[db + 1, du + 1, dv + 1]
                                v = x[ch, nb, ni, nj]
                                dx[ch, nb, ni, nj] += kk * g
                                if mode == 1:
                                    v -= x[ch, b, i, j]
                                    dx[ch, b, i, j] -= kk * g
                                elif mode == 2:
                                    v -= x[ch, b, ni, nj]
                                    dx[ch, b, ni, nj] -= kk * g
                                elif mode == 3:
                                    v -= x[ch, nb, ni, j]
                                    dx[ch, nb, ni, j] -= kk * g
                                elif mode == 4:
                                    v -= x[ch, nb, i, nj]
                                    dx[ch, nb, i, nj] -= kk * g
                                dk[db + 1, du + 1, dv + 1] += g * v
    return dx, dk
