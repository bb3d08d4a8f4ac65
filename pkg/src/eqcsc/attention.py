"""Windowed multi-head self-attention over the shared code channels.

The shared code (M, H, W) is treated as an H x W grid of M-dim tokens. Each
stage partitions the grid into non-overlapping w x w windows, runs multi-head
attention inside every window, projects with an output matrix, and adds the
result back onto its input. Stages alternate unshifted and cyclically shifted
(by w // 2) partitions. There is no positional encoding and no feed-forward
sublayer, so all-zero weights make every stage an exact identity.

Spatial dims that are not multiples of w are reflect-padded for the window
pass and cropped afterwards; the backward pass scatter-adds through the same
index maps, keeping gradients exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError


@dataclass
class AttentionStageWeights:
    wq: np.ndarray  # (heads, d, dh)
    wk: np.ndarray  # (heads, d, dh)
    wv: np.ndarray  # (heads, d, dh)
    wo: np.ndarray  # (d, d)

    def validate(self):
        h, d, dh = self.wq.shape
        for name in ("wk", "wv"):
            if getattr(self, name).shape != (h, d, dh):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != {(h, d, dh)}")
        if self.wo.shape != (d, d):
            raise ShapeError(f"wo shape {self.wo.shape} != {(d, d)}")
        if h * dh != d:
            raise ShapeError(f"head dims {h}x{dh} do not cover token dim {d}")


@dataclass
class SpatialPriorWeights:
    stages: list = field(default_factory=list)
    window: int = 4

    def validate(self):
        if self.window < 1:
            raise ShapeError(f"window must be >= 1, got {self.window}")
        for st in self.stages:
            st.validate()


def init_spatial_prior(d, heads, stages, window, rng):
    """Exact-identity start: the output projection is zero, so each residual
    stage passes its input through unchanged and the early fixed-point map
    stays contractive. q/k/v stay random; wo receives gradient regardless of
    its own value, so the stage wakes up as soon as training moves wo."""
    if d % heads != 0:
        raise ShapeError(f"token dim {d} not divisible by heads {heads}")
    dh = d // heads
    out = []
    for _ in range(stages):
        out.append(
            AttentionStageWeights(
                wq=rng.normal(0.0, 1.0 / np.sqrt(d), (heads, d, dh)),
                wk=rng.normal(0.0, 1.0 / np.sqrt(d), (heads, d, dh)),
                wv=rng.normal(0.0, 1.0 / np.sqrt(d), (heads, d, dh)),
                wo=np.zeros((d, d)),
            )
        )
    return SpatialPriorWeights(stages=out, window=window)


def zero_spatial_prior(d, heads, stages, window):
    dh = d // heads
    z = lambda *s: np.zeros(s)
    out = [
        AttentionStageWeights(z(heads, d, dh), z(heads, d, dh), z(heads, d, dh), z(d, d))
        for _ in range(stages)
    ]
    return SpatialPriorWeights(stages=out, window=window)


def _softmax_rows(z):
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def _msa_forward(tokens, stage):
    """tokens: (nw, N, d) -> (out, cache). Attention per window, heads concatenated."""
    heads, d, dh = stage.wq.shape
    scale = 1.0 / np.sqrt(dh)
    qs, ks, vs, attns = [], [], [], []
    outs = np.empty(tokens.shape, dtype=tokens.dtype)
    for i in range(heads):
        q = tokens @ stage.wq[i]
        k = tokens @ stage.wk[i]
        v = tokens @ stage.wv[i]
        z = (q @ k.transpose(0, 2, 1)) * scale
        if not np.all(np.isfinite(z)):
            raise NonFiniteError("window attention logits are not finite")
        a = _softmax_rows(z)
        outs[:, :, i * dh:(i + 1) * dh] = a @ v
        qs.append(q)
        ks.append(k)
        vs.append(v)
        attns.append(a)
    y = outs @ stage.wo
    return y, (tokens, qs, ks, vs, attns, outs)


def _msa_backward(cache, stage, dy):
    tokens, qs, ks, vs, attns, outs = cache
    heads, d, dh = stage.wq.shape
    scale = 1.0 / np.sqrt(dh)
    dwo = np.einsum("wnd,wne->de", outs, dy)
    dconcat = dy @ stage.wo.T
    dtokens = np.zeros_like(tokens)
    dwq = np.empty_like(stage.wq)
    dwk = np.empty_like(stage.wk)
    dwv = np.empty_like(stage.wv)
    for i in range(heads):
        do = dconcat[:, :, i * dh:(i + 1) * dh]
        a = attns[i]
        da = do @ vs[i].transpose(0, 2, 1)
        dv = a.transpose(0, 2, 1) @ do
        dz = (da - np.sum(da * a, axis=-1, keepdims=True)) * a * scale
        dq = dz @ ks[i]
        dk = dz.transpose(0, 2, 1) @ qs[i]
        dtokens += dq @ stage.wq[i].T + dk @ stage.wk[i].T + dv @ stage.wv[i].T
        dwq[i] = np.einsum("wnd,wne->de", tokens, dq)
        dwk[i] = np.einsum("wnd,wne->de", tokens, dk)
        dwv[i] = np.einsum("wnd,wne->de", tokens, dv)
    return dtokens, dwq, dwk, dwv, dwo


def window_msa(tokens, stage):
    """Single-window multi-head attention: (N, d) tokens -> (N, d)."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be (N, d), got {tokens.shape}")
    stage.validate()
    if tokens.shape[1] != stage.wq.shape[1]:
        raise ShapeError(
            f"token dim {tokens.shape[1]} != weight dim {stage.wq.shape[1]}"
        )
    y, _ = _msa_forward(tokens[np.newaxis], stage)
    return y[0]


def _pad_indices(n, w):
    pad = (-n) % w
    return np.pad(np.arange(n), (0, pad), mode="reflect")


def _windows(x, w):
    # (M, Hp, Wp) -> (nwin, w*w, M)
    M, Hp, Wp = x.shape
    nh, nw = Hp // w, Wp // w
    t = x.reshape(M, nh, w, nw, w).transpose(1, 3, 2, 4, 0)
    return np.ascontiguousarray(t).reshape(nh * nw, w * w, M)


def _unwindows(t, M, Hp, Wp, w):
    nh, nw = Hp // w, Wp // w
    x = t.reshape(nh, nw, w, w, M).transpose(4, 0, 2, 1, 3)
    return np.ascontiguousarray(x).reshape(M, Hp, Wp)


def _stage_forward(x, stage, window, shift):
    M, H, W = x.shape
    idx_r = _pad_indices(H, window)
    idx_c = _pad_indices(W, window)
    xp = x[:, idx_r][:, :, idx_c]
    if shift:
        xp = np.roll(xp, (-shift, -shift), axis=(1, 2))
    tokens = _windows(xp, window)
    y, attn_cache = _msa_forward(tokens, stage)
    yp = _unwindows(y, M, xp.shape[1], xp.shape[2], window)
    if shift:
        yp = np.roll(yp, (shift, shift), axis=(1, 2))
    out = x + yp[:, :H, :W]
    return out, (attn_cache, idx_r, idx_c, (M, H, W))


def _stage_backward(cache, stage, window, shift, dout):
    attn_cache, idx_r, idx_c, (M, H, W) = cache
    Hp, Wp = len(idx_r), len(idx_c)
    dyp = np.zeros((M, Hp, Wp), dtype=dout.dtype)
    dyp[:, :H, :W] = dout
    if shift:
        dyp = np.roll(dyp, (-shift, -shift), axis=(1, 2))
    dy = _windows(dyp, window)
    dtokens, dwq, dwk, dwv, dwo = _msa_backward(attn_cache, stage, dy)
    dxp = _unwindows(dtokens, M, Hp, Wp, window)
    if shift:
        dxp = np.roll(dxp, (shift, shift), axis=(1, 2))
    dx = np.zeros((M, Hp, W), dtype=dout.dtype)
    np.add.at(dx, (slice(None), slice(None), idx_c), dxp)
    dx2 = np.zeros((M, H, W), dtype=dout.dtype)
    np.add.at(dx2, (slice(None), idx_r, slice(None)), dx)
    dx2 += dout
    return dx2, {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}


def net1_forward(s, prior):
    """Apply the attention stack with residual stages; returns (out, cache)."""
    prior.validate()
    s = np.asarray(s)
    if s.ndim != 3:
        raise ShapeError(f"shared code must be (M, H, W), got {s.shape}")
    if prior.stages and s.shape[0] != prior.stages[0].wq.shape[1]:
        raise ShapeError(
            f"channel dim {s.shape[0]} != token dim {prior.stages[0].wq.shape[1]}"
        )
    caches = []
    x = s
    for si, stage in enumerate(prior.stages):
        shift = 0 if si % 2 == 0 else prior.window // 2
        x, cache = _stage_forward(x, stage, prior.window, shift)
        caches.append(cache)
    return x, caches


def net1_backward(caches, prior, dout):
    """Reverse-mode through net1_forward; returns (ds, per-stage grad dicts)."""
    grads = [None] * len(prior.stages)
    dx = dout
    for si in range(len(prior.stages) - 1, -1, -1):
        shift = 0 if si % 2 == 0 else prior.window // 2
        dx, g = _stage_backward(caches[si], prior.stages[si], prior.window, shift, dx)
        grads[si] = g
    return dx, grads


def net1_apply(s, prior):
    out, _ = net1_forward(s, prior)
    return out
