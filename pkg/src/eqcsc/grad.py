"""Truncated unrolled gradients through the layer map.

Training differentiates a short L-step unroll of the layer map started from
the solver's equilibrium estimate, treating the start state as a constant
(no gradient flows into how the estimate was produced). unroll_forward runs
the steps and records per-step caches; phantom_backward replays them in
reverse with hand-written vector-Jacobian products for every primitive and
returns one gradient array per parameter leaf.

At a fixed point this unrolled gradient equals the order-L Neumann truncation
of the implicit-function gradient; neumann_reference_grad materializes the
step Jacobian by finite differences and evaluates that truncation directly,
as an independent cross-check for small states.
"""

from dataclasses import dataclass

import numpy as np

from . import attention, conv, detail
from .model import DeqState, layer_step, reconstruct, sigmoid, soft_threshold

FD_EPS = 1e-6
NEUMANN_STATE_LIMIT = 200


@dataclass
class StepCache:
    s_in: np.ndarray
    h_in: np.ndarray
    r1: np.ndarray
    a1: np.ndarray
    net1_cache: object
    s_out: np.ndarray
    r2: np.ndarray
    a2: np.ndarray
    net2_cache: object


@dataclass
class UnrollTape:
    steps: list
    final: DeqState
    y: np.ndarray

    @property
    def length(self):
        return len(self.steps)

    @property
    def nbytes(self):
        total = self.final.s.nbytes + self.final.h.nbytes + self.y.nbytes
        for st in self.steps:
            for val in vars(st).values():
                total += _nbytes(val)
        return total


def _nbytes(obj):
    if isinstance(obj, np.ndarray):
        return obj.nbytes
    if isinstance(obj, (list, tuple)):
        return sum(_nbytes(v) for v in obj)
    if isinstance(obj, dict):
        return sum(_nbytes(v) for v in obj.values())
    return 0


def _step_with_cache(state, y, params):
    """One layer step recording everything the backward pass needs."""
    r1 = y - conv.conv2d_shared(params.dict2d, state.s) - conv.conv3d(
        params.dict3d, state.h
    )
    a1 = state.s + conv.conv2d_shared_adjoint(params.dict2d_t, r1)
    t1 = soft_threshold(a1, params.theta1)
    net1_cache = None
    if params.spatial_prior is not None:
        s_out, net1_cache = attention.net1_forward(t1, params.spatial_prior)
    else:
        s_out = t1
    r2 = y - conv.conv2d_shared(params.dict2d, s_out) - conv.conv3d(
        params.dict3d, state.h
    )
    a2 = state.h + conv.conv3d_adjoint(params.dict3d_t, r2)
    t2 = soft_threshold(a2, params.theta2)
    net2_cache = None
    if params.detail_prior is not None:
        h_out, net2_cache = detail.net2_forward(t2, params.detail_prior)
    else:
        h_out = t2
    cache = StepCache(
        s_in=state.s, h_in=state.h, r1=r1, a1=a1, net1_cache=net1_cache,
        s_out=s_out, r2=r2, a2=a2, net2_cache=net2_cache,
    )
    return DeqState(s_out, h_out), cache


def unroll_forward(state, y, length, params):
    """Run `length` layer steps from a constant start; returns (final, tape)."""
    if length < 1:
        raise ValueError(f"unroll length must be >= 1, got {length}")
    y = np.asarray(y, dtype=np.float64)
    cur = state
    steps = []
    for _ in range(length):
        cur, cache = _step_with_cache(cur, y, params)
        steps.append(cache)
    return cur, UnrollTape(steps=steps, final=cur, y=y)


def zero_grads(params):
    return {name: np.zeros_like(arr) for name, arr in params.leaves()}


def _shrink_backward(a, theta, dt):
    """VJPs of t = soft(a, theta): returns (da, dtheta)."""
    mask = np.abs(a) > theta
    da = np.where(mask, dt, 0.0)
    dtheta = -float(np.sum(np.sign(a) * da))
    return da, dtheta


def _step_backward(cache, params, ds, dh, grads):
    """VJP of one layer step: cotangents (ds, dh) on its outputs produce
    cotangents on its input state, accumulating parameter gradients."""
    k2 = params.dict2d.shape[2]
    kb, k3 = params.dict3d.shape[1], params.dict3d.shape[2]
    sig1 = float(sigmoid(params.theta1_raw))
    sig2 = float(sigmoid(params.theta2_raw))

    # local-code branch: h_out = net2(soft(h_in + A3t'(r2), theta2))
    dt2 = dh
    if params.detail_prior is not None:
        dt2, g2 = detail.net2_backward(cache.net2_cache, params.detail_prior, dh)
        for nm, g in g2.items():
            grads[f"dp.{nm}"] += g
    da2, dtheta2 = _shrink_backward(cache.a2, params.theta2, dt2)
    grads["theta2_raw"] += dtheta2 * sig2
    dh_in = da2.copy()
    dr2 = conv.conv3d(params.dict3d_t, da2)
    grads["dict3d_t"] += conv.conv3d_weight_grad(da2, cache.r2, kb, k3)
    # r2 = y - A2(s_out) - A3(h_in)
    ds_total = ds - conv.conv2d_shared_adjoint(params.dict2d, dr2)
    grads["dict2d"] -= conv.conv2d_shared_weight_grad(cache.s_out, dr2, k2)
    dh_in -= conv.conv3d_adjoint(params.dict3d, dr2)
    grads["dict3d"] -= conv.conv3d_weight_grad(cache.h_in, dr2, kb, k3)

    # shared-code branch: s_out = net1(soft(s_in + A2t'(r1), theta1))
    dt1 = ds_total
    if params.spatial_prior is not None:
        dt1, g1 = attention.net1_backward(
            cache.net1_cache, params.spatial_prior, ds_total
        )
        for i, g in enumerate(g1):
            for nm in ("wq", "wk", "wv", "wo"):
                grads[f"sp.{i}.{nm}"] += g[nm]
    da1, dtheta1 = _shrink_backward(cache.a1, params.theta1, dt1)
    grads["theta1_raw"] += dtheta1 * sig1
    ds_in = da1.copy()
    dr1 = conv.conv2d_shared(params.dict2d_t, da1)
    grads["dict2d_t"] += conv.conv2d_shared_weight_grad(da1, cache.r1, k2)
    # r1 = y - A2(s_in) - A3(h_in)
    ds_in -= conv.conv2d_shared_adjoint(params.dict2d, dr1)
    grads["dict2d"] -= conv.conv2d_shared_weight_grad(cache.s_in, dr1, k2)
    dh_in -= conv.conv3d_adjoint(params.dict3d, dr1)
    grads["dict3d"] -= conv.conv3d_weight_grad(cache.h_in, dr1, kb, k3)
    return ds_in, dh_in


def _recon_backward(state, dxhat, params, grads):
    """VJP of xhat = A2(s) + A3(h); returns state cotangents."""
    k2 = params.dict2d.shape[2]
    kb, k3 = params.dict3d.shape[1], params.dict3d.shape[2]
    ds = conv.conv2d_shared_adjoint(params.dict2d, dxhat)
    dh = conv.conv3d_adjoint(params.dict3d, dxhat)
    grads["dict2d"] += conv.conv2d_shared_weight_grad(state.s, dxhat, k2)
    grads["dict3d"] += conv.conv3d_weight_grad(state.h, dxhat, kb, k3)
    return ds, dh


def phantom_backward(tape, dxhat, params):
    """Gradient of loss(reconstruct(unroll(state, y))) for the given output
    cotangent dxhat, with the unroll start treated as constant. Returns a
    dict keyed like params.leaves()."""
    grads = zero_grads(params)
    ds, dh = _recon_backward(tape.final, np.asarray(dxhat), params, grads)
    for cache in reversed(tape.steps):
        ds, dh = _step_backward(cache, params, ds, dh, grads)
    return grads


def finite_diff_grad(loss_fn, params, eps=FD_EPS, leaf_names=None):
    """Central-difference gradient of loss_fn(params) per parameter leaf.

    Intended as a test oracle and for the CLI gradient check; cost is two
    loss evaluations per scalar parameter.
    """
    names = [n for n, _ in params.leaves()]
    if leaf_names is not None:
        unknown = set(leaf_names) - set(names)
        if unknown:
            raise KeyError(f"unknown parameter leaves: {sorted(unknown)}")
        names = [n for n in names if n in set(leaf_names)]
    work = params.copy()
    leaf = dict(work.leaves())
    out = {}
    for name in names:
        arr = leaf[name]
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn(work)
            flat[i] = orig - eps
            lo = loss_fn(work)
            flat[i] = orig
            gf[i] = (hi - lo) / (2 * eps)
        out[name] = g
    return out


def neumann_reference_grad(params, y, state, dxhat, length, eps=FD_EPS):
    """Order-`length` Neumann-series gradient at a fixed point `state`,
    with the step Jacobian materialized by central finite differences.
    Refuses packed states larger than NEUMANN_STATE_LIMIT entries."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    y = np.asarray(y, dtype=np.float64)
    vec = state.pack()
    n = vec.size
    if n > NEUMANN_STATE_LIMIT:
        raise ValueError(
            f"packed state has {n} entries; refusing to materialize a Jacobian "
            f"beyond {NEUMANN_STATE_LIMIT}"
        )
    s_shape, h_shape = state.s.shape, state.h.shape

    def f(v):
        st = DeqState.unpack(v, s_shape, h_shape)
        return layer_step(st, y, params).pack()

    jac = np.empty((n, n))
    for i in range(n):
        probe = vec.copy()
        probe[i] = vec[i] + eps
        hi = f(probe)
        probe[i] = vec[i] - eps
        lo = f(probe)
        jac[:, i] = (hi - lo) / (2 * eps)

    grads = zero_grads(params)
    ds, dh = _recon_backward(state, np.asarray(dxhat), params, grads)
    g = np.concatenate([ds.ravel(), dh.ravel()])
    v = g.copy()
    term = g
    for _ in range(1, length):
        term = jac.T @ term
        v += term
    # one analytic step VJP at the fixed point carries v onto the parameters
    _, tape = unroll_forward(state, y, 1, params)
    dsv = v[: state.s.size].reshape(s_shape)
    dhv = v[state.s.size:].reshape(h_shape)
    _step_backward(tape.steps[0], params, dsv, dhv, grads)
    return grads
