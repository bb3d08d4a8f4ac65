"""Layer map of the equilibrium denoiser.

The state alpha = (S, H) holds a shared spatial code S (M, H, W) and a local
spectral-spatial code H (J, B, H, W). One layer step performs two proximal
updates in Gauss-Seidel order against the noisy cube Y:

    S' = net1( soft( S + A2d_t(Y - A2d(S) - A3d(H)), theta1 ) )
    H' = net2( soft( H + A3d_t(Y - A2d(S') - A3d(H)), theta2 ) )

where A2d/A3d are the dictionary synthesis operators, the *_t maps apply the
adjoint-shaped operator with separately learned weights (initialized to the
dictionary itself, i.e. to the exact transpose), and net1/net2 are the priors
from eqcsc.attention and eqcsc.detail (None disables a prior entirely).

Thresholds are kept nonnegative by storing unconstrained scalars and mapping
through softplus.
"""

from dataclasses import dataclass, field

import numpy as np

from . import attention, conv, detail
from .errors import NonFiniteError, ShapeError


def softplus(x):
    # stable: log1p(exp(-|x|)) + max(x, 0)
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def inv_softplus(y):
    if y <= 0:
        raise ValueError(f"softplus output must be positive, got {y}")
    # log(expm1(y)), stable for large y
    return float(np.log(np.expm1(y))) if y < 30 else float(y)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class ModelConfig:
    atoms2d: int = 32
    atoms3d: int = 8
    kernel2d: int = 5
    kernel3d_space: int = 3
    kernel3d_bands: int = 3
    attn_stages: int = 4
    attn_heads: int = 4
    window: int = 4
    theta_init: float = 0.01
    precision: str = "float64"

    def validate(self):
        if self.atoms2d < 1 or self.atoms3d < 1:
            raise ValueError("atom counts must be positive")
        for k in (self.kernel2d, self.kernel3d_space, self.kernel3d_bands):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and positive, got {k}")
        if self.atoms2d % self.attn_heads != 0:
            raise ValueError(
                f"atoms2d {self.atoms2d} must divide into {self.attn_heads} heads"
            )
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision}")


@dataclass
class DeqState:
    s: np.ndarray  # (M, H, W)
    h: np.ndarray  # (J, B, H, W)

    def pack(self):
        return np.concatenate([self.s.ravel(), self.h.ravel()])

    @staticmethod
    def unpack(vec, s_shape, h_shape):
        ns = int(np.prod(s_shape))
        return DeqState(
            s=vec[:ns].reshape(s_shape), h=vec[ns:].reshape(h_shape)
        )

    def copy(self):
        return DeqState(self.s.copy(), self.h.copy())


@dataclass
class ModelParams:
    dict2d: np.ndarray    # (M, B, k, k)
    dict2d_t: np.ndarray  # same shape, adjoint-role weights
    dict3d: np.ndarray    # (J, kb, k3, k3)
    dict3d_t: np.ndarray
    theta1_raw: np.ndarray  # () unconstrained; threshold = softplus
    theta2_raw: np.ndarray
    spatial_prior: object = None  # attention.SpatialPriorWeights or None
    detail_prior: object = None   # detail.DetailPriorWeights or None
    meta: dict = field(default_factory=dict)

    @property
    def theta1(self):
        return float(softplus(self.theta1_raw))

    @property
    def theta2(self):
        return float(softplus(self.theta2_raw))

    @property
    def bands(self):
        return self.dict2d.shape[1]

    def state_shapes(self, height, width):
        m = self.dict2d.shape[0]
        j = self.dict3d.shape[0]
        return (m, height, width), (j, self.bands, height, width)

    def zero_state(self, height, width):
        s_shape, h_shape = self.state_shapes(height, width)
        dt = self.dict2d.dtype
        return DeqState(np.zeros(s_shape, dtype=dt), np.zeros(h_shape, dtype=dt))

    def leaves(self):
        """Fixed-order (name, array) pairs covering every learnable tensor."""
        out = [
            ("dict2d", self.dict2d),
            ("dict2d_t", self.dict2d_t),
            ("dict3d", self.dict3d),
            ("dict3d_t", self.dict3d_t),
            ("theta1_raw", self.theta1_raw),
            ("theta2_raw", self.theta2_raw),
        ]
        if self.spatial_prior is not None:
            for i, st in enumerate(self.spatial_prior.stages):
                for nm in ("wq", "wk", "wv", "wo"):
                    out.append((f"sp.{i}.{nm}", getattr(st, nm)))
        if self.detail_prior is not None:
            for nm, _ in detail.BRANCHES:
                out.append((f"dp.{nm}", getattr(self.detail_prior, nm)))
            out.append(("dp.attn1", self.detail_prior.attn1))
            out.append(("dp.attn2", self.detail_prior.attn2))
        return out

    def copy(self):
        sp = None
        if self.spatial_prior is not None:
            sp = attention.SpatialPriorWeights(
                stages=[
                    attention.AttentionStageWeights(
                        st.wq.copy(), st.wk.copy(), st.wv.copy(), st.wo.copy()
                    )
                    for st in self.spatial_prior.stages
                ],
                window=self.spatial_prior.window,
            )
        dp = None
        if self.detail_prior is not None:
            dp = detail.DetailPriorWeights(
                *(getattr(self.detail_prior, nm).copy()
                  for nm in ("plain", "central", "spectral", "horiz", "vert",
                             "attn1", "attn2"))
            )
        return ModelParams(
            dict2d=self.dict2d.copy(),
            dict2d_t=self.dict2d_t.copy(),
            dict3d=self.dict3d.copy(),
            dict3d_t=self.dict3d_t.copy(),
            theta1_raw=self.theta1_raw.copy(),
            theta2_raw=self.theta2_raw.copy(),
            spatial_prior=sp,
            detail_prior=dp,
            meta=dict(self.meta),
        )

    def astype(self, dtype):
        return self.with_leaves([a.astype(dtype) for _, a in self.leaves()])

    def with_leaves(self, arrays):
        """Rebuild params from arrays listed in leaves() order."""
        new = self.copy()
        # asarray keeps ndarrays intact and rewraps the scalars numpy
        # produces from 0-d arithmetic (e.g. updated thresholds)
        named = dict(
            zip([n for n, _ in self.leaves()], [np.asarray(a) for a in arrays])
        )
        new.dict2d = named["dict2d"]
        new.dict2d_t = named["dict2d_t"]
        new.dict3d = named["dict3d"]
        new.dict3d_t = named["dict3d_t"]
        new.theta1_raw = named["theta1_raw"]
        new.theta2_raw = named["theta2_raw"]
        if new.spatial_prior is not None:
            for i, st in enumerate(new.spatial_prior.stages):
                st.wq = named[f"sp.{i}.wq"]
                st.wk = named[f"sp.{i}.wk"]
                st.wv = named[f"sp.{i}.wv"]
                st.wo = named[f"sp.{i}.wo"]
        if new.detail_prior is not None:
            for nm in ("plain", "central", "spectral", "horiz", "vert", "attn1", "attn2"):
                setattr(new.detail_prior, nm, named[f"dp.{nm}"])
        return new


INIT_OPERATOR_NORM = 0.9


def init_model_params(cfg, bands, rng, with_priors=True):
    """Draw zero-mean normal dictionaries, then rescale both banks jointly so
    the measured synthesis operator norm is INIT_OPERATOR_NORM. Keeping the
    norm below 1 makes the residual feedback step nonexpansive, so early
    solves behave; the raw stds alone land well above 1. Adjoint weights
    start as exact transposes (copies of the scaled banks)."""
    cfg.validate()
    m, j = cfg.atoms2d, cfg.atoms3d
    k, ks, kb = cfg.kernel2d, cfg.kernel3d_space, cfg.kernel3d_bands
    std2 = 1.0 / (k * np.sqrt(m))
    std3 = 1.0 / (ks * np.sqrt(ks * j))
    # atoms keep their raw sample means: zero-sum kernels could only produce
    # zero-mean outputs, leaving the data's mean level unrepresentable
    d2 = rng.normal(0.0, std2, (m, bands, k, k))
    d3 = rng.normal(0.0, std3, (j, kb, ks, ks))
    traw = inv_softplus(cfg.theta_init)
    sp = dp = None
    if with_priors:
        sp = attention.init_spatial_prior(m, cfg.attn_heads, cfg.attn_stages, cfg.window, rng)
        dp = detail.init_detail_prior(rng)
    params = ModelParams(
        dict2d=d2,
        dict2d_t=d2,
        dict3d=d3,
        dict3d_t=d3,
        theta1_raw=np.array(traw),
        theta2_raw=np.array(traw),
        spatial_prior=sp,
        detail_prior=dp,
        meta={"config": cfg},
    )
    grid = 4 * max(k, ks)
    norm = synthesis_operator_norm(params, grid, grid, iters=50, seed=0)
    scale = INIT_OPERATOR_NORM / norm
    params.dict2d = d2 * scale
    params.dict3d = d3 * scale
    params.dict2d_t = params.dict2d.copy()
    params.dict3d_t = params.dict3d.copy()
    params.meta["init_operator_norm"] = norm
    if cfg.precision == "float32":
        params = params.astype(np.float32)
    return params


def soft_threshold(x, theta):
    """Elementwise sign(x) * max(|x| - theta, 0); theta must be >= 0."""
    if theta < 0:
        raise ValueError(f"threshold must be nonnegative, got {theta}")
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def _check_finite(arr, stage):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values after {stage}")


def residual_cube(y, s, h, params):
    return y - conv.conv2d_shared(params.dict2d, s) - conv.conv3d(params.dict3d, h)


def update_shared_code(state, y, params):
    """One proximal update of the shared code; local code held fixed."""
    r = residual_cube(y, state.s, state.h, params)
    _check_finite(r, "shared-code residual")
    a = state.s + conv.conv2d_shared_adjoint(params.dict2d_t, r)
    t = soft_threshold(a, params.theta1)
    _check_finite(t, "shared-code shrinkage")
    if params.spatial_prior is not None:
        t = attention.net1_apply(t, params.spatial_prior)
        _check_finite(t, "shared-code prior")
    return t


def update_local_code(s_new, state, y, params):
    """One proximal update of the local code using the freshly updated S."""
    r = residual_cube(y, s_new, state.h, params)
    _check_finite(r, "local-code residual")
    a = state.h + conv.conv3d_adjoint(params.dict3d_t, r)
    t = soft_threshold(a, params.theta2)
    _check_finite(t, "local-code shrinkage")
    if params.detail_prior is not None:
        t = detail.net2_apply(t, params.detail_prior)
        _check_finite(t, "local-code prior")
    return t


def layer_step(state, y, params):
    """One full Gauss-Seidel sweep over both codes."""
    y = np.asarray(y)
    if y.ndim != 3 or y.shape[0] != params.bands:
        raise ShapeError(f"cube shape {y.shape} does not match {params.bands} bands")
    s_new = update_shared_code(state, y, params)
    h_new = update_local_code(s_new, state, y, params)
    return DeqState(s_new, h_new)


def reconstruct(state, params):
    """Denoised cube: shared synthesis plus local synthesis."""
    return conv.conv2d_shared(params.dict2d, state.s) + conv.conv3d(
        params.dict3d, state.h
    )


def data_objective(y, s, h, params, lam1, lam2):
    """0.5 * ||Y - A2d(S) - A3d(H)||^2 + lam1 ||S||_1 + lam2 ||H||_1."""
    r = residual_cube(y, s, h, params)
    return 0.5 * float(np.sum(r * r)) + lam1 * float(np.sum(np.abs(s))) + lam2 * float(
        np.sum(np.abs(h))
    )


def synthesis_operator_norm(params, height, width, iters=60, seed=0):
    """Power-iteration estimate of the norm of (S, H) -> A2d(S) + A3d(H)."""
    rng = np.random.default_rng(seed)
    s_shape, h_shape = params.state_shapes(height, width)
    s = rng.standard_normal(s_shape)
    h = rng.standard_normal(h_shape)
    norm = np.sqrt(np.sum(s * s) + np.sum(h * h))
    s /= norm
    h /= norm
    est = 0.0
    for _ in range(iters):
        cube = conv.conv2d_shared(params.dict2d, s) + conv.conv3d(params.dict3d, h)
        s2 = conv.conv2d_shared_adjoint(params.dict2d, cube)
        h2 = conv.conv3d_adjoint(params.dict3d, cube)
        norm = np.sqrt(np.sum(s2 * s2) + np.sum(h2 * h2))
        if norm == 0.0:
            return 0.0
        est = np.sqrt(np.sum(cube * cube))
        s, h = s2 / norm, h2 / norm
    return float(est)
