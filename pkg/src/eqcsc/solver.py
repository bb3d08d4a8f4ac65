"""Fixed-point solvers for the layer map.

Both solvers iterate x <- f(x) and measure the relative residual

    r(x) = ||f(x) - x||_2 / (||x||_2 + 1e-12)

on the current iterate before any update, so a converged solve returns the
exact vector whose residual was recorded. The accelerated solver keeps the
last m (x, f(x)) pairs, finds the affine combination of history residuals
with the smallest norm (ridge-regularized least squares on the normalization
constraint), and mixes:

    x_next = (1 - beta) * X gamma + beta * F gamma

The first m iterations are plain updates (history warm-up). With m = 1 the
history holds a single pair and the update falls back to x_next = f(x), so
m = 1, beta = 1 reproduces the plain iteration bit for bit.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .model import DeqState, layer_step

DIVERGENCE_FACTOR = 1e6


@dataclass
class SolverConfig:
    method: str = "anderson"
    tol: float = 1e-3
    max_iter: int = 30
    anderson_m: int = 5
    anderson_beta: float = 1.0
    ridge: float = 1e-10

    def validate(self):
        if self.method not in ("anderson", "naive"):
            raise ValueError(f"method must be 'anderson' or 'naive', got {self.method!r}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.anderson_m < 1:
            raise ValueError(f"anderson_m must be >= 1, got {self.anderson_m}")
        if not 0.0 < self.anderson_beta <= 1.0:
            raise ValueError(
                f"anderson_beta must be in (0, 1], got {self.anderson_beta}"
            )
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")


@dataclass
class SolveTrace:
    method: str
    residuals: list = field(default_factory=list)
    converged: bool = False
    gamma_fallbacks: int = 0

    @property
    def iterations(self):
        """Number of map evaluations performed."""
        return len(self.residuals)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual"])
            for i, r in enumerate(self.residuals):
                w.writerow([i, repr(float(r))])

    def summary(self):
        tail = self.residuals[-1] if self.residuals else float("nan")
        return (
            f"{self.method}: {'converged' if self.converged else 'stopped'} "
            f"after {self.iterations} iters, residual {tail:.3e}, "
            f"gamma fallbacks {self.gamma_fallbacks}"
        )


def residual_norm(x, fx):
    d = fx - x
    return float(np.linalg.norm(d) / (np.linalg.norm(x) + 1e-12))


def _residual_pair(x, fx):
    """(state-normalized residual, absolute residual)."""
    d = fx - x
    na = float(np.linalg.norm(d))
    return na / (float(np.linalg.norm(x)) + 1e-12), na


def _check_divergence(r_abs, r0_abs, trace):
    # the normalized residual plateaus when the state grows geometrically,
    # so runaway iterations are detected on the absolute residual instead
    if not np.isfinite(r_abs) or (r0_abs > 0 and r_abs > DIVERGENCE_FACTOR * r0_abs):
        raise DivergenceError(
            f"residual {r_abs:.3e} exceeds {DIVERGENCE_FACTOR:.0e} x initial "
            f"{r0_abs:.3e}",
            trace=trace,
        )


def iterate_naive(step, x0, cfg, callback=None):
    """Plain fixed-point iteration; returns (x, trace)."""
    cfg.validate()
    trace = SolveTrace(method="naive")
    x = np.asarray(x0, dtype=np.float64)
    r0_abs = None
    for t in range(cfg.max_iter):
        fx = step(x)
        r, r_abs = _residual_pair(x, fx)
        trace.residuals.append(r)
        if callback is not None:
            callback(t, x, r)
        if r <= cfg.tol:
            trace.converged = True
            return x, trace
        if r0_abs is None:
            r0_abs = r_abs
        _check_divergence(r_abs, r0_abs, trace)
        x = fx
    return x, trace


def solve_gamma(gmat, ridge):
    """Mixing weights for history residual matrix gmat (n, k).

    Solves (G^T G + ridge I) u = 1 and normalizes u to sum 1. Returns
    (gamma, fallback); on a singular or non-finite solve the weights
    concentrate on the newest history entry and fallback is True.
    """
    k = gmat.shape[1]
    a = gmat.T @ gmat + ridge * np.eye(k)
    ones = np.ones(k)
    try:
        u = np.linalg.solve(a, ones)
    except np.linalg.LinAlgError:
        u = None
    if u is None or not np.all(np.isfinite(u)) or abs(u.sum()) < 1e-300:
        gamma = np.zeros(k)
        gamma[-1] = 1.0
        return gamma, True
    return u / u.sum(), False


def anderson_solve(step, x0, cfg, callback=None):
    """History-accelerated fixed-point iteration; returns (x, trace)."""
    cfg.validate()
    trace = SolveTrace(method="anderson")
    x = np.asarray(x0, dtype=np.float64)
    m = cfg.anderson_m
    beta = cfg.anderson_beta
    hist_x, hist_f = [], []
    r0_abs = None
    for t in range(cfg.max_iter):
        fx = step(x)
        r, r_abs = _residual_pair(x, fx)
        trace.residuals.append(r)
        if callback is not None:
            callback(t, x, r)
        if r <= cfg.tol:
            trace.converged = True
            return x, trace
        if r0_abs is None:
            r0_abs = r_abs
        _check_divergence(r_abs, r0_abs, trace)
        hist_x.append(x)
        hist_f.append(fx)
        if len(hist_x) > m:
            hist_x.pop(0)
            hist_f.pop(0)
        if t < m or len(hist_x) == 1:
            x = fx
            continue
        xs = np.stack(hist_x, axis=1)
        fs = np.stack(hist_f, axis=1)
        gamma, fb = solve_gamma(fs - xs, cfg.ridge)
        if fb:
            trace.gamma_fallbacks += 1
        if beta == 1.0:
            x = fs @ gamma
        else:
            x = (1.0 - beta) * (xs @ gamma) + beta * (fs @ gamma)
    return x, trace


def solve(step, x0, cfg, callback=None):
    cfg.validate()
    if cfg.method == "naive":
        return iterate_naive(step, x0, cfg, callback)
    return anderson_solve(step, x0, cfg, callback)


def solve_equilibrium(params, y, cfg, x0=None, callback=None):
    """Run the layer map to its fixed point on cube y; returns (state, trace).

    x0 defaults to the all-zero state. The callback, if given, receives
    (iteration, packed state, residual).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3:
        raise ValueError(f"cube must be (B, H, W), got {y.shape}")
    _, height, width = y.shape
    s_shape, h_shape = params.state_shapes(height, width)
    if x0 is None:
        x0 = params.zero_state(height, width)
    vec0 = x0.pack()

    def step(vec):
        state = DeqState.unpack(vec, s_shape, h_shape)
        return layer_step(state, y, params).pack()

    vec, trace = solve(step, vec0, cfg, callback)
    return DeqState.unpack(vec, s_shape, h_shape), trace
