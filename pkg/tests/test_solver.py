"""Fixed-point solver: acceleration math, plain-iteration equivalence,
divergence handling, and the packed equilibrium driver."""

import numpy as np
import pytest

from eqcsc.errors import DivergenceError
from eqcsc.model import ModelConfig, init_model_params
from eqcsc.solver import (
    SolverConfig,
    anderson_solve,
    iterate_naive,
    residual_norm,
    solve,
    solve_equilibrium,
    solve_gamma,
)


def affine_step(a, b):
    return lambda v: a * v + b


def linear2d_step(mat, off):
    return lambda v: mat @ v + off


class TestGammaSolve:
    def test_matches_constrained_least_squares(self):
        """Tiny ridge reproduces the KKT solution of min ||G g||, sum g = 1."""
        rng = np.random.default_rng(0)
        g = rng.standard_normal((20, 4))
        a = g.T @ g
        kkt = np.zeros((5, 5))
        kkt[:4, :4] = a
        kkt[4, :4] = 1.0
        kkt[:4, 4] = 1.0
        rhs = np.zeros(5)
        rhs[4] = 1.0
        expect = np.linalg.solve(kkt, rhs)[:4]
        got, fallback = solve_gamma(g, 1e-14)
        assert not fallback
        np.testing.assert_allclose(got, expect, rtol=0, atol=1e-8)
        assert abs(got.sum() - 1.0) <= 1e-12

    def test_zero_residual_column_dominates(self):
        """A history point that is already a fixed point gets all the weight."""
        rng = np.random.default_rng(1)
        g = rng.standard_normal((10, 3))
        g[:, -1] = 0.0
        gamma, fallback = solve_gamma(g, 1e-10)
        assert not fallback
        np.testing.assert_allclose(gamma, [0.0, 0.0, 1.0], rtol=0, atol=1e-6)

    def test_singular_system_falls_back_to_newest(self):
        g = np.zeros((6, 3))
        g[:, 0] = 1.0
        gamma, fallback = solve_gamma(g, 0.0)
        assert fallback
        np.testing.assert_array_equal(gamma, [0.0, 0.0, 1.0])


class TestScalarAffine:
    def test_exact_in_three_evaluations(self):
        """f(x) = x/2 + 1 from 0: two warm-up steps and one mixing step land
        on the fixed point 2 to within the ridge perturbation."""
        cfg = SolverConfig(tol=0.0, max_iter=3, anderson_m=2, ridge=1e-14)
        x, trace = anderson_solve(affine_step(0.5, 1.0), np.array([0.0]), cfg)
        assert trace.iterations == 3
        assert abs(float(x[0]) - 2.0) <= 1e-12

    def test_naive_converges_linearly(self):
        cfg = SolverConfig(method="naive", tol=1e-10, max_iter=100)
        x, trace = solve(affine_step(0.5, 1.0), np.array([0.0]), cfg)
        assert trace.converged
        # error halves each step; residual tracks it
        assert 25 < trace.iterations < 45
        assert abs(float(x[0]) - 2.0) <= 1e-9


class TestPlainEquivalence:
    def test_m1_beta1_is_bitwise_naive(self):
        rng = np.random.default_rng(2)
        mat = np.array([[0.9, 0.05], [-0.03, 0.8]])
        off = rng.standard_normal(2)
        x0 = rng.standard_normal(2)
        cfg_n = SolverConfig(method="naive", tol=0.0, max_iter=40)
        cfg_a = SolverConfig(tol=0.0, max_iter=40, anderson_m=1, anderson_beta=1.0)
        xn, tn = iterate_naive(linear2d_step(mat, off), x0.copy(), cfg_n)
        xa, ta = anderson_solve(linear2d_step(mat, off), x0.copy(), cfg_a)
        assert np.array_equal(xn, xa)
        assert tn.residuals == ta.residuals
        assert ta.gamma_fallbacks == 0


class TestAcceleration:
    def test_two_dim_contraction_beats_plain_iteration(self):
        """Slow real-spectrum contraction: acceleration reaches tol 1e-6 in
        no more iterations than the plain loop, and far fewer in practice."""
        mat = np.array([[0.95, 0.02], [0.01, 0.9]])
        off = np.array([0.3, -0.7])
        x0 = np.zeros(2)
        tol = 1e-6
        _, tn = iterate_naive(
            linear2d_step(mat, off), x0, SolverConfig(method="naive", tol=tol, max_iter=600)
        )
        xa, ta = anderson_solve(
            linear2d_step(mat, off), x0, SolverConfig(tol=tol, max_iter=60, anderson_m=5)
        )
        assert tn.converged and ta.converged
        assert ta.iterations <= tn.iterations
        assert ta.iterations < 25
        target = np.linalg.solve(np.eye(2) - mat, off)
        assert np.linalg.norm(xa - target) <= 1e-5

    def test_fixed_point_start_verifies_in_one_evaluation(self):
        target = np.array([2.0, -1.0])
        mat = np.array([[0.5, 0.1], [0.0, 0.4]])
        off = target - mat @ target
        cfg = SolverConfig(tol=1e-8, max_iter=10)
        x, trace = anderson_solve(linear2d_step(mat, off), target.copy(), cfg)
        assert trace.converged
        assert trace.iterations == 1
        assert np.array_equal(x, target)

    def test_converged_residual_is_reproducible(self):
        """The solver returns the iterate it measured, so recomputing the
        residual at the returned point reproduces the recorded value."""
        mat = np.array([[0.9, 0.05], [-0.03, 0.8]])
        off = np.array([0.3, -0.2])
        step = linear2d_step(mat, off)
        cfg = SolverConfig(tol=1e-6, max_iter=100, anderson_m=4)
        x, trace = anderson_solve(step, np.zeros(2), cfg)
        assert trace.converged
        assert residual_norm(x, step(x)) == trace.residuals[-1]


class TestDivergence:
    @pytest.mark.parametrize("method", ["naive", "anderson"])
    def test_exploding_map_raises_with_trace(self, method):
        cfg = SolverConfig(method=method, tol=1e-12, max_iter=30)
        with pytest.raises(DivergenceError) as exc:
            solve(lambda v: v * v, np.array([2.0]), cfg)
        trace = exc.value.trace
        assert trace is not None
        assert len(trace.residuals) >= 2
        assert not trace.converged

    def test_trace_csv_roundtrip(self, tmp_path):
        cfg = SolverConfig(method="naive", tol=1e-10, max_iter=50)
        _, trace = solve(affine_step(0.5, 1.0), np.array([0.0]), cfg)
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iter,residual"
        assert len(lines) == trace.iterations + 1
        vals = [float(ln.split(",")[1]) for ln in lines[1:]]
        assert vals == trace.residuals


class TestConfigValidation:
    def test_rejects_bad_fields(self):
        for bad in (
            SolverConfig(method="newton"),
            SolverConfig(tol=-1.0),
            SolverConfig(max_iter=0),
            SolverConfig(anderson_m=0),
            SolverConfig(anderson_beta=0.0),
            SolverConfig(anderson_beta=1.5),
            SolverConfig(ridge=-1e-9),
        ):
            with pytest.raises(ValueError):
                bad.validate()


class TestEquilibriumDriver:
    def make_problem(self, seed=4, with_priors=True):
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(
            atoms2d=4, atoms3d=2, kernel2d=3, kernel3d_space=3, kernel3d_bands=3,
            attn_stages=2, attn_heads=2, window=2, theta_init=0.02,
        )
        params = init_model_params(cfg, 3, rng, with_priors=with_priors)
        y = 0.3 * rng.standard_normal((3, 8, 8))
        return params, y

    def test_residual_drops_and_run_is_deterministic(self):
        params, y = self.make_problem()
        cfg = SolverConfig(tol=1e-6, max_iter=40, anderson_m=5)
        st1, tr1 = solve_equilibrium(params, y, cfg)
        st2, tr2 = solve_equilibrium(params, y, cfg)
        assert st1.s.shape == (4, 8, 8) and st1.h.shape == (2, 3, 8, 8)
        assert np.array_equal(st1.s, st2.s) and np.array_equal(st1.h, st2.h)
        assert tr1.residuals == tr2.residuals
        # residuals[0] is inflated by the zero-start denominator; compare
        # against the first post-start value
        assert tr1.residuals[-1] < 0.5 * tr1.residuals[1]

    def test_dominant_threshold_gives_zero_fixed_point(self):
        """With a threshold above every correlation magnitude the zero state
        is the exact fixed point: one evaluation verifies it, the returned
        state is bitwise the start, and the recorded residual reproduces."""
        from eqcsc.model import DeqState, inv_softplus, layer_step

        params, y = self.make_problem(seed=7, with_priors=False)
        params.theta1_raw = np.array(inv_softplus(50.0))
        params.theta2_raw = np.array(inv_softplus(50.0))
        cfg = SolverConfig(tol=1e-10, max_iter=20, anderson_m=5)
        st, tr = solve_equilibrium(params, y, cfg)
        assert tr.converged
        assert tr.iterations == 1
        assert np.all(st.s == 0.0) and np.all(st.h == 0.0)
        nxt = layer_step(st, y, params)
        assert residual_norm(st.pack(), nxt.pack()) == tr.residuals[-1]

    def test_callback_sees_every_iteration(self):
        params, y = self.make_problem(seed=5)
        seen = []
        cfg = SolverConfig(tol=1e-8, max_iter=10)
        _, trace = solve_equilibrium(
            params, y, cfg, callback=lambda t, vec, r: seen.append((t, r))
        )
        assert [t for t, _ in seen] == list(range(trace.iterations))
        assert [r for _, r in seen] == trace.residuals

    def test_explicit_start_state_is_respected(self):
        params, y = self.make_problem(seed=6)
        s_shape, h_shape = params.state_shapes(8, 8)
        rng = np.random.default_rng(8)
        x0 = None
        from eqcsc.model import DeqState

        x0 = DeqState(rng.standard_normal(s_shape), rng.standard_normal(h_shape))
        first_vec = {}
        cfg = SolverConfig(tol=1e-8, max_iter=3)

        def cb(t, vec, r):
            if t == 0:
                first_vec["v"] = vec.copy()

        solve_equilibrium(params, y, cfg, x0=x0, callback=cb)
        assert np.array_equal(first_vec["v"], x0.pack())
