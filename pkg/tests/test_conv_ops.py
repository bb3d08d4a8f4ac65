"""Dictionary convolution operators against independent brute-force oracles."""

import numpy as np
import pytest

from eqcsc import kernels
from eqcsc.conv import (
    conv2d_shared,
    conv2d_shared_adjoint,
    conv2d_shared_weight_grad,
    conv3d,
    conv3d_adjoint,
    conv3d_weight_grad,
    inner_product,
)
from eqcsc.errors import ShapeError


def brute_conv2d_shared(w, s):
    """Direct per-output-element summation; formulated independently of the kernels."""
    M, B, k, _ = w.shape
    _, H, W = s.shape
    c = k // 2
    sp = np.zeros((M, H + 2 * c, W + 2 * c))
    sp[:, c:c + H, c:c + W] = s
    out = np.zeros((B, H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for m in range(M):
                    acc += float(np.sum(w[m, b] * sp[m, i:i + k, j:j + k]))
                out[b, i, j] = acc
    return out


def brute_conv3d(d, h):
    J, kb, k, _ = d.shape
    _, B, H, W = h.shape
    cb = kb // 2
    c = k // 2
    hp = np.zeros((J, B + 2 * cb, H + 2 * c, W + 2 * c))
    hp[:, cb:cb + B, c:c + H, c:c + W] = h
    out = np.zeros((B, H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for a in range(J):
                    acc += float(np.sum(d[a] * hp[a, b:b + kb, i:i + k, j:j + k]))
                out[b, i, j] = acc
    return out


def rand_problem(rng, M=3, B=4, H=6, W=5, k=3):
    w = rng.standard_normal((M, B, k, k))
    s = rng.standard_normal((M, H, W))
    r = rng.standard_normal((B, H, W))
    return w, s, r


def rand_problem3(rng, J=2, kb=3, k=3, B=4, H=6, W=5):
    d = rng.standard_normal((J, kb, k, k))
    h = rng.standard_normal((J, B, H, W))
    r = rng.standard_normal((B, H, W))
    return d, h, r


class TestForwardOracles:
    def test_delta_kernel_reproduces_input(self):
        """A centered delta kernel with M=B=1 copies the code into the cube."""
        s = np.random.default_rng(0).standard_normal((1, 7, 6))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(conv2d_shared(w, s), s)

    def test_zero_codes_give_zero_cube(self):
        w = np.random.default_rng(1).standard_normal((2, 3, 3, 3))
        assert np.all(conv2d_shared(w, np.zeros((2, 5, 5))) == 0.0)

    def test_conv2d_matches_brute_force(self):
        """Fast path equals direct summation to 1e-12 on random draws."""
        rng = np.random.default_rng(42)
        for _ in range(20):
            w, s, _ = rand_problem(rng)
            np.testing.assert_allclose(
                conv2d_shared(w, s), brute_conv2d_shared(w, s), rtol=0, atol=1e-12
            )

    def test_conv3d_matches_brute_force(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            d, h, _ = rand_problem3(rng)
            np.testing.assert_allclose(
                conv3d(d, h), brute_conv3d(d, h), rtol=0, atol=1e-12
            )

    def test_conv3d_delta_kernel(self):
        """A delta 3D atom with J=1 sums nothing but the center tap."""
        rng = np.random.default_rng(2)
        h = rng.standard_normal((1, 3, 5, 5))
        d = np.zeros((1, 3, 3, 3))
        d[0, 1, 1, 1] = 1.0
        np.testing.assert_array_equal(conv3d(d, h), h[0])

    def test_kernel_larger_than_image(self):
        """Padding wider than the image is handled by the same zero-pad rule."""
        rng = np.random.default_rng(3)
        w = rng.standard_normal((2, 2, 9, 9))
        s = rng.standard_normal((2, 4, 4))
        np.testing.assert_allclose(
            conv2d_shared(w, s), brute_conv2d_shared(w, s), rtol=0, atol=1e-12
        )


class TestLinearity:
    def test_conv2d_linear(self):
        """conv(w, a*s1 + b*s2) == a*conv(w, s1) + b*conv(w, s2) to 1e-12."""
        rng = np.random.default_rng(7)
        for _ in range(10):
            w, s1, _ = rand_problem(rng)
            s2 = rng.standard_normal(s1.shape)
            a, b = rng.standard_normal(2)
            lhs = conv2d_shared(w, a * s1 + b * s2)
            rhs = a * conv2d_shared(w, s1) + b * conv2d_shared(w, s2)
            np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)

    def test_conv3d_linear(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            d, h1, _ = rand_problem3(rng)
            h2 = rng.standard_normal(h1.shape)
            a, b = rng.standard_normal(2)
            lhs = conv3d(d, a * h1 + b * h2)
            rhs = a * conv3d(d, h1) + b * conv3d(d, h2)
            np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


class TestAdjointIdentity:
    def test_conv2d_adjoint_identity(self):
        """<conv(w,s), r> == <s, adj(w,r)> to 1e-10 relative on 100 random triples."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            w, s, r = rand_problem(rng)
            lhs = inner_product(conv2d_shared(w, s), r)
            rhs = inner_product(s, conv2d_shared_adjoint(w, r))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)

    def test_conv3d_adjoint_identity(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            d, h, r = rand_problem3(rng)
            lhs = inner_product(conv3d(d, h), r)
            rhs = inner_product(h, conv3d_adjoint(d, r))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)

    def test_adjoint_zero_cube(self):
        w = np.random.default_rng(13).standard_normal((2, 3, 3, 3))
        assert np.all(conv2d_shared_adjoint(w, np.zeros((3, 5, 4))) == 0.0)


class TestWeightGradOracles:
    def test_conv2d_weight_grad_matches_directional_derivative(self):
        """<wgrad, dw> equals <g, conv(dw, s)> for random directions (linearity in w)."""
        rng = np.random.default_rng(21)
        for _ in range(20):
            w, s, g = rand_problem(rng)
            dw = rng.standard_normal(w.shape)
            wg = conv2d_shared_weight_grad(s, g, w.shape[2])
            lhs = inner_product(wg, dw)
            rhs = inner_product(g, conv2d_shared(dw, s))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)

    def test_conv3d_weight_grad_matches_directional_derivative(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            d, h, g = rand_problem3(rng)
            dd = rng.standard_normal(d.shape)
            wg = conv3d_weight_grad(h, g, d.shape[1], d.shape[2])
            lhs = inner_product(wg, dd)
            rhs = inner_product(g, conv3d(dd, h))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)


class TestValidationAndDeterminism:
    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(31)
        w = rng.standard_normal((2, 3, 3, 3))
        with pytest.raises(ShapeError):
            conv2d_shared(w, rng.standard_normal((3, 5, 5)))
        with pytest.raises(ShapeError):
            conv2d_shared_adjoint(w, rng.standard_normal((2, 5, 5)))
        with pytest.raises(ShapeError):
            conv3d(rng.standard_normal((2, 3, 3, 3)), rng.standard_normal((1, 3, 5, 5)))

    def test_even_kernel_rejected(self):
        rng = np.random.default_rng(32)
        with pytest.raises(ShapeError):
            conv2d_shared(rng.standard_normal((1, 1, 4, 4)), rng.standard_normal((1, 5, 5)))
        with pytest.raises(ShapeError):
            conv3d(rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 3, 5, 5)))

    def test_inner_product_size_mismatch(self):
        with pytest.raises(ShapeError):
            inner_product(np.zeros(3), np.zeros(4))

    def test_bitwise_determinism(self):
        """Identical inputs produce bitwise-identical outputs on repeat calls."""
        rng = np.random.default_rng(33)
        w, s, r = rand_problem(rng)
        d, h, _ = rand_problem3(rng)
        for fn, args in [
            (conv2d_shared, (w, s)),
            (conv2d_shared_adjoint, (w, r)),
            (conv3d, (d, h)),
            (conv3d_adjoint, (d, r)),
        ]:
            a = fn(*args)
            b = fn(*args)
            assert np.array_equal(a, b)


class TestBackendEquivalence:
    def test_backends_agree(self):
        """numba and numpy backends agree to 1e-12 on every kernel."""
        if "numba" not in kernels.available_backends():
            pytest.skip("numba not available")
        rng = np.random.default_rng(41)
        w, s, r = rand_problem(rng, M=3, B=4, H=8, W=7, k=5)
        d, h, _ = rand_problem3(rng, J=2, kb=3, k=3, B=4, H=8, W=7)
        x = rng.standard_normal((2, 4, 6, 5))
        kern = rng.standard_normal((3, 3, 3))
        dy = rng.standard_normal(x.shape)
        pairs = []
        prev = kernels.set_backend("numba")
        try:
            pairs.append(kernels.corr2d_mc(w, s))
            pairs.append(kernels.corr2d_mc_adj(w, r))
            pairs.append(kernels.corr2d_mc_wgrad(s, r, 5))
            pairs.append(kernels.corr3d_mc(d, h))
            pairs.append(kernels.corr3d_mc_adj(d, r))
            pairs.append(kernels.corr3d_mc_wgrad(h, r, 3, 3))
            for mode in range(5):
                pairs.append(kernels.diff3(x, kern, mode))
                pairs.extend(kernels.diff3_bwd(x, kern, mode, dy))
            kernels.set_backend("numpy")
            ref = []
            ref.append(kernels.corr2d_mc(w, s))
            ref.append(kernels.corr2d_mc_adj(w, r))
            ref.append(kernels.corr2d_mc_wgrad(s, r, 5))
            ref.append(kernels.corr3d_mc(d, h))
            ref.append(kernels.corr3d_mc_adj(d, r))
            ref.append(kernels.corr3d_mc_wgrad(h, r, 3, 3))
            for mode in range(5):
                ref.append(kernels.diff3(x, kern, mode))
                ref.extend(kernels.diff3_bwd(x, kern, mode, dy))
        finally:
            kernels.set_backend(prev)
        assert len(pairs) == len(ref)
        for a, b in zip(pairs, ref):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
