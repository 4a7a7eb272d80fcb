import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmc_lab.errors import InvalidArgument, NumericalFailure
from mmc_lab.numerics import (
    RngStream,
    as_mat,
    em_step,
    gaussian_noise,
    integrate_1d,
    mat_exp,
    run_blocks,
)

J = np.array([[0.0, -1.0], [1.0, 0.0]])


def series_exp(M, terms=30):
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def small_matrices(d=3, bound=2.0):
    return arrays(float, (d, d), elements=st.floats(-1, 1)).map(
        lambda m: m * bound / max(1.0, np.linalg.norm(m, 2))
    )


class TestMatExp:
    def test_zero_time_is_identity(self):
        assert np.array_equal(mat_exp(np.arange(9.0).reshape(3, 3), 0.0), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(mat_exp(np.diag([0.5, -2.0])), np.diag(np.exp([0.5, -2.0])), rtol=1e-12)

    def test_quarter_rotation_matches_series(self):
        out = mat_exp(J, math.pi / 2)
        np.testing.assert_allclose(out, series_exp(J * math.pi / 2), atol=1e-12)
        np.testing.assert_allclose(out, J, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgument):
            mat_exp(np.array([[np.nan]]))
        with pytest.raises(InvalidArgument):
            as_mat(np.ones((2, 3)))

    def test_rejects_huge_horizon(self):
        with pytest.raises(InvalidArgument):
            mat_exp(J, 1e6)

    @given(small_matrices(), st.floats(0, 2), st.floats(0, 2))
    def test_group_law(self, M, s, t):
        np.testing.assert_allclose(mat_exp(M, s + t), mat_exp(M, s) @ mat_exp(M, t), atol=1e-8)

    @given(arrays(float, (3, 3), elements=st.floats(-3, 3)), st.floats(-5, 5))
    def test_skew_exponential_is_orthogonal(self, m, t):
        T = 0.5 * (m - m.T)
        Q = mat_exp(T, t)
        np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-9)


class TestIntegrate:
    def test_constant(self):
        assert integrate_1d(lambda s: 1.0, 0.0, 2.0) == pytest.approx(2.0, abs=1e-12)

    def test_exp(self):
        assert integrate_1d(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1, abs=1e-10)

    def test_against_simpson(self):
        f = lambda s: s * math.exp(-s)
        n = 10**6
        x = np.linspace(0, 5, n + 1)
        y = x * np.exp(-x)
        simpson = (5 / n / 3) * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
        got = integrate_1d(f, 0.0, 5.0)
        assert got == pytest.approx(simpson, abs=1e-9)
        assert got == pytest.approx(1 - 6 * math.exp(-5), abs=1e-10)
        assert round(got, 6) == 0.959572

    def test_failure_carries_estimate(self):
        with pytest.raises(NumericalFailure) as info:
            integrate_1d(lambda s: math.sin(1.0 / s) / s, 1e-9, 1.0, tol=1e-14, limit=5)
        assert info.value.estimate is not None

    @given(
        arrays(float, 4, elements=st.floats(-3, 3)),
        arrays(float, 4, elements=st.floats(-3, 3)),
        st.floats(-2, 2),
        st.floats(-2, 2),
    )
    def test_linearity(self, p, q, alpha, beta):
        f = np.polynomial.Polynomial(p)
        g = np.polynomial.Polynomial(q)
        lhs = integrate_1d(lambda s: alpha * f(s) + beta * g(s), -1.0, 2.0)
        rhs = alpha * integrate_1d(f, -1.0, 2.0) + beta * integrate_1d(g, -1.0, 2.0)
        assert lhs == pytest.approx(rhs, abs=1e-9)


class TestEulerStep:
    def test_examples(self):
        np.testing.assert_array_equal(em_step(np.array([3.0]), np.zeros(1), 0.1, np.zeros(1)), [3.0])
        np.testing.assert_allclose(em_step(np.zeros(2), np.array([1.0, 0.0]), 0.5, np.zeros(2)), [0.5, 0.0])
        out = em_step(np.array([1.0, 1.0]), np.array([-1.0, -1.0]), 0.1, np.array([0.02, -0.01]))
        np.testing.assert_allclose(out, [0.92, 0.89], atol=1e-15)


class TestRng:
    def test_same_key_same_draws(self):
        a = gaussian_noise(RngStream(5, 9), 3, 0.1)
        b = gaussian_noise(RngStream(5, 9), 3, 0.1)
        assert a.tobytes() == b.tobytes()

    def test_independent_of_other_streams(self):
        ref = RngStream(1, 2).normal(10)
        others = [RngStream(1, k) for k in range(5)]
        for o in others:
            o.normal(100)
        assert np.array_equal(RngStream(1, 2).normal(10), ref)
        assert not np.array_equal(RngStream(1, 3).normal(10), ref)

    def test_mean_and_variance(self):
        x = gaussian_noise(RngStream(11, 0), 1, 1.0, n=10**6)
        assert abs(x.mean()) < 0.004
        y = gaussian_noise(RngStream(12, 0), 1, 2.0, n=10**6)
        assert abs(y.var() - 2.0) < 0.01

    def test_bad_dt(self):
        with pytest.raises(InvalidArgument):
            gaussian_noise(RngStream(0), 1, 0.0)

    def test_blocks_ignore_thread_count(self):
        fn = lambda rng, n: rng.normal(n)
        one = np.concatenate(run_blocks(fn, 10_000, 3, threads=1, block_size=1000))
        four = np.concatenate(run_blocks(fn, 10_000, 3, threads=4, block_size=1000))
        assert one.tobytes() == four.tobytes()

    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_bit_reproducible(self, seed, stream):
        assert RngStream(seed, stream).normal(8).tobytes() == RngStream(seed, stream).normal(8).tobytes()
