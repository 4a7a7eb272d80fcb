import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import special_ortho_group

from mmc_lab.classification import (
    Verdict1D,
    affine_mmc_exists,
    classify_1d,
    lamperti_reduce,
    lpc_form_check,
    mirror_static,
    mirror_translating_form,
)
from mmc_lab.errors import DegenerateInput, InvalidArgument
from mmc_lab.euclidean import (
    AffineDrift,
    GeneralDrift,
    drift_constraint_residual,
    make_mirror,
    mirror_evolve_affine,
)

J = np.array([[0.0, -1.0], [1.0, 0.0]])
GRID = np.linspace(-5, 5, 201)


def skew(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])


class TestAffineExists:
    @given(st.floats(-3, 3), arrays(float, 3, elements=st.floats(-2, 2)),
           arrays(float, 3, elements=st.floats(-3, 3)), arrays(float, 3, elements=st.floats(-3, 3)))
    def test_scalar_plus_skew(self, lam, w, x0, y0):
        if np.linalg.norm(x0 - y0) < 1e-3:
            return
        got = affine_mmc_exists(AffineDrift(lam * np.eye(3) + skew(w), np.zeros(3)), x0, y0)
        assert got == pytest.approx(lam, abs=1e-9)

    def test_diagonal_eigenvector(self):
        assert affine_mmc_exists(AffineDrift(np.diag([1.0, 2.0]), np.zeros(2)), [1.0, 0.0], [0.0, 0.0]) == 1.0

    def test_diagonal_with_rotation(self):
        assert affine_mmc_exists(AffineDrift(np.diag([1.0, 2.0]) + 0.5 * J, np.zeros(2)), [1.0, 0.0], [0, 0]) is None

    def test_non_eigenvector(self):
        assert affine_mmc_exists(AffineDrift(np.diag([1.0, 2.0]), np.zeros(2)), [1.0, 1.0], [0, 0]) is None

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            affine_mmc_exists(AffineDrift.zero(2), [1.0, 1.0], [1.0, 1.0])

    def test_zero_krylov_vectors_skipped(self):
        T = np.zeros((3, 3))
        T[1, 2], T[2, 1] = -1.0, 1.0
        d = AffineDrift(np.diag([1.0, 2.0, 2.0]) + T, np.zeros(3))
        assert affine_mmc_exists(d, [1.0, 0, 0], [0, 0, 0]) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_rotation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        Q = special_ortho_group.rvs(3, random_state=seed)
        admissible = seed % 2 == 0
        A = 0.7 * np.eye(3) + skew(rng.normal(size=3)) if admissible else np.diag([0.5, 1.0, 2.0]) + skew([0.3, 0.1, 0])
        c = rng.normal(size=3)
        x0, y0 = rng.normal(size=3), rng.normal(size=3)
        a = affine_mmc_exists(AffineDrift(A, c), x0, y0)
        b = affine_mmc_exists(AffineDrift(Q @ A @ Q.T, Q @ c), Q @ x0, Q @ y0)
        assert (a is None) == (b is None) == (not admissible)
        if a is not None:
            assert b == pytest.approx(a, abs=1e-9)


class TestLPC:
    def test_examples(self):
        f = lpc_form_check(AffineDrift(3 * np.eye(2) + J, np.array([4.0, -1.0])))
        assert f.lambda0 == pytest.approx(3.0)
        np.testing.assert_allclose(f.T, J)
        assert lpc_form_check(AffineDrift(np.diag([1.0, 2.0]), np.zeros(2))) is None
        assert lpc_form_check(AffineDrift.zero(2)).lambda0 == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_lpc_implies_admissible_everywhere(self, seed):
        rng = np.random.default_rng(seed)
        d = AffineDrift(rng.normal() * np.eye(3) + skew(rng.normal(size=3)), rng.normal(size=3))
        f = lpc_form_check(d)
        assert f is not None
        for _ in range(100):
            assert affine_mmc_exists(d, rng.normal(size=3), rng.normal(size=3)) == pytest.approx(f.lambda0, abs=1e-9)


class TestClassify1D:
    def test_triple(self):
        assert classify_1d(lambda x: -x, 1.0, -1.0, GRID) is Verdict1D.AFFINE
        assert classify_1d(math.sin, 1.0, -1.0, GRID) is Verdict1D.ODD_SYMMETRIC
        assert classify_1d(lambda x: x * x, 1.0, -1.0, GRID) is Verdict1D.NONE

    def test_affine_precedence(self):
        m = 0.75
        grid = np.linspace(m - 4, m + 4, 101)
        assert classify_1d(lambda x: 2.0 * (m - x), 0.25, 1.25, grid) is Verdict1D.AFFINE

    def test_bad_grids(self):
        with pytest.raises(InvalidArgument):
            classify_1d(math.sin, 1.0, -1.0, [0.0, 1.0])
        with pytest.raises(InvalidArgument):
            classify_1d(math.sin, 1.0, -1.0, np.linspace(0, 5, 11))
        with pytest.raises(DegenerateInput):
            classify_1d(math.sin, 1.0, 1.0, GRID)

    @pytest.mark.parametrize("b", [lambda x: -x + 0.3, math.sin, lambda x: x**3, lambda x: x * x, math.cos])
    def test_consistent_with_residual(self, b):
        verdict = classify_1d(b, 1.0, -1.0, GRID)
        drift = GeneralDrift(lambda t, x: np.array([b(x[0])]))
        if verdict is Verdict1D.AFFINE:
            slope = (b(1.0) - b(-1.0)) / 2.0
            m = mirror_evolve_affine(AffineDrift(np.array([[slope]]), np.array([b(0.0)])), [1.0], [-1.0], 0.0)
        else:
            m = make_mirror([1.0], [-1.0])
        res = max(abs(drift_constraint_residual(drift, m, 0.0, np.array([x]))[0]) for x in GRID)
        assert (verdict is not Verdict1D.NONE) == (res <= 1e-6)


class TestLamperti:
    def test_unit_sigma(self):
        red = lamperti_reduce(math.sin, lambda x: 1.0, np.linspace(-2, 2, 41))
        np.testing.assert_allclose(red.u, red.x, atol=1e-10)
        np.testing.assert_allclose(red.drift_values, np.sin(red.x), atol=1e-9)

    def test_exponential_sigma(self):
        red = lamperti_reduce(lambda x: 0.0, math.exp, np.linspace(-1, 1, 21))
        assert float(red.drift(0.0)) == pytest.approx(-0.5, abs=1e-8)
        np.testing.assert_allclose(red.drift_values, -np.exp(red.x) / 2, atol=1e-8)

    def test_cancellation(self):
        sigma = lambda x: 2.0 + math.sin(x)
        b = lambda x: 0.5 * sigma(x) * math.cos(x)
        red = lamperti_reduce(b, sigma, np.linspace(-3, 3, 61))
        np.testing.assert_allclose(red.drift_values, 0.0, atol=1e-8)

    def test_non_positive_sigma(self):
        with pytest.raises(InvalidArgument):
            lamperti_reduce(math.sin, lambda x: x, np.linspace(-1, 1, 5))


class TestMirrorMotion:
    def test_static_examples(self):
        x0, y0 = np.array([1.0, 0.0]), np.array([-1.0, 0.0])
        Z = np.zeros((2, 2))
        assert mirror_static(0.0, Z, np.array([0.0, 3.0]), x0, y0)
        assert mirror_static(1.0, Z, np.zeros(2), x0, -x0)
        assert not mirror_static(0.0, Z, x0 - y0, x0, y0)
        assert not mirror_static(0.0, J, np.zeros(2), x0, y0)

    @pytest.mark.parametrize("seed", range(8))
    def test_static_implies_constant(self, seed):
        rng = np.random.default_rng(seed)
        lam = rng.normal()
        x0 = rng.normal(size=2)
        y0 = -x0
        c = np.array([-x0[1], x0[0]]) * rng.normal()
        assert mirror_static(lam, np.zeros((2, 2)), c, x0, y0)
        d = AffineDrift(lam * np.eye(2), c)
        m0 = mirror_evolve_affine(d, x0, y0, 0.0)
        for t in (0.5, 1.0, 2.0):
            m = mirror_evolve_affine(d, x0, y0, t)
            assert abs(m.l - m0.l) + np.linalg.norm(m.n - m0.n) <= 1e-8

    def test_translating_form(self):
        axes = [np.linspace(-2, 2, 21), np.linspace(-2, 2, 21)]
        good = GeneralDrift(lambda t, x: np.stack([2 * x[:, 0] + 1, np.sin(x[:, 1])], axis=1), vectorized=True)
        shear = GeneralDrift(lambda t, x: np.stack([x[:, 1], 0 * x[:, 0]], axis=1), vectorized=True)
        bent = GeneralDrift(lambda t, x: np.stack([x[:, 0] ** 2, 0 * x[:, 0]], axis=1), vectorized=True)
        assert mirror_translating_form(good, axes)
        assert not mirror_translating_form(shear, axes)
        assert not mirror_translating_form(bent, axes)
