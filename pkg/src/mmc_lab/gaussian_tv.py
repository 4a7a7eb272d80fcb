"""Exact Gaussian marginals of linear SDEs, total-variation distances and the
Aldous-bound verifier.

For any coupling ``P(tau > t) >= TV(law X_t, law Y_t)``; a maximal coupling
attains equality at every ``t``.  The verifier compares an empirical tail of
coupling times to the exact TV curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateInput, InvalidArgument, NumericalFailure
from .numerics import as_vec, integrate_1d

RK4_MAX_STEP = 1e-3
GAP_Z = 4.0


@dataclass
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if not np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=0.0):
            raise InvalidArgument("covariance must be symmetric")


@dataclass
class TailCurve:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)


def linear_sde_moments(d, x0, t):
    """Mean and covariance at time ``t`` of ``dX = (A X + c) dt + dB``, ``X_0 = x0``.

    Closed form when ``A = 0``; otherwise classical RK4 on
    ``m' = A m + c`` and ``S' = A S + S A^T + I`` with step at most 1e-3.
    """
    x0 = as_vec(x0, "x0")
    t = float(t)
    if t < 0:
        raise InvalidArgument("t must be non-negative")
    A, c = d.A, d.c
    dim = d.dim
    if not np.any(A):
        return GaussianLaw(x0 + c * t, t * np.eye(dim))
    if t == 0.0:
        return GaussianLaw(x0.copy(), np.zeros((dim, dim)))
    n = int(np.ceil(t / RK4_MAX_STEP))
    h = t / n
    eye = np.eye(dim)

    def rhs(m, s):
        return A @ m + c, A @ s + s @ A.T + eye

    m, s = x0.copy(), np.zeros((dim, dim))
    for _ in range(n):
        k1m, k1s = rhs(m, s)
        k2m, k2s = rhs(m + 0.5 * h * k1m, s + 0.5 * h * k1s)
        k3m, k3s = rhs(m + 0.5 * h * k2m, s + 0.5 * h * k2s)
        k4m, k4s = rhs(m + h * k3m, s + h * k3s)
        m = m + h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
        s = s + h / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
    return GaussianLaw(m, 0.5 * (s + s.T))


def tv_gaussians_equal_cov(g1, g2):
    """``2 Phi(delta / 2) - 1`` with ``delta`` the Mahalanobis distance of the means."""
    if np.linalg.norm(g1.cov - g2.cov) > 1e-8:
        raise InvalidArgument("covariances differ; the closed form needs equal covariance")
    diff = g1.mean - g2.mean
    if not np.any(diff):
        return 0.0
    try:
        chol = np.linalg.cholesky(g1.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("covariance is singular or not positive definite") from exc
    w = np.linalg.solve(chol, diff)
    delta = float(np.sqrt(w @ w))
    return float(2.0 * ndtr(0.5 * delta) - 1.0)


def tv_numeric_1d(density1, density2, support, tol=1e-9, points=None):
    """Half the integral of ``|p1 - p2|`` over ``support`` by quadrature."""
    a, b = support
    for p in (density1, density2):
        mass = integrate_1d(p, a, b, tol=tol, points=points)
        if abs(mass - 1.0) > 10 * tol:
            raise InvalidArgument(f"density has mass {mass:.12g} on the support, expected 1")
    return 0.5 * integrate_1d(lambda x: abs(density1(x) - density2(x)), a, b, tol=tol, points=points)


def aldous_curve(d, x0, y0, times):
    """Exact TV distance between the laws started at ``x0`` and ``y0``."""
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    if np.array_equal(x0, y0):
        raise DegenerateInput("x0 and y0 coincide")
    vals = []
    for t in times:
        if t == 0:
            vals.append(1.0)
            continue
        vals.append(tv_gaussians_equal_cov(linear_sde_moments(d, x0, t), linear_sde_moments(d, y0, t)))
    return TailCurve(np.asarray(times, dtype=float), np.array(vals))


def empirical_tail(taus, times):
    """Fraction of coupling times exceeding each ``t`` with binomial stderr."""
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        raise InvalidArgument("no coupling times given")
    n = taus.size
    p = np.array([np.count_nonzero(taus > t) / n for t in times])
    return TailCurve(np.asarray(times, dtype=float), p, np.sqrt(p * (1.0 - p) / n))


@dataclass
class GapReport:
    times: np.ndarray
    empirical: np.ndarray
    exact: np.ndarray
    stderr: np.ndarray
    gaps: np.ndarray
    z: np.ndarray
    maximal: bool
    aldous_violation: bool

    @property
    def verdict(self):
        if self.aldous_violation:
            return "aldous-violation"
        return "maximal" if self.maximal else "non-maximal"


def aldous_gap_report(emp, exact, z_limit=GAP_Z):
    """Per-time gap ``emp - exact`` and its z-score.

    ``maximal`` needs ``|z| <= z_limit`` everywhere; a gap below
    ``-z_limit * stderr`` breaks the Aldous inequality and signals a
    simulation bug.
    """
    if emp.times.shape != exact.times.shape or not np.allclose(emp.times, exact.times):
        raise InvalidArgument("empirical and exact curves use different time grids")
    gaps = emp.values - exact.values
    se = emp.stderr
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, gaps / np.where(se > 0, se, 1.0), np.sign(gaps) * np.inf)
    z = np.where(gaps == 0, 0.0, z)
    violation = bool(np.any(gaps < -z_limit * se))
    maximal = bool(np.all(np.abs(z) <= z_limit)) and not violation
    return GapReport(emp.times, emp.values, exact.values, se, gaps, z, maximal, violation)
