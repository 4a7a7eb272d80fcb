"""Decision procedures: which drifts and start pairs admit a Markovian
maximal coupling, and what the mirror does."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.interpolate

from .errors import DegenerateInput, InvalidArgument
from .euclidean import as_drift
from .numerics import as_mat, as_vec, integrate_1d

LINALG_TOL = 1e-8
SAMPLED_TOL = 1e-6


def affine_mmc_exists(d, x0, y0, tol=LINALG_TOL):
    """Eigenvalue ``lambda0`` admitting a maximal coupling, or ``None``.

    The Krylov vectors ``T^k (x0 - y0)``, ``k < dim``, must all be
    eigenvectors of ``S`` for one common eigenvalue.  The candidate is the
    Rayleigh quotient of ``x0 - y0``; zero Krylov vectors are skipped.
    """
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    if x0.shape != y0.shape or x0.size != d.dim:
        raise InvalidArgument("start points and drift have incompatible dimensions")
    v = x0 - y0
    if not np.any(v):
        raise DegenerateInput("x0 and y0 coincide")
    S, T = d.S, d.T
    lam = float(v @ S @ v) / float(v @ v)
    for _ in range(d.dim):
        norm = np.linalg.norm(v)
        if norm > 0.0 and np.linalg.norm(S @ v - lam * v) > tol * norm:
            return None
        v = T @ v
    return lam


@dataclass(frozen=True)
class LPCForm:
    """``A = lambda0 I + T`` with the constant part ``c`` of the drift."""

    lambda0: float
    T: np.ndarray
    c: np.ndarray


def lpc_form_check(d, tol=LINALG_TOL):
    """Return the decomposition ``b(x) = lambda0 x + T x + c`` if the
    symmetric part of ``A`` is scalar to ``tol`` (Frobenius), else ``None``."""
    S = d.S
    lam = float(np.trace(S)) / d.dim
    if np.linalg.norm(S - lam * np.eye(d.dim)) > tol:
        return None
    return LPCForm(lambda0=lam, T=d.T, c=d.c.copy())


class Verdict1D(str, enum.Enum):
    AFFINE = "affine"
    ODD_SYMMETRIC = "odd-symmetric"
    NONE = "none"


def _check_grid(grid):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 3:
        raise InvalidArgument("grid needs at least three points")
    if not np.all(np.isfinite(g)) or np.any(np.diff(g) <= 0):
        raise InvalidArgument("grid must be finite and strictly increasing")
    return g


def second_divided_differences(x, y):
    """Estimates of ``y''`` from consecutive triples of a (non-uniform) grid."""
    d1 = np.diff(y) / np.diff(x)
    return 2.0 * np.diff(d1) / (x[2:] - x[:-2])


def classify_1d(b, x0, y0, grid, tol=SAMPLED_TOL):
    """Classify a scalar drift ``b(x)`` for the start pair ``(x0, y0)``.

    Affine takes precedence over odd symmetry about the midpoint
    ``m = (x0 + y0)/2`` since an affine drift admits a maximal coupling from
    every pair.
    """
    if x0 == y0:
        raise DegenerateInput("x0 and y0 coincide")
    g = _check_grid(grid)
    mid = 0.5 * (x0 + y0)
    span = g[-1] - g[0]
    if not np.allclose(g + g[::-1], 2.0 * mid, atol=1e-9 * max(1.0, span)):
        raise InvalidArgument("grid must be symmetric about the midpoint of x0 and y0")
    vals = np.array([b(x) for x in g], dtype=float)
    if np.max(np.abs(second_divided_differences(g, vals))) <= tol:
        return Verdict1D.AFFINE
    mirrored = np.array([b(2.0 * mid - x) for x in g], dtype=float)
    if np.max(np.abs(vals + mirrored)) <= tol:
        return Verdict1D.ODD_SYMMETRIC
    return Verdict1D.NONE


@dataclass
class LampertiReduction:
    """Unit-diffusion form of ``dX = b(X) dt + sigma(X) dB``.

    ``u = F(grid)`` with ``F(x) = int_0^x dz / sigma(z)``; ``drift_values``
    holds the effective drift at ``u``.  :meth:`drift` evaluates it off-grid
    through a monotone interpolant of ``F^{-1}``.
    """

    x: np.ndarray
    u: np.ndarray
    drift_values: np.ndarray
    b: object
    sigma: object
    fd_step: float

    def inverse(self, u):
        return scipy.interpolate.PchipInterpolator(self.u, self.x, extrapolate=False)(u)

    def drift(self, u):
        x = self.inverse(u)
        return _effective_drift(self.b, self.sigma, x, self.fd_step)


def _effective_drift(b, sigma, x, h):
    x = np.asarray(x, dtype=float)
    sig = np.vectorize(sigma, otypes=[float])
    dsig = (sig(x + h) - sig(x - h)) / (2.0 * h)
    return np.vectorize(b, otypes=[float])(x) / sig(x) - 0.5 * dsig


def lamperti_reduce(b, sigma, grid, fd_step=1e-5, tol=1e-12):
    """Transform a scalar diffusion with coefficient ``sigma`` to unit
    diffusion: ``dU = dB + (b/sigma - sigma'/2)(F^{-1}(U)) dt``."""
    g = _check_grid(grid)
    sig = np.array([sigma(x) for x in g], dtype=float)
    if np.any(~np.isfinite(sig)) or np.any(sig <= 0.0):
        raise InvalidArgument("sigma must be strictly positive on the grid")
    u = np.array([integrate_1d(lambda z: 1.0 / sigma(z), 0.0, x, tol=tol * max(1.0, abs(x))) for x in g])
    if np.any(np.diff(u) <= 0):
        raise InvalidArgument("F is not strictly increasing on the grid")
    drift_values = _effective_drift(b, sigma, g, fd_step)
    return LampertiReduction(x=g, u=u, drift_values=drift_values, b=b, sigma=sigma, fd_step=fd_step)


def mirror_static(lam, T, c, x0, y0, tol=LINALG_TOL):
    """Whether the mirror of ``b(x) = lam x + T x + c`` started from
    ``(x0, y0)`` never moves: ``T(x0 - y0) = 0`` and
    ``(x0 - y0).(lam (x0 + y0) + 2 c) = 0``."""
    T = as_mat(T, "T")
    c = as_vec(c, "c")
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    v = x0 - y0
    scale = np.linalg.norm(v)
    if scale == 0.0:
        raise DegenerateInput("x0 and y0 coincide")
    no_turn = np.linalg.norm(T @ v) <= tol * scale
    no_shift = abs(v @ (lam * (x0 + y0) + 2.0 * c)) <= tol * scale
    return bool(no_turn and no_shift)


def mirror_translating_form(b, grid, tol=SAMPLED_TOL, t=0.0):
    """Test ``b(x1, x') = (c1 x1 + c2, f(x'))`` on a tensor grid.

    ``grid`` is one increasing coordinate array per axis; the candidate
    mirror normal is ``e1``.
    """
    b = as_drift(b)
    axes = [_check_grid(a) if i == 0 else np.asarray(a, dtype=float) for i, a in enumerate(grid)]
    if len(axes) < 2:
        raise InvalidArgument("need at least two coordinates")
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, len(axes))
    vals = b.evaluate(t, pts).reshape(mesh.shape)
    b1 = vals[..., 0]
    rest = vals[..., 1:]
    other = tuple(range(1, len(axes)))
    if np.max(np.var(b1, axis=other)) > tol:
        return False
    profile = b1.mean(axis=other)
    if np.max(np.abs(second_divided_differences(axes[0], profile))) > tol:
        return False
    return bool(np.max(np.var(rest, axis=0)) <= tol)
