"""Brownian motion with Killing drift on the round sphere S^2 and the
hyperbolic plane H^2 (hyperboloid model), embedded in R^3.

Points are ambient 3-vectors: unit vectors for the sphere, and vectors with
``<p, p>_L = -1``, ``p_3 > 0`` for the hyperboloid, where
``<a, b>_L = a1 b1 + a2 b2 - a3 b3``.  All isometries used here are linear
maps of R^3 (rotations and Lorentz transformations).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInput, InvalidArgument, NumericalFailure
from .euclidean import CoupledPath, _crossing
from .numerics import integrate_1d, mat_exp, n_steps_for, run_blocks

SPHERE = "sphere"
HYPERBOLOID = "hyperboloid"
KINDS = (SPHERE, HYPERBOLOID)
LORENTZ = np.diag([1.0, 1.0, -1.0])
ORIGIN = {SPHERE: np.array([0.0, 0.0, 1.0]), HYPERBOLOID: np.array([0.0, 0.0, 1.0])}


def _kind(kind):
    if kind not in KINDS:
        raise InvalidArgument(f"unknown space {kind!r}; expected one of {KINDS}")
    return kind


def inner(kind, a, b):
    """Ambient bilinear form, row-wise for batches."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    prod = a * b
    if kind == SPHERE:
        return prod.sum(axis=-1)
    return prod[..., 0] + prod[..., 1] - prod[..., 2]


def normalize(kind, p):
    """Project ambient points back onto the constraint surface."""
    p = np.asarray(p, dtype=float)
    if kind == SPHERE:
        return p / np.linalg.norm(p, axis=-1, keepdims=True)
    q = -inner(kind, p, p)
    if np.any(q <= 0) or np.any(p[..., 2] <= 0):
        raise NumericalFailure("point left the upper hyperboloid sheet")
    return p / np.sqrt(q)[..., None]


def check_point(kind, p, tol=1e-9):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 3 or not np.all(np.isfinite(p)):
        raise InvalidArgument("points must be finite ambient 3-vectors")
    if kind == SPHERE:
        ok = np.all(np.abs(np.linalg.norm(p, axis=-1) - 1.0) <= tol)
    else:
        ok = np.all(np.abs(inner(kind, p, p) + 1.0) <= tol) and np.all(p[..., 2] >= 1.0 - tol)
    if not ok:
        raise InvalidArgument(f"point is not on the {kind}")
    return p


def sphere_point(theta, phi=0.0):
    """Point at colatitude ``theta`` and longitude ``phi``."""
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def hyperbolic_point(r, phi=0.0):
    """Point at distance ``r`` from the origin ``(0, 0, 1)`` in direction ``phi``."""
    return np.array([np.sinh(r) * np.cos(phi), np.sinh(r) * np.sin(phi), np.cosh(r)])


def distance(kind, x, y):
    """Geodesic distance, stable for nearby and (on S^2) antipodal points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind == SPHERE:
        return np.arctan2(np.linalg.norm(np.cross(x, y), axis=-1), (x * y).sum(axis=-1))
    diff = x - y
    return 2.0 * np.arcsinh(0.5 * np.sqrt(np.maximum(inner(kind, diff, diff), 0.0)))


@dataclass(frozen=True)
class KillingField:
    """Infinitesimal isometry ``x -> G x`` of the ambient space.

    The generator is skew (sphere) or Lorentz-skew, ``G^T L + L G = 0``
    (hyperboloid).
    """

    kind: str
    generator: np.ndarray

    def __post_init__(self):
        _kind(self.kind)
        g = np.asarray(self.generator, dtype=float)
        if g.shape != (3, 3) or not np.all(np.isfinite(g)):
            raise InvalidArgument("Killing generator must be a finite 3x3 matrix")
        metric = np.eye(3) if self.kind == SPHERE else LORENTZ
        if np.max(np.abs(g.T @ metric + metric @ g)) > 1e-12:
            raise InvalidArgument(f"generator is not an infinitesimal isometry of the {self.kind}")
        object.__setattr__(self, "generator", g)

    @classmethod
    def zero(cls, kind):
        return cls(kind, np.zeros((3, 3)))

    @classmethod
    def rotation(cls, kind, omega=1.0):
        """Rotation about the ambient z-axis (an isometry of both spaces)."""
        return cls(kind, omega * np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))

    @classmethod
    def sphere_rotation(cls, axis, omega=1.0):
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        cross = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
        return cls(SPHERE, omega * cross)

    @classmethod
    def boost(cls, omega=1.0, axis=0):
        """Hyperbolic translation along the x (``axis=0``) or y axis."""
        g = np.zeros((3, 3))
        g[axis, 2] = g[2, axis] = omega
        return cls(HYPERBOLOID, g)

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.generator.T


def killing_flow(k, t):
    """The isometry ``exp(G t)`` generated by the Killing field."""
    return mat_exp(k.generator, t)


class ReflectionIsometry(NamedTuple):
    """Reflection in the geodesic ``{z : <z, n> = 0}``."""

    kind: str
    n: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return z - 2.0 * np.multiply.outer(inner(self.kind, z, self.n), self.n)

    def signed_distance(self, z):
        s = inner(self.kind, z, self.n)
        if self.kind == SPHERE:
            return np.arcsin(np.clip(s, -1.0, 1.0))
        return np.arcsinh(s)

    def matrix(self):
        metric = np.eye(3) if self.kind == SPHERE else LORENTZ
        return np.eye(3) - 2.0 * np.outer(self.n, self.n) @ metric


def make_reflection(kind, x, y):
    """The isometric involution swapping ``x`` and ``y``."""
    _kind(kind)
    x = check_point(kind, x)
    y = check_point(kind, y)
    diff = x - y
    q = float(inner(kind, diff, diff))
    if q <= 0.0:
        raise DegenerateInput("x and y coincide")
    return ReflectionIsometry(kind, diff / np.sqrt(q))


def mirror_sample_points(refl, x0, y0, n_points=20, spread=2.0):
    """Points of the fixed geodesic of ``refl`` around the midpoint of ``x0, y0``."""
    kind = refl.kind
    mid = normalize(kind, np.asarray(x0, dtype=float) + np.asarray(y0, dtype=float))
    u = np.cross(refl.n, mid) if kind == SPHERE else LORENTZ @ np.cross(refl.n, mid)
    u = u / np.sqrt(inner(kind, u, u))
    s = np.linspace(-spread, spread, n_points)[:, None]
    if kind == SPHERE:
        return np.cos(s) * mid + np.sin(s) * u
    return np.cosh(s) * mid + np.sinh(s) * u


def tangent_frame(kind, x):
    """Orthonormal tangent frame ``(e1, e2)`` at each row of ``x``."""
    x = np.asarray(x, dtype=float)
    rho = np.hypot(x[..., 0], x[..., 1])
    safe = np.where(rho > 0, rho, 1.0)
    cphi = np.where(rho > 0, x[..., 0] / safe, 1.0)
    sphi = np.where(rho > 0, x[..., 1] / safe, 0.0)
    if kind == SPHERE:
        e1 = np.stack([x[..., 2] * cphi, x[..., 2] * sphi, -rho], axis=-1)
    else:
        e1 = np.stack([x[..., 2] * cphi, x[..., 2] * sphi, rho], axis=-1)
    e2 = np.stack([-sphi, cphi, np.zeros_like(rho)], axis=-1)
    return e1, e2


def exp_map(kind, x, v):
    """Endpoint of the unit-time geodesic from ``x`` with velocity ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    speed = np.sqrt(np.maximum(inner(kind, v, v), 0.0))[..., None]
    safe = np.where(speed > 0, speed, 1.0)
    if kind == SPHERE:
        out = np.cos(speed) * x + np.sin(speed) * v / safe
    else:
        out = np.cosh(speed) * x + np.sinh(speed) * v / safe
    return normalize(kind, np.where(speed > 0, out, x))


def bm_step_manifold(kind, x, drift_vec, dt, rng=None, noise=None):
    """One geodesic Euler step of Brownian motion with drift.

    ``v = drift dt + g``, with ``g`` an N(0, dt I_2) vector expressed in an
    orthonormal tangent frame at ``x``, is pushed through the exponential
    map.  ``noise`` (shape ``(..., 2)``, already scaled by ``sqrt(dt)``)
    replaces the random draw when given.

    Large drifts make the scheme unstable (a rotation field on H^2 grows like
    ``sinh r``); the coupling simulators therefore apply Killing drifts
    through the exact flow instead.
    """
    _kind(kind)
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    x = np.asarray(x, dtype=float)
    drift_vec = np.broadcast_to(np.asarray(drift_vec, dtype=float), x.shape)
    if np.any(np.abs(inner(kind, drift_vec, x)) > 1e-8 * (1.0 + np.linalg.norm(drift_vec, axis=-1))):
        raise InvalidArgument("drift vector is not tangent at x")
    if noise is None:
        noise = np.sqrt(dt) * rng.normal(x.shape[:-1] + (2,))
    noise = np.asarray(noise, dtype=float)
    e1, e2 = tangent_frame(kind, x)
    v = drift_vec * dt + noise[..., :1] * e1 + noise[..., 1:2] * e2
    return exp_map(kind, x, v)


class ManifoldMirror(NamedTuple):
    """Mirror snapshot in CSV form: ambient normal and zero offset."""

    n: np.ndarray
    l: float = 0.0


def _manifold_block(refl, z0, dt, n_steps, rng, n, bridge, keep_path):
    kind = refl.kind
    z = np.tile(z0, (n, 1))
    tau = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    s_old = refl.signed_distance(z)
    path = [z.copy()] if keep_path else None
    sq = np.sqrt(dt)
    zero = np.zeros(3)
    for k in range(n_steps):
        if keep_path:
            z = bm_step_manifold(kind, z, zero, dt, noise=sq * rng.normal((n, 2)))
            ia = np.flatnonzero(active)
        else:
            ia = np.flatnonzero(active)
            if ia.size == 0:
                break
            z[ia] = bm_step_manifold(kind, z[ia], zero, dt, noise=sq * rng.normal((ia.size, 2)))
        s_new = refl.signed_distance(z[ia])
        hit, frac = _crossing(s_old[ia], s_new, dt, 1.0, rng, bridge)
        tau[ia[hit]] = k * dt + dt * frac[hit]
        active[ia[hit]] = False
        s_old[ia] = s_new
        if keep_path:
            path.append(z.copy())
    return tau, path


def simulate_manifold_coupling(k, x0, y0, dt, horizon, rng, bridge=True):
    """Maximal coupling of Brownian motions with Killing drift ``k``.

    A driftless pair ``(Z, R0 Z)`` reflected in the fixed mirror of
    ``(x0, y0)`` is pushed forward by the flow: ``X = U_t Z``,
    ``Y = U_t R0 Z`` until the mirror is hit, ``Y = X`` afterwards.  The
    recorded mirror normal at time ``t`` is ``U_t n0``.
    """
    kind = k.kind
    refl = make_reflection(kind, x0, y0)
    n_steps = n_steps_for(horizon, dt)
    tau, path = _manifold_block(refl, check_point(kind, x0), dt, n_steps, rng, 1, bridge, True)
    tau = float(tau[0])
    times = dt * np.arange(n_steps + 1)
    xs = np.empty((n_steps + 1, 3))
    ys = np.empty((n_steps + 1, 3))
    mirrors = []
    for i, t in enumerate(times):
        flow = killing_flow(k, t)
        z = path[i][0]
        xs[i] = flow @ z
        ys[i] = flow @ refl(z) if t < tau else xs[i]
        mirrors.append(ManifoldMirror(flow @ refl.n))
    return CoupledPath(times=times, xs=xs, ys=ys, tau=tau, mirror_snapshots=mirrors)


def simulate_manifold_coupling_batch(kind, x0, y0, dt, horizon, n_paths, seed, bridge=True, threads=None):
    """Coupling times of many reflection-coupled Brownian pairs.

    The Killing drift does not enter: the flow is an isometry applied to both
    copies, so the coupling time is that of the driftless pair.
    """
    refl = make_reflection(kind, x0, y0)
    z0 = check_point(kind, x0)
    n_steps = n_steps_for(horizon, dt)

    def block(rng, n):
        return _manifold_block(refl, z0, dt, n_steps, rng, n, bridge, False)[0]

    return np.concatenate(run_blocks(block, n_paths, seed, threads))


def simulate_killing_drift_batch(k, x0, y0, dt, horizon, n_paths, seed, bridge=True, threads=None):
    """Coupling times of the drifted pair simulated directly.

    ``X`` follows ``dX = K(X) dt + dB`` by geodesic Euler steps and ``tau``
    is the first crossing of the moving mirror with normal ``U_t n0``.  The
    result is an independent check on :func:`simulate_manifold_coupling_batch`.
    """
    kind = k.kind
    refl = make_reflection(kind, x0, y0)
    x0 = check_point(kind, x0)
    n_steps = n_steps_for(horizon, dt)
    normals = np.array([killing_flow(k, i * dt) @ refl.n for i in range(n_steps + 1)])
    sq = np.sqrt(dt)

    def signed(x, i):
        return ReflectionIsometry(kind, normals[i]).signed_distance(x)

    def block(rng, n):
        x = np.tile(x0, (n, 1))
        tau = np.full(n, np.inf)
        ia = np.arange(n)
        s_old = signed(x, 0)
        for i in range(n_steps):
            if ia.size == 0:
                break
            xa = bm_step_manifold(kind, x[ia], k(x[ia]), dt, noise=sq * rng.normal((ia.size, 2)))
            x[ia] = xa
            s_new = signed(xa, i + 1)
            hit, frac = _crossing(s_old[ia], s_new, dt, 1.0, rng, bridge)
            tau[ia[hit]] = i * dt + dt * frac[hit]
            s_old[ia] = s_new
            ia = ia[~hit]
        return tau

    return np.concatenate(run_blocks(block, n_paths, seed, threads))


# ---------------------------------------------------------------- heat kernels

KERNEL_TAIL_TOL = 1e-10


def _sphere_terms(t, budget):
    L = 0
    while True:
        q = np.exp(-(L + 2) * t)
        bound = np.exp(-(L + 1) * (L + 2) * t / 2.0) * (2 * L + 3) / (4 * np.pi * (1.0 - q))
        if bound < KERNEL_TAIL_TOL:
            return L
        L += 1
        if L > budget:
            raise NumericalFailure(
                f"t={t} needs more than {budget} Legendre terms; raise the term budget"
            )


def sphere_heat_kernel(theta, t, terms=5000):
    """Transition density of Brownian motion (generator half the Laplacian)
    on the unit S^2, as a function of geodesic distance ``theta``.

    Legendre series truncated at the first order whose tail bound is below
    1e-10; ``terms`` caps the order.
    """
    if t <= 0:
        raise InvalidArgument("t must be positive")
    theta = np.asarray(theta, dtype=float)
    L = _sphere_terms(t, terms)
    x = np.cos(theta)
    p_prev = np.ones_like(x)
    total = p_prev / (4 * np.pi)
    if L == 0:
        return total
    p_cur = x.copy()
    for ell in range(1, L + 1):
        total = total + (2 * ell + 1) / (4 * np.pi) * np.exp(-ell * (ell + 1) * t / 2.0) * p_cur
        p_prev, p_cur = p_cur, ((2 * ell + 1) * x * p_cur - ell * p_prev) / (ell + 1)
    return total


def hyperbolic_heat_kernel_mckean(rho, t, tol=1e-12):
    """Integral formula for the H^2 heat kernel of half the Laplacian.

    Used only to validate the Monte-Carlo-calibrated table.
    """
    pref = np.sqrt(2.0) * np.exp(-t / 8.0) / (2 * np.pi * t) ** 1.5

    def one(r):
        def g(w):
            s = r + w * w
            gap = 2.0 * np.sinh(0.5 * (s + r)) * np.sinh(0.5 * w * w)
            if w == 0.0:
                # w -> 0 limit: the square-root singularity cancels for r > 0
                return 2.0 * r * np.exp(-r * r / (2 * t)) / np.sqrt(np.sinh(r)) if r > 0 else 0.0
            return 2.0 * w * s * np.exp(-s * s / (2 * t)) / np.sqrt(gap)

        upper = np.sqrt(max(0.0, 12.0 * np.sqrt(t) + 2 * t + 10.0))
        return pref * integrate_1d(g, 0.0, upper, tol=tol)

    rho = np.asarray(rho, dtype=float)
    return np.vectorize(one, otypes=[float])(rho)


@dataclass(frozen=True)
class RadialKernelTable:
    """Monte-Carlo calibrated density of the distance ``r`` from the start
    point after time ``t`` (Brownian motion on H^2)."""

    t: float
    r: np.ndarray
    radial_density: np.ndarray
    bandwidth: float
    n_paths: int

    def kernel(self, rho):
        """Heat kernel w.r.t. area: radial density over ``2 pi sinh r``."""
        rho = np.asarray(rho, dtype=float)
        f = np.interp(rho, self.r, self.radial_density, right=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rho > 0, f / (2 * np.pi * np.sinh(rho)), np.nan)


def _reflected_kde(samples, grid, bandwidth, n_bins=4000):
    hi = max(grid[-1], samples.max()) + 1e-12
    counts, edges = np.histogram(samples, bins=n_bins, range=(0.0, hi))
    centres = 0.5 * (edges[1:] + edges[:-1])
    dens = np.zeros_like(grid)
    norm = 1.0 / (samples.size * bandwidth * np.sqrt(2 * np.pi))
    for chunk in np.array_split(np.arange(grid.size), max(1, grid.size // 256)):
        r = grid[chunk, None]
        w = np.exp(-0.5 * ((r - centres) / bandwidth) ** 2) + np.exp(-0.5 * ((r + centres) / bandwidth) ** 2)
        dens[chunk] = norm * (w @ counts)
    return dens


@functools.lru_cache(maxsize=32)
def calibrate_hyperbolic_kernel(t, n_paths=10**6, dt=5e-3, seed=20240611, threads=None, n_grid=1024):
    """Radial heat-kernel table on H^2 from ``n_paths`` driftless Brownian paths
    started at the origin, smoothed by a Gaussian KDE reflected at ``r = 0``.

    Tables are cached and shared read-only.
    """
    if t <= 0:
        raise InvalidArgument("t must be positive")
    n_steps = n_steps_for(t, dt)
    step = t / n_steps
    origin = ORIGIN[HYPERBOLOID]

    def block(rng, n):
        z = np.tile(origin, (n, 1))
        zero = np.zeros(3)
        for _ in range(n_steps):
            z = bm_step_manifold(HYPERBOLOID, z, zero, step, rng)
        return distance(HYPERBOLOID, z, origin)

    r = np.concatenate(run_blocks(block, n_paths, seed, threads))
    spread = min(r.std(), (np.quantile(r, 0.75) - np.quantile(r, 0.25)) / 1.34)
    h = 0.9 * spread * r.size ** (-0.2)
    grid = np.linspace(0.0, r.max() + 5 * h, n_grid)
    dens = _reflected_kde(r, grid, h)
    return RadialKernelTable(t=float(t), r=grid, radial_density=dens, bandwidth=float(h), n_paths=int(n_paths))


# ---------------------------------------------------------- total variation

def _lower_half_measure(kind, r, half):
    """Angular measure of the directions at distance ``r`` from a point at
    distance ``half`` from the mirror that land beyond the mirror."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == SPHERE:
            u = -np.tan(half) * np.cos(r) / np.sin(r)
        else:
            u = -np.tanh(half) / np.tanh(r)
    u = np.where(np.isfinite(u), u, -1.0)
    return 2 * np.pi - 2 * np.arccos(np.clip(u, -1.0, 1.0))


def tv_model_space(kind, x0, y0, t, tol=1e-10, hyperbolic_kernel="table", table_options=None):
    """Total variation between Brownian laws from ``x0`` and ``y0`` at time ``t``.

    By the reflection symmetry ``TV = 1 - 2 P_x0(Z_t beyond the mirror)``; the
    probability is integrated in geodesic polar coordinates about ``x0``
    with the azimuthal integral in closed form.  On H^2 the kernel is either
    the calibrated table (``"table"``) or the integral formula
    (``"mckean"``).
    """
    _kind(kind)
    x0 = check_point(kind, x0)
    y0 = check_point(kind, y0)
    D = float(distance(kind, x0, y0))
    if D == 0.0:
        return 0.0
    if t == 0:
        return 1.0
    if t < 0:
        raise InvalidArgument("t must be non-negative")
    half = 0.5 * D
    if kind == SPHERE:
        def integrand(r):
            return float(sphere_heat_kernel(r, t) * np.sin(r) * _lower_half_measure(kind, r, half))

        beyond = integrate_1d(integrand, 0.0, np.pi, tol=tol, points=[half, np.pi - half])
        return float(1.0 - 2.0 * beyond)
    if hyperbolic_kernel == "mckean":
        upper = half + 12.0 * np.sqrt(t) + 2 * t

        def integrand(r):
            return float(hyperbolic_heat_kernel_mckean(r, t) * np.sinh(r) * _lower_half_measure(kind, r, half))

        beyond = integrate_1d(integrand, half, upper, tol=max(tol, 1e-9))
        return float(1.0 - 2.0 * beyond)
    if hyperbolic_kernel != "table":
        raise InvalidArgument("hyperbolic_kernel must be 'table' or 'mckean'")
    table = calibrate_hyperbolic_kernel(float(t), **(table_options or {}))
    w = table.radial_density * _lower_half_measure(kind, table.r, half) / (2 * np.pi)
    beyond = float(np.trapezoid(w, table.r))
    return float(1.0 - 2.0 * beyond)


def tv_model_space_direct(kind, x0, y0, t, n_theta=1600, n_phi=1600):
    """Brute-force ``1/2 int |p_x0 - p_y0| dA`` on S^2 by tensor Gauss-Legendre
    quadrature in polar coordinates about ``x0`` (cross-check only)."""
    if kind != SPHERE:
        raise InvalidArgument("direct quadrature is implemented for the sphere only")
    D = float(distance(kind, x0, y0))
    th, wth = np.polynomial.legendre.leggauss(n_theta)
    ph, wph = np.polynomial.legendre.leggauss(n_phi)
    th = 0.5 * np.pi * (th + 1)
    wth = 0.5 * np.pi * wth
    ph = np.pi * (ph + 1)
    wph = np.pi * wph
    px = sphere_heat_kernel(th, t)
    total = 0.0
    for i in range(n_theta):
        cos_dy = np.cos(th[i]) * np.cos(D) + np.sin(th[i]) * np.sin(D) * np.cos(ph)
        py = sphere_heat_kernel(np.arccos(np.clip(cos_dy, -1.0, 1.0)), t)
        total += wth[i] * np.sin(th[i]) * np.sum(wph * np.abs(px[i] - py))
    return 0.5 * total
