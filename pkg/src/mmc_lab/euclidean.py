"""Reflection couplings of Euclidean diffusions ``dX = b(t, X) dt + dB``.

A coupling is driven by a (possibly moving) mirror: the hyperplane
``{z : n(t).z = l(t)}``.  Until the first time ``X`` touches the mirror the
partner is its mirror image ``Y = F(t, X)``; afterwards the two move together.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateInput, InvalidArgument, NotAdmissible
from .numerics import (
    RngStream,
    as_mat,
    as_vec,
    em_step,
    integrate_1d,
    mat_exp,
    n_steps_for,
    run_blocks,
)

FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class MirrorState:
    """Hyperplane ``{z : n.z = l}`` together with ``dn/dt`` and ``dl/dt``."""

    n: np.ndarray
    l: float
    n_dot: np.ndarray
    l_dot: float = 0.0

    def __post_init__(self):
        n = as_vec(self.n, "n")
        n_dot = as_vec(self.n_dot, "n_dot")
        if n_dot.shape != n.shape:
            raise InvalidArgument("n and n_dot must have the same length")
        if abs(np.linalg.norm(n) - 1.0) > 1e-10:
            raise InvalidArgument("mirror normal must be a unit vector")
        if abs(n @ n_dot) > 1e-8 * (1.0 + np.linalg.norm(n_dot)):
            raise InvalidArgument("n_dot must be orthogonal to n")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "n_dot", n_dot)
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "l_dot", float(self.l_dot))

    @property
    def dim(self):
        return self.n.size

    def signed_distance(self, x):
        return np.asarray(x) @ self.n - self.l

    def closest_point(self, x):
        """Orthogonal projection of ``x`` onto the mirror."""
        x = np.asarray(x, dtype=float)
        return x - np.multiply.outer(self.signed_distance(x), self.n)


@dataclass(frozen=True)
class AffineDrift:
    """Drift ``b(x) = A x + c`` split into symmetric and skew parts."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = as_mat(self.A, "A")
        c = as_vec(self.c, "c")
        if c.size != A.shape[0]:
            raise InvalidArgument("A and c have incompatible dimensions")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @classmethod
    def zero(cls, d):
        return cls(np.zeros((d, d)), np.zeros(d))

    @property
    def dim(self):
        return self.c.size

    @property
    def S(self):
        return 0.5 * (self.A + self.A.T)

    @property
    def T(self):
        return 0.5 * (self.A - self.A.T)

    vectorized = True

    def evaluate(self, t, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.c

    def jacobian(self, t, x):
        return self.A.copy()

    def __call__(self, t, x):
        return self.evaluate(t, x)


def fd_jacobian(f, t, x):
    """Central finite-difference Jacobian with step ``1e-5 (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    h = FD_REL_STEP * (1.0 + np.linalg.norm(x))
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(t, x + e)) - np.asarray(f(t, x - e))) / (2 * h))
    return np.column_stack(cols)


@dataclass(frozen=True)
class GeneralDrift:
    """Arbitrary drift ``b(t, x)``.

    ``vectorized=True`` promises that ``func`` accepts ``(n_paths, d)``
    batches; otherwise batches are evaluated row by row.
    """

    func: Callable
    jac: Optional[Callable] = None
    vectorized: bool = False

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 or self.vectorized:
            return np.asarray(self.func(t, x), dtype=float)
        return np.array([self.func(t, row) for row in x], dtype=float)

    def jacobian(self, t, x):
        if self.jac is not None:
            return np.asarray(self.jac(t, x), dtype=float)
        return fd_jacobian(self.evaluate, t, x)

    def __call__(self, t, x):
        return self.evaluate(t, x)


def as_drift(b):
    if isinstance(b, (AffineDrift, GeneralDrift)):
        return b
    if callable(b):
        return GeneralDrift(b)
    raise InvalidArgument("drift must be an AffineDrift, GeneralDrift or callable(t, x)")


def make_mirror(x, y):
    """The perpendicular bisector of ``x`` and ``y`` as a static mirror."""
    x = as_vec(x, "x")
    y = as_vec(y, "y")
    if x.shape != y.shape:
        raise InvalidArgument("x and y must have the same length")
    diff = x - y
    dist = np.linalg.norm(diff)
    if dist == 0.0:
        raise DegenerateInput("x and y coincide; no mirror separates them")
    n = diff / dist
    return MirrorState(n=n, l=float(n @ (x + y)) / 2.0, n_dot=np.zeros_like(n), l_dot=0.0)


def reflect(m, x):
    """``F(x) = (I - 2 n n^T) x + 2 l n``; accepts batches of row vectors."""
    x = np.asarray(x, dtype=float)
    return x - 2.0 * np.multiply.outer(x @ m.n - m.l, m.n)


def _admissible_lambda(d, x0, y0, tol):
    from .classification import affine_mmc_exists

    lam = affine_mmc_exists(d, x0, y0, tol=tol)
    if lam is None:
        raise NotAdmissible("no Markovian maximal coupling for this affine drift and start pair")
    return lam


def _mirror_from_lambda(d, n0, l0, lam, t):
    T = d.T
    n = mat_exp(T, t) @ n0
    if t == 0.0 or not np.any(d.c):
        integral = 0.0
    else:
        K = -(T + lam * np.eye(d.dim))
        # integrand is bounded by |c| e^{-lam s}
        scale = max(1.0, float(np.linalg.norm(d.c))) * max(1.0, t) * max(1.0, np.exp(-lam * t))
        integral = integrate_1d(
            lambda s: float(n0 @ (mat_exp(K, s) @ d.c)), 0.0, t, tol=1e-12 * scale
        )
    growth = np.exp(lam * t)
    l = growth * l0 + growth * integral
    return MirrorState(n=n, l=l, n_dot=T @ n, l_dot=lam * l + float(n @ d.c))


def mirror_evolve_affine(d, x0, y0, t, tol=1e-8):
    """Mirror at time ``t`` of the maximal coupling for ``b(x) = A x + c``.

    ``n(t) = exp(T t) n(0)`` and ``l`` solves ``l' = lambda0 l + n.c``; the
    integral term is evaluated by quadrature.
    """
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    lam = _admissible_lambda(d, x0, y0, tol)
    m0 = make_mirror(x0, y0)
    return _mirror_from_lambda(d, m0.n, m0.l, lam, float(t))


def affine_mirror_fn(d, x0, y0, tol=1e-8):
    """Closure ``t -> MirrorState`` for repeated evaluation along a grid."""
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    lam = _admissible_lambda(d, x0, y0, tol)
    m0 = make_mirror(x0, y0)

    def mirror(t):
        return _mirror_from_lambda(d, m0.n, m0.l, lam, float(t))

    mirror.lambda0 = lam
    return mirror


def static_mirror_fn(m):
    return lambda t: m


def drift_constraint_residual(b, m, t, x):
    """Raw residual of the mirror constraint on the drift at ``(t, x)``.

    ``b(x) - [2(n' n^T - n n'^T) x + 2(l' n - l n') + (I - 2 n n^T) b(F(x))]``
    vanishes identically exactly when the mirror ``m`` is compatible with a
    maximal coupling for ``b``.
    """
    b = as_drift(b)
    x = as_vec(x, "x")
    n, nd = m.n, m.n_dot
    bx = b.evaluate(t, x)
    bF = b.evaluate(t, reflect(m, x))
    rot = 2.0 * (np.outer(nd, n) - np.outer(n, nd)) @ x
    shift = 2.0 * (m.l_dot * n - m.l * nd)
    refl_b = bF - 2.0 * n * (n @ bF)
    return bx - (rot + shift + refl_b)


@dataclass
class CoupledPath:
    """One discretised coupled pair.  ``tau`` is ``inf`` if no coupling
    happened before the horizon."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    tau: float
    mirror_snapshots: list = field(default_factory=list)

    @property
    def coupled(self):
        return self.times >= self.tau

    def csv_header(self):
        d = self.xs.shape[1]
        return (
            ["t"]
            + [f"x_{i + 1}" for i in range(d)]
            + [f"y_{i + 1}" for i in range(d)]
            + [f"n_{i + 1}" for i in range(d)]
            + ["l", "coupled"]
        )

    def csv_rows(self):
        for k, t in enumerate(self.times):
            m = self.mirror_snapshots[k]
            yield (
                [fmt(t)]
                + [fmt(v) for v in self.xs[k]]
                + [fmt(v) for v in self.ys[k]]
                + [fmt(v) for v in m.n]
                + [fmt(m.l), "1" if t >= self.tau else "0"]
            )

    def to_csv(self, target=None):
        """Write the path to ``target`` (path or file object); return the text
        when ``target`` is None."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerows(self.csv_rows())
        text = buf.getvalue()
        if target is None:
            return text
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def fmt(v):
    """Round-trippable float formatting used by every CSV writer."""
    return format(float(v), ".17g")


def _grid_index(times, dt, n_steps):
    idx = []
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) or k < 0 or k > n_steps:
            raise InvalidArgument(f"sample time {t} is not on the simulation grid")
        idx.append(k)
    return idx


def _crossing(s_old, s_new, dt, var, rng, bridge):
    """Which paths met the mirror during the step and at what fraction of it.

    A sign change is refined by linear interpolation.  With ``bridge`` the
    Brownian-bridge probability ``exp(-2 s0 s1 / (var dt))`` of an unseen
    excursion across the mirror is also sampled; such hits are placed at the
    middle of the step.
    """
    prod = s_old * s_new
    hit = prod <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(hit, s_old / (s_old - s_new), 0.5)
    frac = np.where(np.isfinite(frac), np.clip(frac, 0.0, 1.0), 1.0)
    if bridge and s_old.size:
        u = rng.uniform(s_old.size)
        with np.errstate(over="ignore"):
            p_cross = np.exp(-2.0 * np.maximum(prod, 0.0) / (var * dt))
        hit = hit | (u < p_cross)
    return hit, frac


def _reflection_block(drift, normals, offsets, x0, dt, rng, n, bridge, sample_steps, keep_path):
    d = x0.size
    n_steps = normals.shape[0] - 1
    x = np.tile(x0, (n, 1))
    tau = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    s_old = x @ normals[0] - offsets[0]
    follow_all = keep_path or bool(sample_steps)
    last_needed = n_steps if keep_path else max(sample_steps, default=0)
    samples = {}
    path = [x.copy()] if keep_path else None
    if 0 in sample_steps:
        samples[0] = x.copy()
    sq = np.sqrt(dt)
    for k in range(n_steps):
        if not active.any() and k >= last_needed:
            break
        t = k * dt
        if follow_all:
            x = em_step(x, drift.evaluate(t, x), dt, sq * rng.normal((n, d)))
            ia = np.flatnonzero(active)
        else:
            ia = np.flatnonzero(active)
            xa = x[ia]
            x[ia] = em_step(xa, drift.evaluate(t, xa), dt, sq * rng.normal((ia.size, d)))
        s_new = x[ia] @ normals[k + 1] - offsets[k + 1]
        hit, frac = _crossing(s_old[ia], s_new, dt, 1.0, rng, bridge)
        tau[ia[hit]] = t + dt * frac[hit]
        active[ia[hit]] = False
        s_old[ia] = s_new
        if keep_path:
            path.append(x.copy())
        if (k + 1) in sample_steps:
            samples[k + 1] = x.copy()
    return tau, samples, path


def _mirror_table(mirror_fn, dt, n_steps):
    mirrors = [mirror_fn(k * dt) for k in range(n_steps + 1)]
    normals = np.array([m.n for m in mirrors])
    offsets = np.array([m.l for m in mirrors])
    return mirrors, normals, offsets


def _check_start(mirror_fn, x0, y0):
    m0 = mirror_fn(0.0)
    if m0.dim != x0.size:
        raise InvalidArgument("mirror and start point dimensions differ")
    if not np.allclose(reflect(m0, x0), y0, rtol=1e-8, atol=1e-8):
        raise InvalidArgument("y0 must be the mirror image of x0 at time 0")


def simulate_coupling(b, mirror_fn, x0, y0, dt, horizon, rng, bridge=True):
    """Simulate one reflection-coupled pair and record the whole path."""
    b = as_drift(b)
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    _check_start(mirror_fn, x0, y0)
    n_steps = n_steps_for(horizon, dt)
    mirrors, normals, offsets = _mirror_table(mirror_fn, dt, n_steps)
    tau, _, path = _reflection_block(b, normals, offsets, x0, dt, rng, 1, bridge, (), True)
    times = dt * np.arange(n_steps + 1)
    xs = np.array([p[0] for p in path])
    ys = xs.copy()
    tau = float(tau[0])
    for k, t in enumerate(times):
        if t < tau:
            ys[k] = reflect(mirrors[k], xs[k])
    return CoupledPath(times=times, xs=xs, ys=ys, tau=tau, mirror_snapshots=mirrors)


@dataclass
class CouplingSample:
    """Coupling times of many paths plus ``X``/``Y`` snapshots at chosen times."""

    taus: np.ndarray
    sample_times: list
    xs: dict
    ys: dict


def simulate_coupling_batch(
    b, mirror_fn, x0, y0, dt, horizon, n_paths, seed, sample_times=(), bridge=True, threads=None
):
    """Many independent reflection-coupled pairs.

    Paths are grouped in fixed blocks, block ``j`` drawing from
    ``RngStream(seed, j)``; the result does not depend on ``threads``.
    """
    b = as_drift(b)
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    _check_start(mirror_fn, x0, y0)
    n_steps = n_steps_for(horizon, dt)
    mirrors, normals, offsets = _mirror_table(mirror_fn, dt, n_steps)
    sample_times = list(sample_times)
    steps = _grid_index(sample_times, dt, n_steps)
    step_set = frozenset(steps)

    def block(rng, n):
        return _reflection_block(b, normals, offsets, x0, dt, rng, n, bridge, step_set, False)

    results = run_blocks(block, n_paths, seed, threads)
    taus = np.concatenate([r[0] for r in results])
    xs, ys = {}, {}
    for t, k in zip(sample_times, steps):
        x = np.concatenate([r[1][k] for r in results])
        y = x.copy()
        free = taus > k * dt
        y[free] = reflect(mirrors[k], x[free])
        xs[t] = x
        ys[t] = y
    return CouplingSample(taus=taus, sample_times=sample_times, xs=xs, ys=ys)


def simulate_independent_coupling_batch(b, x0, y0, dt, horizon, n_paths, seed, bridge=True, threads=None):
    """Two copies driven by independent noise streams, merged once they meet.

    Only one-dimensional diffusions are supported (independent copies in
    higher dimension do not meet).
    """
    b = as_drift(b)
    x0 = as_vec(x0, "x0")
    y0 = as_vec(y0, "y0")
    if x0.size != 1 or y0.size != 1:
        raise InvalidArgument("independent coupling is only meaningful in one dimension")
    n_steps = n_steps_for(horizon, dt)
    sq = np.sqrt(dt)

    def block(rng, n):
        rng_y = RngStream(rng.seed, rng.stream_id | (1 << 63))
        x = np.full((n, 1), x0[0])
        y = np.full((n, 1), y0[0])
        tau = np.full(n, np.inf)
        active = np.ones(n, dtype=bool)
        gap_old = (x - y)[:, 0]
        for k in range(n_steps):
            ia = np.flatnonzero(active)
            if ia.size == 0:
                break
            t = k * dt
            xa, ya = x[ia], y[ia]
            x[ia] = em_step(xa, b.evaluate(t, xa), dt, sq * rng.normal((ia.size, 1)))
            y[ia] = em_step(ya, b.evaluate(t, ya), dt, sq * rng_y.normal((ia.size, 1)))
            gap_new = (x[ia] - y[ia])[:, 0]
            hit, frac = _crossing(gap_old[ia], gap_new, dt, 2.0, rng, bridge)
            tau[ia[hit]] = t + dt * frac[hit]
            active[ia[hit]] = False
            gap_old[ia] = gap_new
        return tau

    return np.concatenate(run_blocks(block, n_paths, seed, threads))


def _is_orthogonal(Q, tol=1e-9):
    return np.allclose(Q.T @ Q, np.eye(Q.shape[0]), atol=tol, rtol=0.0)


def gauge_transform_drift(b, Q, l, Qdot, ldot):
    """Drift of ``X~ = Q(t) X - l(t) e1`` for a rotating, translating frame.

    ``Q``, ``l``, ``Qdot``, ``ldot`` are callables of time.  The returned drift
    evaluates ``Q' Q^T (x + l e1) + Q b(t, Q^T (x + l e1)) - l' e1`` and
    rejects any ``Q(t)`` that is not orthogonal.
    """
    b = as_drift(b)

    def transformed(t, x):
        q = np.asarray(Q(t), dtype=float)
        if not _is_orthogonal(q):
            raise InvalidArgument(f"Q({t}) is not orthogonal")
        x = np.asarray(x, dtype=float)
        e1 = np.zeros(q.shape[0])
        e1[0] = 1.0
        z = x + l(t) * e1
        back = z @ q  # rows of Q^T z
        out = z @ (np.asarray(Qdot(t)) @ q.T).T + b.evaluate(t, back) @ q.T
        return out - ldot(t) * e1

    return GeneralDrift(transformed, vectorized=True)
