"""Small dense linear algebra, quadrature, Euler-Maruyama steps and
reproducible random streams.

Everything here is a pure function of its inputs except :class:`RngStream`,
which owns a counter-based Philox generator keyed by ``(seed, stream_id)``.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import InvalidArgument, NumericalFailure

MAX_DIM = 16
MAX_HORIZON = 1.0e3
# Paths are simulated in fixed-size blocks; block j always draws from
# RngStream(seed, j), which makes batch results independent of thread count.
BLOCK_SIZE = 4096


def as_vec(x, name="vector"):
    """Return ``x`` as a finite 1-d float array of length at most MAX_DIM."""
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise InvalidArgument(f"{name} must be one-dimensional, got shape {v.shape}")
    if v.size == 0 or v.size > MAX_DIM:
        raise InvalidArgument(f"{name} must have length in 1..{MAX_DIM}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return v


def as_mat(m, name="matrix"):
    """Return ``m`` as a finite square float array."""
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgument(f"{name} must be square, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise InvalidArgument(f"{name} dimension exceeds {MAX_DIM}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return a


def mat_exp(M, t=1.0):
    """Matrix exponential ``exp(M t)``.

    Backed by scipy's scaling-and-squaring Pade algorithm, which is accurate
    to a few ulps relative to ``||exp(Mt)||`` for the small matrices used here.
    """
    a = as_mat(M, "M")
    t = float(t)
    if not np.isfinite(t):
        raise InvalidArgument("t must be finite")
    if abs(t) > MAX_HORIZON:
        raise InvalidArgument(f"|t| exceeds the maximum horizon {MAX_HORIZON}")
    if t == 0.0:
        return np.eye(a.shape[0])
    return scipy.linalg.expm(a * t)


def integrate_1d(f, a, b, tol=1e-10, points=None, limit=500):
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``[a, b]``.

    Raises :class:`NumericalFailure` (carrying the best estimate) when the
    reported absolute error exceeds ``tol``.
    """
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
        val, err, *_ = scipy.integrate.quad(
            f, a, b, epsabs=tol, epsrel=0.0, limit=limit, points=points, full_output=1
        )
    if not np.isfinite(val):
        raise NumericalFailure("integrand produced non-finite values", estimate=val)
    if err > tol:
        raise NumericalFailure(
            f"quadrature error estimate {err:.3e} exceeds tol {tol:.3e}", estimate=val
        )
    return float(val)


def em_step(x, drift_value, dt, noise):
    """One Euler-Maruyama step for ``dX = b dt + dB``: ``x + b dt + noise``.

    Works on single vectors and on ``(n_paths, d)`` batches alike.
    """
    return x + drift_value * dt + noise


@dataclass
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Two streams with the same key yield the same sequence no matter how many
    other streams exist or in which order they are consumed.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        mask = (1 << 64) - 1
        key = np.array([self.seed & mask, self.stream_id & mask], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def normal(self, size):
        return self.generator.standard_normal(size)

    def uniform(self, size):
        return self.generator.random(size)


def gaussian_noise(rng, d, dt, n=None):
    """``d`` independent N(0, dt) draws (shape ``(n, d)`` when ``n`` is given)."""
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    shape = d if n is None else (n, d)
    return np.sqrt(dt) * rng.normal(shape)


def n_steps_for(horizon, dt):
    """Number of grid steps covering ``[0, horizon]`` with step ``dt``."""
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    if horizon <= 0:
        raise InvalidArgument("horizon must be positive")
    return int(np.ceil(horizon / dt - 1e-9))


def resolve_threads(threads=None):
    """Worker count from the argument, ``MMC_LAB_THREADS``, or 1."""
    if threads is None:
        threads = os.environ.get("MMC_LAB_THREADS", 1)
    threads = int(threads)
    if threads < 1:
        raise InvalidArgument("threads must be at least 1")
    return threads


def run_blocks(block_fn, n_paths, seed, threads=None, block_size=BLOCK_SIZE):
    """Run ``block_fn(rng, n)`` over fixed path blocks and return the results
    in block order.

    Block ``j`` covers paths ``j*block_size ...`` and is always fed
    ``RngStream(seed, j)``, so the output does not depend on ``threads``.
    """
    if n_paths < 1:
        raise InvalidArgument("n_paths must be at least 1")
    sizes = [min(block_size, n_paths - start) for start in range(0, n_paths, block_size)]
    jobs = [(RngStream(seed, j), n) for j, n in enumerate(sizes)]
    threads = resolve_threads(threads)
    if threads == 1 or len(jobs) == 1:
        return [block_fn(rng, n) for rng, n in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: block_fn(*job), jobs))
