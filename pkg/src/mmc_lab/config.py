"""Experiment configuration: YAML in, validated :class:`ExperimentConfig` out.

See README.md for the full grammar.  Unknown keys are rejected so typos do
not silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import yaml

from .errors import InvalidArgument

KINDS = ("simulate", "verify", "classify", "mirror", "tv")
SPACES = ("euclidean", "sphere", "hyperboloid")
NAMED_DRIFTS = ("ou", "sin", "quadratic", "custom-grid")
COUPLINGS = ("reflection", "independent")

DEFAULT_TIMES = [0.25, 0.5, 1.0, 2.0, 4.0]
DEFAULT_TOLERANCES = {"linalg": 1e-8, "sampled": 1e-6, "z": 4.0}


class ConfigError(InvalidArgument):
    """Parse or validation failure; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


@dataclass
class DriftSpec:
    A: Optional[list] = None
    c: Optional[list] = None
    name: Optional[str] = None
    params: dict = field(default_factory=dict)
    grid: Optional[list] = None
    values: Optional[list] = None


@dataclass
class KillingSpec:
    type: str = "zero"
    omega: float = 0.0
    axis: int = 0
    generator: Optional[list] = None


@dataclass
class ExperimentConfig:
    kind: str
    space: str = "euclidean"
    drift: DriftSpec = field(default_factory=DriftSpec)
    killing: KillingSpec = field(default_factory=KillingSpec)
    coupling: str = "reflection"
    x0: Optional[list] = None
    y0: Optional[list] = None
    dt: float = 1e-3
    horizon: Optional[float] = None
    n_paths: int = 100_000
    times: list = field(default_factory=lambda: list(DEFAULT_TIMES))
    seed: int = 42
    bridge: bool = True
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    grid: dict = field(default_factory=lambda: {"half_width": 5.0, "n": 201})
    hyperbolic_kernel: str = "table"
    kernel_paths: int = 1_000_000
    kernel_dt: float = 5e-3

    @property
    def dim(self):
        return len(self.x0)

    def to_dict(self):
        return asdict(self)


_TOP_KEYS = {f for f in ExperimentConfig.__dataclass_fields__}


def _parse_error(exc):
    mark = getattr(exc, "problem_mark", None)
    if mark is not None:
        where = f"line {mark.line + 1}, column {mark.column + 1}"
        return ConfigError(f"parse error at {where}: {getattr(exc, 'problem', exc)}")
    return ConfigError(f"parse error: {exc}")


def parse_config(text, kind=None):
    """Parse YAML text into a validated config; ``kind`` overrides the file."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise _parse_error(exc) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    if kind is not None:
        raw["kind"] = kind
    return build_config(raw)


def load_config(path, kind=None):
    with open(path) as fh:
        return parse_config(fh.read(), kind=kind)


def _floats(value, name, ndim=1):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be numeric", name) from exc
    if ndim == 1:
        arr = np.atleast_1d(arr)
    if arr.ndim != ndim:
        raise ConfigError(f"{name} must be a {'vector' if ndim == 1 else 'matrix'}", name)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite", name)
    return arr


def _positive(value, name, integer=False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a number", name) from exc
    if integer and v != float(value):
        raise ConfigError(f"{name} must be an integer", name)
    if not v > 0:
        raise ConfigError(f"{name} must be positive", name)
    return v


def _drift(raw, dim):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("drift must be a mapping", "drift")
    unknown = set(raw) - {"A", "c", "name", "params", "grid", "values"}
    if unknown:
        raise ConfigError(f"unknown drift keys: {sorted(unknown)}", "drift")
    spec = DriftSpec(**raw)
    if spec.name is not None:
        if spec.name not in NAMED_DRIFTS:
            raise ConfigError(f"drift.name must be one of {NAMED_DRIFTS}", "drift.name")
        if spec.A is not None:
            raise ConfigError("give either drift.name or drift.A, not both", "drift")
        if dim != 1:
            raise ConfigError("named drifts are one-dimensional", "drift.name")
        if spec.name == "custom-grid":
            if spec.grid is None or spec.values is None:
                raise ConfigError("custom-grid drift needs grid and values", "drift.grid")
            g = _floats(spec.grid, "drift.grid")
            v = _floats(spec.values, "drift.values")
            if g.size != v.size or g.size < 2 or np.any(np.diff(g) <= 0):
                raise ConfigError("drift.grid must increase and match drift.values", "drift.grid")
        return spec
    A = np.zeros((dim, dim)) if spec.A is None else _floats(spec.A, "A", ndim=2)
    if A.shape[0] != A.shape[1]:
        raise ConfigError(f"A must be square, got shape {A.shape}", "A")
    if A.shape[0] != dim:
        raise ConfigError(f"A has dimension {A.shape[0]} but x0 has length {dim}", "A")
    c = np.zeros(dim) if spec.c is None else _floats(spec.c, "c")
    if c.size != dim:
        raise ConfigError(f"c has length {c.size} but x0 has length {dim}", "c")
    spec.A = A.tolist()
    spec.c = c.tolist()
    return spec


def _killing(raw):
    if raw is None:
        return KillingSpec()
    if not isinstance(raw, dict):
        raise ConfigError("killing must be a mapping", "killing")
    unknown = set(raw) - {"type", "omega", "axis", "generator"}
    if unknown:
        raise ConfigError(f"unknown killing keys: {sorted(unknown)}", "killing")
    spec = KillingSpec(**raw)
    if spec.type not in ("zero", "rotation", "boost", "matrix"):
        raise ConfigError("killing.type must be zero, rotation, boost or matrix", "killing.type")
    if spec.type == "matrix":
        g = _floats(spec.generator, "killing.generator", ndim=2)
        if g.shape != (3, 3):
            raise ConfigError("killing.generator must be 3x3", "killing.generator")
    spec.omega = float(spec.omega)
    return spec


def build_config(raw):
    """Validate a plain mapping and fill defaults."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}", sorted(unknown)[0])
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}", "kind")
    space = raw.get("space", "euclidean")
    if space not in SPACES:
        raise ConfigError(f"space must be one of {SPACES}", "space")
    if raw.get("x0") is None or raw.get("y0") is None:
        raise ConfigError("x0 and y0 are required", "x0")
    x0 = _floats(raw["x0"], "x0")
    y0 = _floats(raw["y0"], "y0")
    if x0.shape != y0.shape:
        raise ConfigError("x0 and y0 must have the same length", "y0")
    if np.array_equal(x0, y0):
        raise ConfigError("x0 and y0 must differ", "y0")
    if space != "euclidean" and x0.size != 3:
        raise ConfigError("points on sphere/hyperboloid are ambient 3-vectors", "x0")

    dt = _positive(raw.get("dt", 1e-3), "dt")
    n_paths = _positive(raw.get("n_paths", 100_000), "n_paths", integer=True)
    times = sorted(float(t) for t in _floats(raw.get("times", DEFAULT_TIMES), "times"))
    if any(t < 0 for t in times):
        raise ConfigError("times must be non-negative", "times")
    horizon = raw.get("horizon")
    horizon = _positive(horizon if horizon is not None else max(max(times), dt), "horizon")
    if times and max(times) > horizon + 1e-12:
        raise ConfigError("times extend beyond the horizon", "times")
    coupling = raw.get("coupling", "reflection")
    if coupling not in COUPLINGS:
        raise ConfigError(f"coupling must be one of {COUPLINGS}", "coupling")
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(raw.get("tolerances") or {})
    for key, v in tolerances.items():
        _positive(v, f"tolerances.{key}")
    grid = {"half_width": 5.0, "n": 201}
    grid.update(raw.get("grid") or {})
    _positive(grid["half_width"], "grid.half_width")
    _positive(grid["n"], "grid.n", integer=True)
    hk = raw.get("hyperbolic_kernel", "table")
    if hk not in ("table", "mckean"):
        raise ConfigError("hyperbolic_kernel must be 'table' or 'mckean'", "hyperbolic_kernel")
    seed = raw.get("seed", 42)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", "seed")

    return ExperimentConfig(
        kind=kind,
        space=space,
        drift=_drift(raw.get("drift"), x0.size) if space == "euclidean" else DriftSpec(),
        killing=_killing(raw.get("killing")),
        coupling=coupling,
        x0=x0.tolist(),
        y0=y0.tolist(),
        dt=dt,
        horizon=horizon,
        n_paths=n_paths,
        times=times,
        seed=seed,
        bridge=bool(raw.get("bridge", True)),
        tolerances=tolerances,
        grid=grid,
        hyperbolic_kernel=hk,
        kernel_paths=_positive(raw.get("kernel_paths", 1_000_000), "kernel_paths", integer=True),
        kernel_dt=_positive(raw.get("kernel_dt", 5e-3), "kernel_dt"),
    )
