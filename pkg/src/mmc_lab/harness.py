"""Experiment orchestration: config -> pipeline -> CSV curves + JSON verdict."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import classification as cls
from . import gaussian_tv as gtv
from . import model_spaces as ms
from .config import ExperimentConfig
from .errors import InvalidArgument, NotAdmissible, NumericalFailure
from .euclidean import (
    AffineDrift,
    GeneralDrift,
    affine_mirror_fn,
    drift_constraint_residual,
    fmt,
    make_mirror,
    simulate_coupling,
    simulate_coupling_batch,
    simulate_independent_coupling_batch,
    static_mirror_fn,
)
from .numerics import RngStream

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ALDOUS_VIOLATION = 2
EXIT_NUMERICAL = 3

# stream id reserved for the single recorded example path
PATH_STREAM = 1 << 62


@dataclass
class ResultRecord:
    config: dict
    verdict: dict
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    wall_clock: float = 0.0
    seed: int = 0
    exit_code: int = EXIT_OK


def build_drift(cfg):
    """Drift object for a Euclidean config: AffineDrift when possible."""
    spec = cfg.drift
    if spec.name is None:
        return AffineDrift(np.array(spec.A), np.array(spec.c))
    p = spec.params or {}
    if spec.name == "ou":
        kappa = float(p.get("kappa", 1.0))
        mu = float(p.get("mu", 0.0))
        return AffineDrift(np.array([[-kappa]]), np.array([kappa * mu]))
    if spec.name == "sin":
        return GeneralDrift(lambda t, x: np.sin(x), vectorized=True)
    if spec.name == "quadratic":
        return GeneralDrift(lambda t, x: np.asarray(x) ** 2, vectorized=True)
    g = np.array(spec.grid, dtype=float)
    v = np.array(spec.values, dtype=float)
    return GeneralDrift(lambda t, x: np.interp(x, g, v), vectorized=True)


def build_killing(cfg):
    spec = cfg.killing
    if spec.type == "zero" or (spec.type != "matrix" and spec.omega == 0.0):
        return ms.KillingField.zero(cfg.space)
    if spec.type == "rotation":
        return ms.KillingField.rotation(cfg.space, spec.omega)
    if spec.type == "boost":
        if cfg.space != ms.HYPERBOLOID:
            raise InvalidArgument("boosts are isometries of the hyperboloid only")
        return ms.KillingField.boost(spec.omega, spec.axis)
    return ms.KillingField(cfg.space, np.array(spec.generator, dtype=float))


def _scalar(b):
    return lambda x: float(b.evaluate(0.0, np.array([x]))[0])


def _mirror_fn(cfg, b, x0, y0):
    if isinstance(b, AffineDrift):
        return affine_mirror_fn(b, x0, y0, tol=cfg.tolerances["linalg"])
    verdict = cls.classify_1d(_scalar(b), x0[0], y0[0], _grid_1d(cfg), tol=cfg.tolerances["sampled"])
    if verdict != cls.Verdict1D.ODD_SYMMETRIC:
        raise NotAdmissible(f"drift {cfg.drift.name!r} admits no maximal coupling from this pair")
    return static_mirror_fn(make_mirror(x0, y0))


def _grid_1d(cfg):
    mid = 0.5 * (cfg.x0[0] + cfg.y0[0])
    w = float(cfg.grid["half_width"])
    return np.linspace(mid - w, mid + w, int(cfg.grid["n"]))


def _write_csv(path, header, rows):
    rows = [list(r) for r in rows]
    for r in rows:
        for name, v in zip(header, r):
            if isinstance(v, float) and not np.isfinite(v):
                raise NumericalFailure(f"non-finite value in column {name!r}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[fmt(v) if isinstance(v, float) else v for v in r] for r in rows])
    return path


def _taus(cfg, threads):
    x0 = np.array(cfg.x0)
    y0 = np.array(cfg.y0)
    if cfg.space != "euclidean":
        if cfg.coupling != "reflection":
            raise InvalidArgument("only reflection coupling is available on model spaces")
        return ms.simulate_manifold_coupling_batch(
            cfg.space, x0, y0, cfg.dt, cfg.horizon, cfg.n_paths, cfg.seed, cfg.bridge, threads
        )
    b = build_drift(cfg)
    if cfg.coupling == "independent":
        return simulate_independent_coupling_batch(
            b, x0, y0, cfg.dt, cfg.horizon, cfg.n_paths, cfg.seed, cfg.bridge, threads
        )
    mirror = _mirror_fn(cfg, b, x0, y0)
    return simulate_coupling_batch(
        b, mirror, x0, y0, cfg.dt, cfg.horizon, cfg.n_paths, cfg.seed, bridge=cfg.bridge, threads=threads
    ).taus


def exact_tv_curve(cfg):
    x0 = np.array(cfg.x0)
    y0 = np.array(cfg.y0)
    if cfg.space == "euclidean":
        b = build_drift(cfg)
        if not isinstance(b, AffineDrift):
            raise InvalidArgument("exact TV curves are available for affine drifts only")
        return gtv.aldous_curve(b, x0, y0, cfg.times)
    opts = {"n_paths": cfg.kernel_paths, "dt": cfg.kernel_dt, "seed": cfg.seed}
    vals = [
        ms.tv_model_space(cfg.space, x0, y0, t, hyperbolic_kernel=cfg.hyperbolic_kernel, table_options=opts)
        for t in cfg.times
    ]
    return gtv.TailCurve(np.array(cfg.times), np.array(vals))


def _gap_verdict(cfg, report, criterion="aldous-equality"):
    return {
        "criterion": criterion,
        "verdict": report.verdict,
        "gaps": [{"t": float(t), "gap": float(g), "z": _json_num(z)} for t, g, z in zip(report.times, report.gaps, report.z)],
        "maximal": report.maximal,
    }


def _json_num(z):
    z = float(z)
    return z if np.isfinite(z) else ("inf" if z > 0 else "-inf")


def _verify(cfg, out, threads):
    exact = exact_tv_curve(cfg)
    emp = gtv.empirical_tail(_taus(cfg, threads), cfg.times)
    report = gtv.aldous_gap_report(emp, exact, z_limit=cfg.tolerances["z"])
    rows = zip(report.times, report.exact, report.empirical, report.stderr, report.gaps, report.z)
    path = _write_csv(
        os.path.join(out, "verify.csv"),
        ["t", "tv_exact", "p_emp", "stderr", "gap", "z"],
        [[float(v) for v in r] for r in rows],
    )
    return _gap_verdict(cfg, report), [path]


def _simulate(cfg, out, threads):
    x0 = np.array(cfg.x0)
    y0 = np.array(cfg.y0)
    rng = RngStream(cfg.seed, PATH_STREAM)
    files = []
    if cfg.space == "euclidean":
        b = build_drift(cfg)
        if cfg.coupling == "reflection":
            path = simulate_coupling(b, _mirror_fn(cfg, b, x0, y0), x0, y0, cfg.dt, cfg.horizon, rng, cfg.bridge)
            files.append(os.path.join(out, "path.csv"))
            path.to_csv(files[-1])
    else:
        path = ms.simulate_manifold_coupling(build_killing(cfg), x0, y0, cfg.dt, cfg.horizon, rng, cfg.bridge)
        files.append(os.path.join(out, "path.csv"))
        path.to_csv(files[-1])
    emp = gtv.empirical_tail(_taus(cfg, threads), cfg.times)
    files.append(
        _write_csv(
            os.path.join(out, "simulate.csv"),
            ["t", "p_emp", "stderr"],
            [[float(t), float(p), float(s)] for t, p, s in zip(emp.times, emp.values, emp.stderr)],
        )
    )
    try:
        exact = exact_tv_curve(cfg)
    except InvalidArgument:
        return {"criterion": "simulation", "verdict": "completed", "gaps": [], "maximal": False}, files
    report = gtv.aldous_gap_report(emp, exact, z_limit=cfg.tolerances["z"])
    return _gap_verdict(cfg, report), files


def _classify(cfg, out, threads):
    if cfg.space != "euclidean":
        verdict = {
            "criterion": "model-space",
            "verdict": "MMC",
            "details": "Brownian motion with Killing drift on a model space admits an MMC from every pair",
            "gaps": [],
            "maximal": False,
        }
        return verdict, []
    b = build_drift(cfg)
    x0 = np.array(cfg.x0)
    y0 = np.array(cfg.y0)
    tol = cfg.tolerances["linalg"]
    if isinstance(b, AffineDrift):
        lam = cls.affine_mmc_exists(b, x0, y0, tol=tol)
        lpc = cls.lpc_form_check(b, tol=tol)
        details = {"lpc_form": lpc is not None}
        if lpc is not None:
            details["static_mirror"] = cls.mirror_static(lpc.lambda0, lpc.T, lpc.c, x0, y0, tol=tol)
        if b.dim == 1:
            details["classify_1d"] = cls.classify_1d(
                _scalar(b), x0[0], y0[0], _grid_1d(cfg), tol=cfg.tolerances["sampled"]
            ).value
        verdict = {"criterion": "eigenspace", "verdict": "MMC" if lam is not None else "no-MMC"}
        if lam is not None:
            verdict["lambda0"] = lam
    else:
        v1 = cls.classify_1d(_scalar(b), x0[0], y0[0], _grid_1d(cfg), tol=cfg.tolerances["sampled"])
        details = {"classify_1d": v1.value}
        verdict = {"criterion": "1d-classification", "verdict": "MMC" if v1 != cls.Verdict1D.NONE else "no-MMC"}
    verdict.update({"details": details, "gaps": [], "maximal": False})
    path = _write_csv(
        os.path.join(out, "classify.csv"),
        ["criterion", "verdict", "lambda0"],
        [[verdict["criterion"], verdict["verdict"], float(verdict.get("lambda0", 0.0))]],
    )
    return verdict, [path]


def _mirror(cfg, out, threads):
    x0 = np.array(cfg.x0)
    y0 = np.array(cfg.y0)
    times = cfg.times
    if cfg.space != "euclidean":
        k = build_killing(cfg)
        refl = ms.make_reflection(cfg.space, x0, y0)
        n0 = refl.n
        rows = [[float(t)] + [float(v) for v in ms.killing_flow(k, t) @ n0] for t in times]
        moved = max(np.linalg.norm(np.array(r[1:]) - n0) for r in rows)
        path = _write_csv(os.path.join(out, "mirror.csv"), ["t", "n_1", "n_2", "n_3"], rows)
        verdict = {
            "criterion": "orbit",
            "verdict": "static" if moved <= cfg.tolerances["linalg"] else "moving",
            "gaps": [],
            "maximal": False,
        }
        return verdict, [path]
    b = build_drift(cfg)
    if not isinstance(b, AffineDrift):
        raise InvalidArgument("mirror dynamics are available for affine drifts only")
    mirror = affine_mirror_fn(b, x0, y0, tol=cfg.tolerances["linalg"])
    rng = RngStream(cfg.seed, PATH_STREAM).generator
    d = b.dim
    rows = []
    worst = 0.0
    scale = 1.0 + float(np.linalg.norm(x0)) + float(np.linalg.norm(y0))
    for t in times:
        m = mirror(t)
        probes = rng.uniform(-scale, scale, size=(32, d))
        res = max(float(np.max(np.abs(drift_constraint_residual(b, m, t, p)))) for p in probes)
        worst = max(worst, res)
        rows.append([float(t)] + [float(v) for v in m.n] + [m.l] + [float(v) for v in m.n_dot] + [m.l_dot, res])
    header = (
        ["t"] + [f"n_{i + 1}" for i in range(d)] + ["l"] + [f"n_dot_{i + 1}" for i in range(d)] + ["l_dot", "residual"]
    )
    path = _write_csv(os.path.join(out, "mirror.csv"), header, rows)
    lpc = cls.lpc_form_check(b, tol=cfg.tolerances["linalg"])
    static = lpc is not None and cls.mirror_static(lpc.lambda0, lpc.T, lpc.c, x0, y0, tol=cfg.tolerances["linalg"])
    verdict = {
        "criterion": "mirror-static",
        "verdict": "static" if static else "moving",
        "lambda0": mirror.lambda0,
        "details": {"max_residual": worst},
        "gaps": [],
        "maximal": False,
    }
    return verdict, [path]


def _tv(cfg, out, threads):
    curve = exact_tv_curve(cfg)
    path = _write_csv(os.path.join(out, "tv.csv"), ["t", "tv"], [[float(t), float(v)] for t, v in zip(curve.times, curve.values)])
    return {"criterion": "total-variation", "verdict": "computed", "gaps": [], "maximal": False}, [path]


PIPELINES = {"simulate": _simulate, "verify": _verify, "classify": _classify, "mirror": _mirror, "tv": _tv}


def run_experiment(cfg: ExperimentConfig, out_dir=".", threads=None) -> ResultRecord:
    """Run the pipeline for ``cfg.kind``; writes CSVs and ``verdict.json``.

    Numerical failures are caught and turned into an error verdict with exit
    code 3; an Aldous violation yields exit code 2.
    """
    os.makedirs(out_dir, exist_ok=True)
    start = time.perf_counter()
    exit_code = EXIT_OK
    files = []
    try:
        verdict, files = PIPELINES[cfg.kind](cfg, out_dir, threads)
        if verdict.get("verdict") == "aldous-violation":
            exit_code = EXIT_ALDOUS_VIOLATION
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        verdict = {"criterion": cfg.kind, "verdict": "numerical-failure", "error": str(exc), "gaps": [], "maximal": False}
        exit_code = EXIT_NUMERICAL
    wall = time.perf_counter() - start
    record = ResultRecord(
        config=cfg.to_dict(), verdict=verdict, files=files, wall_clock=wall, seed=cfg.seed, exit_code=exit_code
    )
    payload = dict(verdict)
    payload.update({"seed": cfg.seed, "wall_clock": wall, "config": record.config, "exit_code": exit_code})
    vpath = os.path.join(out_dir, "verdict.json")
    with open(vpath, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
    record.files.append(vpath)
    return record
