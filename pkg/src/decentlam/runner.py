"""Experiment execution, parameter sweeps and CSV output."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import (
    DIVERGENCE_CAP,
    BiasEstimate,
    Trajectory,
    estimate_limiting_bias,
    metrics_snapshot,
)
from .config import ExperimentConfig, SweepSpec, serialize_config, sweep_cells, validate_config
from .errors import DecentLaMError, DivergenceError
from .optimizers import STEPPERS, GradientSpec, ScheduleKind, init_state, make_schedule
from .problems import Problem, generate_regression
from .topology import weight_provider

__all__ = [
    "ExperimentResult",
    "build_problem",
    "build_weights",
    "run_algorithm",
    "run_experiment",
    "run_sweep",
    "emit_csv",
    "TRAJECTORY_COLUMNS",
    "BIAS_COLUMNS",
    "SWEEP_COLUMNS",
]

TRAJECTORY_COLUMNS = ("algo", "iter", "relative_error", "consensus_error", "loss", "grad_norm_sq")
BIAS_COLUMNS = ("algo", "gamma", "beta", "rho", "b_sq", "limiting_bias", "residual", "converged")
SWEEP_COLUMNS = ("cell", "assignment", "algo", "gamma", "beta", "rho", "b_sq", "limiting_bias",
                 "residual", "converged", "final_relative_error", "final_consensus_error", "error")


@dataclass
class ExperimentResult:
    trajectories: list[Trajectory] = field(default_factory=list)
    bias: list[BiasEstimate] = field(default_factory=list)


def build_problem(cfg: ExperimentConfig) -> Problem:
    p = cfg.problem
    return generate_regression(p.n, p.d, p.m, p.hetero, p.noise_mag, p.seed, p.sigma_sq)


def build_weights(cfg: ExperimentConfig):
    return weight_provider(cfg.topology.kind, cfg.problem.n, cfg.topology.seed)


def run_algorithm(cfg: ExperimentConfig, index: int, problem: Problem | None = None, w=None) -> Trajectory:
    """Run the ``index``-th algorithm of ``cfg`` for ``run.max_iters`` steps, sampling metrics."""
    algo = cfg.algos[index]
    problem = build_problem(cfg) if problem is None else problem
    w = build_weights(cfg) if w is None else w
    step = STEPPERS[algo.kind]
    schedule = make_schedule(algo.schedule, algo.gamma, algo.k0, algo.factor, algo.period)
    constant = ScheduleKind.parse(algo.schedule) is ScheduleKind.CONSTANT
    spec = GradientSpec(algo.grad_mode, algo.batch_size)
    seed = cfg.problem.seed
    every, last = cfg.run.metric_every, cfg.run.max_iters

    state = init_state(np.zeros((problem.n, problem.d)), schedule(0), algo.beta)
    traj = Trajectory(algo=algo.name, config={"kind": algo.kind, "gamma": algo.gamma, "beta": algo.beta})
    traj.records.append(metrics_snapshot(state.x, problem, 0))
    for k in range(last):
        if not constant:
            state = replace(state, gamma=schedule(k))
        state = step(state, problem, w, spec, seed)
        if state.k % every == 0 or state.k == last:
            rec = metrics_snapshot(state.x, problem, state.k)
            if not math.isfinite(rec.relative_error) or rec.relative_error > DIVERGENCE_CAP:
                raise DivergenceError(f"{algo.name} diverged at iteration {state.k}")
            traj.records.append(rec)
        elif state.k % 256 == 0 and not np.all(np.isfinite(state.x)):
            raise DivergenceError(f"{algo.name} diverged at iteration {state.k}")
    return traj


def _bias_for(cfg: ExperimentConfig, index: int, problem: Problem, w) -> BiasEstimate:
    algo = cfg.algos[index]
    return estimate_limiting_bias(
        algo.kind, problem, w, algo.gamma, algo.beta,
        max_iters=cfg.run.bias_max_iters, tol=cfg.run.bias_tol, residual_tol=cfg.run.residual_tol,
    )


def _algo_cell(cfg: ExperimentConfig, index: int):
    problem = build_problem(cfg)
    w = build_weights(cfg)
    traj = run_algorithm(cfg, index, problem, w)
    bias = _bias_for(cfg, index, problem, w) if cfg.run.bias_mode else None
    return traj, bias


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """One trajectory per configured algorithm, plus limiting-bias estimates in bias mode.

    ``workers > 1`` runs algorithms in separate processes; outputs do not
    depend on the worker count.
    """
    validate_config(cfg)
    indices = range(len(cfg.algos))
    if workers > 1 and len(cfg.algos) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cfg.algos))) as pool:
            cells = list(pool.map(_algo_cell, [cfg] * len(cfg.algos), indices))
    else:
        problem = build_problem(cfg)
        w = build_weights(cfg)
        cells = []
        for i in indices:
            traj = run_algorithm(cfg, i, problem, w)
            cells.append((traj, _bias_for(cfg, i, problem, w) if cfg.run.bias_mode else None))
    result = ExperimentResult()
    for algo, (traj, bias) in zip(cfg.algos, cells):
        result.trajectories.append(traj)
        if bias is not None:
            result.bias.append(replace(bias, algo=algo.name))
    return result


def _sweep_cell(cfg: ExperimentConfig) -> list[dict]:
    try:
        result = run_experiment(cfg)
    except DecentLaMError as exc:
        return [{"algo": "", "error": f"{type(exc).__name__}: {exc}".replace("\n", " ")}]
    rows = []
    bias = {b.algo: b for b in result.bias}
    for traj in result.trajectories:
        algo = next(a for a in cfg.algos if a.name == traj.algo)
        row = {"algo": traj.algo, "gamma": algo.gamma, "beta": algo.beta,
               "final_relative_error": traj.final.relative_error,
               "final_consensus_error": traj.final.consensus_error, "error": ""}
        est = bias.get(traj.algo)
        if est is not None:
            row.update(rho=est.rho, b_sq=est.b_sq, limiting_bias=est.limiting_bias,
                       residual=est.fixed_point_residual, converged=est.converged)
        rows.append(row)
    return rows


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[dict]:
    """Run every grid cell; rows come back in grid order whatever the worker count.

    A failing cell yields a row carrying the error message instead of aborting
    the sweep.
    """
    cells = sweep_cells(spec)
    configs = [cfg for _, cfg in cells]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(configs))) as pool:
            outputs = list(pool.map(_sweep_cell, configs))
    else:
        outputs = [_sweep_cell(cfg) for cfg in configs]
    table = []
    for index, ((assignment, _), rows) in enumerate(zip(cells, outputs)):
        label = ";".join(f"{k}={v}" for k, v in assignment.items())
        for row in rows:
            table.append({"cell": index, "assignment": label, **row})
    return table


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def emit_csv(results, path, kind: str | None = None) -> None:
    """Write trajectories, bias estimates or sweep rows as CSV.

    ``kind`` ("trajectory", "bias" or "sweep") defaults to the element type of
    ``results``; an empty list writes the header alone.
    """
    results = list(results)
    if kind is None:
        kind = ("bias" if results and isinstance(results[0], BiasEstimate)
                else "sweep" if results and isinstance(results[0], dict) else "trajectory")
    if kind == "bias":
        rows = [(b.algo, b.gamma, b.beta, b.rho, b.b_sq, b.limiting_bias, b.fixed_point_residual, b.converged)
                for b in results]
        _write(path, BIAS_COLUMNS, rows)
    elif kind == "sweep":
        _write(path, SWEEP_COLUMNS, [[r.get(c) for c in SWEEP_COLUMNS] for r in results])
    else:
        rows = [(t.algo, r.k, r.relative_error, r.consensus_error, r.loss, r.grad_norm_sq)
                for t in results for r in t.records]
        _write(path, TRAJECTORY_COLUMNS, rows)


def write_config_snapshot(cfg: ExperimentConfig, path) -> None:
    Path(path).write_bytes(serialize_config(cfg).encode("utf-8"))
