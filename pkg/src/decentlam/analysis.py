"""Convergence metrics, limiting-bias estimation and scaling-law fits."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InsufficientPoints, NonconvergedInput
from .optimizers import STEPPERS, init_state
from .problems import Problem, stacked_full_gradient
from .topology import WeightMatrix, spectral_rho

__all__ = [
    "MetricRecord",
    "Trajectory",
    "BiasEstimate",
    "ScalingAxis",
    "ScalingFit",
    "metrics_snapshot",
    "fixed_point_residual",
    "estimate_limiting_bias",
    "fit_bias_scaling",
    "theorem_constant_check",
    "DIVERGENCE_CAP",
]

DIVERGENCE_CAP = 1e12


@dataclass(frozen=True)
class MetricRecord:
    k: int
    relative_error: float
    consensus_error: float
    loss: float
    grad_norm_sq: float


@dataclass
class Trajectory:
    algo: str
    records: list[MetricRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> MetricRecord:
        return self.records[-1]

    def first_below(self, threshold: float) -> int | None:
        """Iteration of the first record with relative error below ``threshold``."""
        for rec in self.records:
            if rec.relative_error < threshold:
                return rec.k
        return None


def metrics_snapshot(x: np.ndarray, p: Problem, k: int = 0) -> MetricRecord:
    """Relative error to ``x_star``, consensus error, and loss / squared gradient norm at the node average."""
    x = np.asarray(x, dtype=np.float64)
    diff = x - p.x_star
    rel = float(np.mean(np.sum(diff**2, axis=1)) / np.dot(p.x_star, p.x_star))
    x_bar = x.mean(axis=0)
    cons = float(np.mean(np.sum((x - x_bar) ** 2, axis=1)))
    grad = p.global_gradient(x_bar)
    return MetricRecord(k, rel, cons, p.loss(x_bar), float(np.dot(grad, grad)))


def fixed_point_residual(algo: str, x: np.ndarray, p: Problem, W: np.ndarray, gamma: float, beta: float) -> float:
    """Norm of the full-batch fixed-point equation of ``algo`` at ``x``, divided by ``1 + ||x||``.

    dsgd / decentlam:  (I - W) x + gamma W grad
    dmsgd:             (1 - beta)(I - W) x + gamma W grad
    awc_dmsgd:         (I - W) x + gamma grad / (1 - beta)
    da_dmsgd:          (I - beta W)(I - W) x + gamma W^2 grad
    psgd:              consensus gap plus gamma * averaged gradient
    """
    g = stacked_full_gradient(p, x)
    lap = x - W @ x
    base = algo.removesuffix("_reform")
    if base in ("dsgd", "decentlam"):
        r = lap + gamma * (W @ g)
    elif base == "dmsgd":
        r = (1.0 - beta) * lap + gamma * (W @ g)
    elif base == "awc_dmsgd":
        r = lap + gamma * g / (1.0 - beta)
    elif base == "awc_dsgd":
        r = lap + gamma * g
    elif base == "da_dmsgd":
        r = (lap - beta * (W @ lap)) + gamma * (W @ (W @ g))
    elif base == "psgd":
        r = (x - x.mean(axis=0)) + gamma * g.mean(axis=0)
    else:
        raise ValueError(f"no fixed-point equation for algorithm {algo!r}")
    return float(np.linalg.norm(r) / (1.0 + np.linalg.norm(x)))


@dataclass(frozen=True)
class BiasEstimate:
    algo: str
    gamma: float
    beta: float
    rho: float
    b_sq: float
    limiting_bias: float
    fixed_point_residual: float
    converged: bool
    iterations: int = 0


def estimate_limiting_bias(
    algo: str,
    p: Problem,
    w: WeightMatrix,
    gamma: float,
    beta: float = 0.0,
    max_iters: int = 1_000_000,
    tol: float = 1e-13,
    residual_tol: float = 1e-8,
    x0: np.ndarray | None = None,
) -> BiasEstimate:
    """Run ``algo`` with exact gradients until the iterate stops moving.

    Stops once ``||x_{k+1} - x_k|| / max(1, ||x_k||) < tol`` or after
    ``max_iters`` steps. ``converged`` additionally requires the fixed-point
    residual to be below ``residual_tol``.
    """
    if not isinstance(w, WeightMatrix):
        raise TypeError("limiting bias needs a static WeightMatrix")
    step = STEPPERS[algo]
    state = init_state(np.zeros((p.n, p.d)) if x0 is None else x0, gamma, beta)
    star_sq = float(np.dot(p.x_star, p.x_star)) * p.n
    moved = math.inf
    while state.k < max_iters:
        new = step(state, p, w)
        moved = np.linalg.norm(new.x - state.x) / max(1.0, np.linalg.norm(state.x))
        state = new
        if state.k % 64 == 0 or moved < tol:
            err = float(np.sum((state.x - p.x_star) ** 2)) / star_sq
            if not math.isfinite(err) or err > DIVERGENCE_CAP:
                raise DivergenceError(f"{algo} diverged at iteration {state.k} (relative error {err:.3e})")
        if moved < tol:
            break
    rec = metrics_snapshot(state.x, p, state.k)
    residual = fixed_point_residual(algo, state.x, p, w.w, gamma, beta)
    return BiasEstimate(
        algo=algo,
        gamma=gamma,
        beta=beta,
        rho=spectral_rho(w),
        b_sq=p.b_sq,
        limiting_bias=rec.relative_error,
        fixed_point_residual=residual,
        converged=bool(moved < tol and residual < residual_tol),
        iterations=state.k,
    )


class ScalingAxis(str, enum.Enum):
    GAMMA = "gamma"
    ONE_OVER_ONE_MINUS_BETA = "one_over_one_minus_beta"
    ONE_OVER_ONE_MINUS_RHO = "one_over_one_minus_rho"


@dataclass(frozen=True)
class ScalingFit:
    axis: ScalingAxis
    points: list
    slope: float
    r_sq: float


def _abscissa(est: BiasEstimate, axis: ScalingAxis) -> float:
    if axis is ScalingAxis.GAMMA:
        return est.gamma
    if axis is ScalingAxis.ONE_OVER_ONE_MINUS_BETA:
        return 1.0 / (1.0 - est.beta)
    return 1.0 / (1.0 - est.rho)


def fit_bias_scaling(estimates, axis) -> ScalingFit:
    """Least-squares slope of ``log(limiting_bias)`` against ``log(abscissa)``."""
    axis = ScalingAxis(axis)
    if any(not e.converged for e in estimates):
        raise NonconvergedInput("every estimate must have converged before fitting")
    points = sorted((_abscissa(e, axis), e.limiting_bias) for e in estimates)
    if len({a for a, _ in points}) < 3:
        raise InsufficientPoints(f"need at least 3 distinct abscissae, got {len(points)} points")
    lx = np.log([a for a, _ in points])
    ly = np.log([bias for _, bias in points])
    slope, intercept = np.polyfit(lx, ly, 1)
    ss_res = float(np.sum((ly - (slope * lx + intercept)) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r_sq = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return ScalingFit(axis=axis, points=points, slope=float(slope), r_sq=r_sq)


@dataclass(frozen=True)
class Condition:
    name: str
    value: float
    bound: float
    satisfied: bool

    @property
    def margin(self) -> float:
        return self.bound - self.value


def theorem_constant_check(gamma: float, beta: float, rho: float, L: float, mu: float) -> list[Condition]:
    """Evaluate the step-size and momentum restrictions of the DecentLaM convergence theorems.

    Purely advisory: simulations never enforce these.
    """
    momentum = beta + 16 * beta**2 / ((1 - beta) * (1 - rho) ** 2)
    kappa = L / mu
    nonconvex_cap = min(
        (1 - beta) ** 2 / (5 * math.sqrt(beta + beta**2) * L) if beta > 0 else math.inf,
        (1 - beta) ** 2 / ((5 - beta + 2 * beta**2) * L),
        (1 - beta) ** 2 / (12 * L * beta**2) if beta > 0 else math.inf,
        (1 - rho) / (20 * math.sqrt(rho) * L) if rho > 0 else math.inf,
    )
    convex_cap = min(
        (1 - beta) ** 2 / (27 * L),
        (1 - rho) * (1 - beta) * (kappa + 1) / (5 * L),
        (1 - rho) / (math.sqrt(1728 * (kappa + 1)) * L),
    )
    bound = (3 + rho) / 4
    return [
        Condition("momentum", momentum, bound, momentum <= bound),
        Condition("step_size_nonconvex", gamma, nonconvex_cap, gamma <= nonconvex_cap),
        Condition("step_size_strongly_convex", gamma, convex_cap, gamma <= convex_cap),
    ]
