"""Self-check suite behind ``decentlam verify``.

Each check returns a :class:`Check`; the CLI prints one PASS/FAIL line per
check. ``quick`` shortens the long runs without loosening any tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import estimate_limiting_bias, fit_bias_scaling
from .optimizers import (
    GradientSpec,
    init_sdomain_state,
    init_state,
    step_decentlam,
    step_decentlam_reformulated,
    step_decentlam_sdomain,
    step_dmsgd,
    step_dmsgd_reformulated,
    step_dsgd,
    step_psgd_momentum,
    STEPPERS,
)
from .problems import generate_regression
from .topology import TopologyKind, WeightMatrix, build_topology, metropolis_weights, validate_weight_matrix

# gamma * L ~ 3e-3 on the reference instance: deep in the small-step regime
ASYMPTOTIC_GAMMA = 2e-5
BETA_GRID = (0.0, 0.5, 0.8, 0.9)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def reference_instance(hetero: float = 0.01, seed: int = 42, sigma_sq: float = 0.0):
    """Mesh of 8 nodes with Metropolis weights and 50x30 Gaussian regression data per node."""
    p = generate_regression(8, 30, 50, hetero=hetero, noise_mag=0.01, seed=seed, sigma_sq=sigma_sq)
    w = metropolis_weights(build_topology("mesh", 8))
    return p, w


def _trajectory(step, state, p, w, iters, spec=GradientSpec(), seed=0, view=lambda s: s.x):
    out = [view(state)]
    for _ in range(iters):
        state = step(state, p, w, spec, seed)
        out.append(view(state))
    return np.array(out)


def _max_rel_gap(a, b):
    scale = np.maximum(1.0, np.linalg.norm(b, axis=(1, 2)))
    return float(np.max(np.linalg.norm(a - b, axis=(1, 2)) / scale))


def check_weight_matrices(quick=False) -> Check:
    worst = 0.0
    failures = []
    for kind in TopologyKind:
        for n in (2, 3, 4, 5, 8, 9, 16, 17, 32):
            try:
                g = build_topology(kind, n, seed=3, iteration=5)
            except ValueError:
                continue
            report = validate_weight_matrix(metropolis_weights(g), tol=1e-12)
            worst = max([worst] + [v for _, v in report.checks.values()])
            if not report.passed:
                failures.append(f"{kind.value}/{n}")
    full_rho = [metropolis_weights(build_topology("full", n)).rho for n in (2, 3, 4, 5, 8, 16)]
    ring8 = metropolis_weights(build_topology("ring", 8)).rho
    ring8_exact = 1 / 3 + 2 / 3 * math.cos(2 * math.pi / 8)
    ok = not failures and all(r == 0.0 for r in full_rho) and abs(ring8 - ring8_exact) <= 1e-10
    return Check("weight matrices", ok,
                 f"worst violation {worst:.1e}; full rho {max(full_rho)}; ring8 rho {ring8:.15f}"
                 + (f"; failing {failures}" if failures else ""))


def check_reformulations(quick=False) -> Check:
    p, w = reference_instance(sigma_sq=1.0)
    iters = 200 if quick else 1000
    worst = 0.0
    for beta in (0.0, 0.5, 0.9):
        for spec in (GradientSpec("full"), GradientSpec("additive", 4)):
            x0 = np.zeros((p.n, p.d))
            for alg, ref in ((step_dmsgd, step_dmsgd_reformulated), (step_decentlam, step_decentlam_reformulated)):
                a = _trajectory(alg, init_state(x0, 1e-3, beta), p, w, iters, spec, seed=11)
                b = _trajectory(ref, init_state(x0, 1e-3, beta), p, w, iters, spec, seed=11)
                worst = max(worst, _max_rel_gap(b, a))
    return Check("reformulation equivalence", worst <= 1e-10, f"max relative gap {worst:.2e} (tol 1e-10)")


def check_sdomain(quick=False) -> Check:
    p, w = reference_instance(sigma_sq=1.0)
    w_pd = WeightMatrix(0.5 * (np.eye(p.n) + w.w))
    iters = 200 if quick else 1000
    worst = 0.0
    for spec in (GradientSpec("full"), GradientSpec("additive", 4)):
        x0 = np.zeros((p.n, p.d))
        a = _trajectory(step_decentlam, init_state(x0, 1e-3, 0.8), p, w_pd, iters, spec, seed=5)
        b = _trajectory(step_decentlam_sdomain, init_sdomain_state(x0, w_pd, 1e-3, 0.8), p, w_pd, iters, spec,
                        seed=5)
        worst = max(worst, _max_rel_gap(b, a))
    return Check("s-domain equivalence", worst <= 1e-8, f"max relative gap {worst:.2e} (tol 1e-8)")


def check_degeneracies(quick=False) -> Check:
    p, _ = reference_instance()
    avg = WeightMatrix(np.full((p.n, p.n), 1.0 / p.n))
    x0 = np.zeros((p.n, p.d))
    gap_full = _max_rel_gap(
        _trajectory(step_dsgd, init_state(x0, 1e-3), p, avg, 100),
        _trajectory(step_psgd_momentum, init_state(x0, 1e-3), p, avg, 100),
    )
    single = generate_regression(1, 30, 50, hetero=0.0, noise_mag=0.01, seed=42)
    one = WeightMatrix(np.ones((1, 1)))
    x1 = np.zeros((1, 30))
    gap_single = 0.0
    for name, step in STEPPERS.items():
        # DSGD variants carry no momentum buffer, so their reference is plain SGD
        beta = 0.0 if name in ("dsgd", "awc_dsgd") else 0.8
        ref = _trajectory(step_psgd_momentum, init_state(x1, 1e-3, beta), single, one, 100)
        traj = _trajectory(step, init_state(x1, 1e-3, beta), single, one, 100)
        gap_single = max(gap_single, _max_rel_gap(traj, ref))
    ok = gap_full <= 1e-12 and gap_single <= 1e-12
    return Check("degeneracies", ok, f"full-averaging gap {gap_full:.1e}; single-node gap {gap_single:.1e}")


def check_fixed_points(quick=False) -> Check:
    p, w = reference_instance()
    worst = 0.0
    limits = {}
    for beta in (0.5, 0.8, 0.9):
        for algo in ("dsgd", "dmsgd", "decentlam"):
            est = estimate_limiting_bias(algo, p, w, 1e-3, beta)
            worst = max(worst, est.fixed_point_residual)
            limits[algo, beta] = est.limiting_bias
    same = max(abs(limits["decentlam", b] / limits["dsgd", b] - 1) for b in (0.5, 0.8, 0.9))
    return Check("fixed-point residuals", worst < 1e-8 and same <= 1e-6,
                 f"max residual {worst:.1e}; DecentLaM vs DSGD limit gap {same:.1e}")


def _beta_sweep(algo):
    p, w = reference_instance()
    return [estimate_limiting_bias(algo, p, w, ASYMPTOTIC_GAMMA, b) for b in BETA_GRID]


def check_momentum_amplification(quick=False) -> Check:
    fit = fit_bias_scaling(_beta_sweep("dmsgd"), "one_over_one_minus_beta")
    ok = 1.8 <= fit.slope <= 2.2 and fit.r_sq >= 0.99
    return Check("DmSGD bias ~ 1/(1-beta)^2", ok, f"slope {fit.slope:.3f}, r^2 {fit.r_sq:.4f}")


def check_momentum_independence(quick=False) -> Check:
    fit = fit_bias_scaling(_beta_sweep("decentlam"), "one_over_one_minus_beta")
    return Check("DecentLaM bias independent of beta", -0.1 <= fit.slope <= 0.1, f"slope {fit.slope:.2e}")


def check_gamma_squared(quick=False) -> Check:
    p, w = reference_instance()
    ratios = {}
    for algo, beta in (("dsgd", 0.0), ("dmsgd", 0.8), ("decentlam", 0.8)):
        hi = estimate_limiting_bias(algo, p, w, ASYMPTOTIC_GAMMA, beta)
        lo = estimate_limiting_bias(algo, p, w, ASYMPTOTIC_GAMMA / 2, beta)
        ratios[algo] = hi.limiting_bias / lo.limiting_bias
    ok = all(3.6 <= r <= 4.4 for r in ratios.values())
    return Check("bias ~ gamma^2", ok, ", ".join(f"{a} {r:.3f}" for a, r in ratios.items()))


CHECKS: list[Callable[[bool], Check]] = [
    check_weight_matrices,
    check_reformulations,
    check_sdomain,
    check_degeneracies,
    check_fixed_points,
    check_momentum_amplification,
    check_momentum_independence,
    check_gamma_squared,
]


def run_checks(quick: bool = False) -> list[Check]:
    results = []
    for fn in CHECKS:
        start = time.perf_counter()
        try:
            check = fn(quick)
        except Exception as exc:  # a crashing check is a failing check
            check = Check(fn.__name__.removeprefix("check_").replace("_", " "), False, f"error: {exc!r}")
        check.seconds = time.perf_counter() - start
        results.append(check)
    return results
