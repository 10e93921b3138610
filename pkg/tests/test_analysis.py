import math

import numpy as np
import pytest

from decentlam.analysis import (
    BiasEstimate,
    estimate_limiting_bias,
    fit_bias_scaling,
    fixed_point_residual,
    metrics_snapshot,
    theorem_constant_check,
)
from decentlam.errors import DivergenceError, InsufficientPoints, NonconvergedInput
from decentlam.optimizers import STEPPERS, init_state, step_dmsgd
from decentlam.problems import generate_regression
from decentlam.topology import build_topology, metropolis_weights


def _metrics_oracle(x, p):
    n = x.shape[0]
    star = sum(v * v for v in p.x_star)
    rel = sum(sum((x[i, j] - p.x_star[j]) ** 2 for j in range(p.d)) for i in range(n)) / n / star
    avg = [sum(x[i, j] for i in range(n)) / n for j in range(p.d)]
    cons = sum(sum((x[i, j] - avg[j]) ** 2 for j in range(p.d)) for i in range(n)) / n
    loss, grad = 0.0, [0.0] * p.d
    for i in range(n):
        for r in range(p.m):
            res = sum(p.A[i, r, j] * avg[j] for j in range(p.d)) - p.b[i, r]
            loss += 0.5 * res * res / n
            for j in range(p.d):
                grad[j] += p.A[i, r, j] * res / n
    return rel, cons, loss, sum(g * g for g in grad)


def test_metrics_at_optimum(tiny):
    x = np.tile(tiny.x_star, (tiny.n, 1))
    rec = metrics_snapshot(x, tiny)
    assert rec.relative_error == 0.0 and rec.consensus_error == 0.0
    assert rec.loss == pytest.approx(tiny.loss(tiny.x_star))
    assert rec.grad_norm_sq < 1e-20


def test_consensus_error_two_nodes():
    p = generate_regression(2, 3, 5, seed=1)
    delta = 0.3
    x = np.stack([p.x_star + delta * np.eye(3)[0], p.x_star - delta * np.eye(3)[0]])
    assert metrics_snapshot(x, p).consensus_error == pytest.approx(delta**2, rel=1e-12)


def test_metrics_match_independent_routine(tiny, rng):
    x = rng.standard_normal((tiny.n, tiny.d))
    rec = metrics_snapshot(x, tiny)
    got = (rec.relative_error, rec.consensus_error, rec.loss, rec.grad_norm_sq)
    np.testing.assert_allclose(got, _metrics_oracle(x, tiny), rtol=1e-12)


def test_homogeneous_dsgd_has_no_bias(mesh8):
    _, w = mesh8
    p = generate_regression(8, 30, 50, hetero=0.0, noise_mag=0.0, seed=42)
    est = estimate_limiting_bias("dsgd", p, w, 1e-3)
    assert est.converged
    assert est.limiting_bias <= 1e-20


def test_decentlam_shares_dsgd_fixed_point(mesh8):
    p, w = mesh8
    x = {}
    for algo, beta in (("dsgd", 0.0), ("decentlam", 0.8)):
        est = estimate_limiting_bias(algo, p, w, 1e-3, beta)
        assert est.converged
        x[algo] = est
    assert abs(x["decentlam"].limiting_bias / x["dsgd"].limiting_bias - 1) <= 1e-6


def test_decentlam_limit_point_equals_dsgd_limit_point(mesh8):
    p, w = mesh8
    limits = {}
    for algo, beta in (("dsgd", 0.0), ("decentlam", 0.9)):
        s = init_state(np.zeros((p.n, p.d)), 1e-3, beta)
        for _ in range(6000):
            s = STEPPERS[algo](s, p, w)
        limits[algo] = s.x
    gap = np.linalg.norm(limits["decentlam"] - limits["dsgd"]) / np.linalg.norm(limits["dsgd"])
    assert gap <= 1e-8


def test_bias_ordering(mesh8):
    p, w = mesh8
    bias = {a: estimate_limiting_bias(a, p, w, 1e-3, 0.8) for a in ("dsgd", "dmsgd", "da_dmsgd", "awc_dmsgd")}
    assert all(b.converged for b in bias.values())
    assert bias["dmsgd"].limiting_bias > bias["dsgd"].limiting_bias
    assert bias["dsgd"].limiting_bias < bias["da_dmsgd"].limiting_bias < bias["dmsgd"].limiting_bias
    assert bias["awc_dmsgd"].fixed_point_residual < 1e-8


def test_residual_is_zero_only_at_the_right_fixed_point(mesh8):
    p, w = mesh8
    est = estimate_limiting_bias("dmsgd", p, w, 1e-3, 0.8)
    assert est.fixed_point_residual < 1e-8
    s = init_state(np.zeros((p.n, p.d)), 1e-3, 0.8)
    for _ in range(est.iterations):
        s = step_dmsgd(s, p, w)
    assert fixed_point_residual("dmsgd", s.x, p, w.w, 1e-3, 0.8) < 1e-8
    assert fixed_point_residual("dsgd", s.x, p, w.w, 1e-3, 0.8) > 1e-6


def test_unknown_algorithm_residual(tiny):
    with pytest.raises(ValueError):
        fixed_point_residual("adam", np.zeros((tiny.n, tiny.d)), tiny, np.eye(tiny.n), 0.1, 0.0)


def test_divergence_is_reported(mesh8):
    p, w = mesh8
    with pytest.raises(DivergenceError):
        estimate_limiting_bias("dsgd", p, w, 1.0)


def test_budget_exhaustion_is_not_converged(mesh8):
    p, w = mesh8
    est = estimate_limiting_bias("dsgd", p, w, 1e-3, max_iters=10)
    assert not est.converged and est.iterations == 10


def test_gamma_squared_law_dsgd(mesh8):
    # on the 2x4 mesh gamma = 1e-3 is still outside the small-step regime (slope ~1.73);
    # the 8-node exponential graph (rho = 1/3) keeps the whole grid inside it
    p, _ = mesh8
    w = metropolis_weights(build_topology("sym-exp", 8))
    ests = [estimate_limiting_bias("dsgd", p, w, g) for g in (1e-3, 5e-4, 2.5e-4)]
    fit = fit_bias_scaling(ests, "gamma")
    assert 1.8 <= fit.slope <= 2.2
    assert 0.0 <= fit.r_sq <= 1.0


def _fake(beta, bias, converged=True, gamma=1e-3):
    return BiasEstimate("x", gamma, beta, 0.5, 1.0, bias, 0.0, converged)


def test_fit_recovers_exact_power_law():
    ests = [_fake(b, 3.0 / (1 - b) ** 2) for b in (0.0, 0.5, 0.8, 0.9)]
    fit = fit_bias_scaling(ests, "one_over_one_minus_beta")
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.r_sq == pytest.approx(1.0)
    flat = fit_bias_scaling([_fake(b, 2.0) for b in (0.0, 0.5, 0.9)], "one_over_one_minus_beta")
    assert flat.slope == pytest.approx(0.0, abs=1e-12) and flat.r_sq == 1.0


def test_fit_preconditions():
    with pytest.raises(NonconvergedInput):
        fit_bias_scaling([_fake(0.0, 1.0), _fake(0.5, 2.0, converged=False), _fake(0.9, 3.0)], "gamma")
    with pytest.raises(InsufficientPoints):
        fit_bias_scaling([_fake(0.0, 1.0), _fake(0.5, 2.0)], "one_over_one_minus_beta")
    with pytest.raises(InsufficientPoints):
        fit_bias_scaling([_fake(0.0, 1.0), _fake(0.0, 1.1), _fake(0.5, 2.0)], "one_over_one_minus_beta")


def test_theorem_conditions_trivial_and_violated():
    ok = {c.name: c for c in theorem_constant_check(1e-6, 0.0, 0.0, 1.0, 1.0)}
    assert ok["momentum"].satisfied and ok["momentum"].value == 0.0 and ok["momentum"].bound == 0.75
    bad = {c.name: c for c in theorem_constant_check(1e-6, 0.9, 0.5, 1.0, 1.0)}
    assert not bad["momentum"].satisfied
    assert bad["momentum"].value == pytest.approx(0.9 + 16 * 0.81 / (0.1 * 0.25))


def test_theorem_conditions_on_reproduction_instance(mesh8):
    p, w = mesh8
    got = {c.name: c for c in theorem_constant_check(1e-3, 0.8, w.rho, p.L, p.mu)}
    # plug-in values for rho = 1/2 + sqrt(2)/4 (mesh 2x4), L and mu of the seed-42 instance
    rho = 0.5 + math.sqrt(2) / 4
    assert w.rho == pytest.approx(rho, abs=1e-14)
    assert got["momentum"].value == pytest.approx(0.8 + 16 * 0.64 / (0.2 * (1 - rho) ** 2), rel=1e-12)
    assert got["momentum"].value == pytest.approx(2388.1237502960394, rel=1e-9)
    assert got["momentum"].bound == pytest.approx(0.9633883476483185, rel=1e-12)
    assert got["step_size_nonconvex"].bound == pytest.approx(3.443811736078051e-05, rel=1e-9)
    assert got["step_size_strongly_convex"].bound == pytest.approx(9.172414356940428e-06, rel=1e-9)
    assert not any(c.satisfied for c in got.values())
    assert all(c.margin < 0 for c in got.values())
