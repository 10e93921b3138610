import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decentlam.errors import InvalidSchedule, NotPositiveDefinite
from decentlam.optimizers import (
    STEPPERS,
    GradientSpec,
    init_sdomain_state,
    init_state,
    make_schedule,
    step_awc_dmsgd,
    step_awc_dsgd,
    step_decentlam,
    step_decentlam_sdomain,
    step_dmsgd,
    step_dsgd,
    step_psgd_momentum,
)
from decentlam.problems import Problem, generate_regression
from decentlam.topology import WeightMatrix, build_topology, metropolis_weights

NOISY = GradientSpec("additive", 2)


def run(step, state, p, w, iters, spec=GradientSpec(), seed=0):
    xs = [state.x]
    for _ in range(iters):
        state = step(state, p, w, spec, seed)
        xs.append(state.x)
    return np.array(xs), state


@pytest.fixture(scope="module")
def ring_case():
    p = generate_regression(6, 4, 10, hetero=0.5, noise_mag=0.1, seed=5, sigma_sq=1.0)
    w = metropolis_weights(build_topology("ring", 6))
    x0 = np.random.default_rng(0).standard_normal((6, 4))
    return p, w, x0


def test_state_invariants():
    s = init_state(np.ones((2, 3)), 0.1, 0.5)
    assert np.all(s.m == 0) and s.k == 0
    with pytest.raises(ValueError):
        init_state(np.ones((2, 3)), 0.0)
    with pytest.raises(ValueError):
        init_state(np.ones((2, 3)), 0.1, 1.0)
    with pytest.raises(ValueError):
        init_state(np.ones((2, 3)), 0.1, -0.1)


def test_psgd_by_hand():
    # f(x) = x^2 / 2 on a single node
    p = Problem.from_data([[[1.0]]], [[0.0]])
    one = WeightMatrix(np.ones((1, 1)))
    s = init_state(np.ones((1, 1)), 0.1, 0.5)
    s = step_psgd_momentum(s, p, one)
    assert s.x[0, 0] == pytest.approx(0.9, abs=1e-15)
    s = step_psgd_momentum(s, p, one)
    assert s.x[0, 0] == pytest.approx(0.76, abs=1e-15)


def test_psgd_rows_identical(ring_case):
    p, w, x0 = ring_case
    _, s = run(step_psgd_momentum, init_state(x0, 0.01, 0.5), p, w, 5, NOISY)
    assert np.all(s.x == s.x[0])


def test_psgd_is_gradient_descent(mesh8):
    p, w = mesh8
    gamma = 1.0 / p.L
    factor = max(abs(1 - gamma * p.L), abs(1 - gamma * p.mu))
    s = init_state(np.zeros((p.n, p.d)), gamma)
    prev = np.linalg.norm(s.x[0] - p.x_star)
    for _ in range(20):
        s = step_psgd_momentum(s, p, w)
        err = np.linalg.norm(s.x[0] - p.x_star)
        assert err <= factor * prev * (1 + 1e-9)
        prev = err


def test_single_node_psgd_equals_dmsgd():
    p = generate_regression(1, 3, 8, seed=2, sigma_sq=0.5)
    one = WeightMatrix(np.ones((1, 1)))
    x0 = np.ones((1, 3))
    a, _ = run(step_psgd_momentum, init_state(x0, 0.05, 0.7), p, one, 50, NOISY, seed=3)
    b, _ = run(step_dmsgd, init_state(x0, 0.05, 0.7), p, one, 50, NOISY, seed=3)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_dsgd_with_exact_averaging_is_psgd(ring_case):
    p, _, _ = ring_case
    avg = WeightMatrix(np.full((p.n, p.n), 1.0 / p.n))
    x0 = np.zeros((p.n, p.d))
    a, _ = run(step_dsgd, init_state(x0, 0.02), p, avg, 50, NOISY, seed=1)
    b, _ = run(step_psgd_momentum, init_state(x0, 0.02), p, avg, 50, NOISY, seed=1)
    np.testing.assert_allclose(a[1:], b[1:], atol=1e-12)


def test_dsgd_vanishing_step_is_pure_averaging(ring_case):
    # gamma must be positive; at 1e-300 the gradient term underflows against x
    p, w, x0 = ring_case
    s = init_state(x0, 1e-300)
    for _ in range(10):
        before = s.x - s.x.mean(axis=0)
        s = step_dsgd(s, p, w)
        np.testing.assert_array_equal(s.x, w.w @ s.x_prev)
        after = s.x - s.x.mean(axis=0)
        assert np.linalg.norm(after) <= w.rho * np.linalg.norm(before) + 1e-12


@pytest.mark.parametrize("spec", [GradientSpec(), NOISY], ids=["full", "additive"])
def test_zero_momentum_collapses(ring_case, spec):
    p, w, x0 = ring_case
    base, _ = run(step_dsgd, init_state(x0, 0.02), p, w, 100, spec, seed=4)
    for step in (step_dmsgd, step_decentlam):
        other, _ = run(step, init_state(x0, 0.02, 0.0), p, w, 100, spec, seed=4)
        np.testing.assert_allclose(other, base, rtol=0, atol=1e-12)
    awc, _ = run(step_awc_dsgd, init_state(x0, 0.02), p, w, 100, spec, seed=4)
    awc_m, _ = run(step_awc_dmsgd, init_state(x0, 0.02, 0.0), p, w, 100, spec, seed=4)
    np.testing.assert_allclose(awc_m, awc, rtol=0, atol=1e-12)


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
@pytest.mark.parametrize("spec", [GradientSpec(), NOISY, GradientSpec("minibatch", 3)],
                         ids=["full", "additive", "minibatch"])
@pytest.mark.parametrize("pair", [("dmsgd", "dmsgd_reform"), ("decentlam", "decentlam_reform")])
def test_reformulations_agree(ring_case, beta, spec, pair):
    p, w, x0 = ring_case
    a, _ = run(STEPPERS[pair[0]], init_state(x0, 0.02, beta), p, w, 1000, spec, seed=9)
    b, _ = run(STEPPERS[pair[1]], init_state(x0, 0.02, beta), p, w, 1000, spec, seed=9)
    gap = np.linalg.norm(a - b, axis=(1, 2)) / np.maximum(1.0, np.linalg.norm(a, axis=(1, 2)))
    assert gap.max() <= 1e-10


def test_sdomain_matches_decentlam(ring_case):
    p, w, x0 = ring_case
    w_pd = WeightMatrix(0.5 * (np.eye(p.n) + w.w))
    a, _ = run(step_decentlam, init_state(x0, 0.02, 0.8), p, w_pd, 1000, NOISY, seed=2)
    s = init_sdomain_state(x0, w_pd, 0.02, 0.8)
    b = [s.x]
    for _ in range(1000):
        s = step_decentlam_sdomain(s, p, w_pd, NOISY, 2)
        b.append(s.x)
    gap = np.linalg.norm(a - np.array(b), axis=(1, 2)) / np.maximum(1.0, np.linalg.norm(a, axis=(1, 2)))
    assert gap.max() <= 1e-8


def test_sdomain_two_node_by_hand():
    # f_1 = x^2/2, f_2 = (x - 2)^2/2, W = (I + J/2)/2 with eigenvalues 1 and 1/2
    p = Problem.from_data([[[1.0]], [[1.0]]], [[0.0], [2.0]])
    w = WeightMatrix(np.array([[0.75, 0.25], [0.25, 0.75]]))
    s = init_sdomain_state(np.array([[1.0], [3.0]]), w, 0.1, 0.0)
    r2 = math.sqrt(2)
    np.testing.assert_allclose(s.s[:, 0], [2 - r2, 2 + r2], atol=1e-14)
    s = step_decentlam_sdomain(s, p, w)
    np.testing.assert_allclose(s.s[:, 0], [1.9 - r2 / 2, 1.9 + r2 / 2], atol=1e-14)
    np.testing.assert_allclose(s.x[:, 0], [1.4, 2.4], atol=1e-14)


def test_sdomain_identity_is_local_momentum_sgd(ring_case):
    p, _, x0 = ring_case
    eye = WeightMatrix(np.eye(p.n))
    s = init_sdomain_state(x0, eye, 0.02, 0.5)
    ref = init_state(x0, 0.02, 0.5)
    for _ in range(20):
        s = step_decentlam_sdomain(s, p, eye)
        ref = step_dmsgd(ref, p, eye)
    np.testing.assert_allclose(s.x, ref.x, atol=1e-12)


def test_sdomain_needs_positive_definite(ring_case):
    p, w, x0 = ring_case
    with pytest.raises(NotPositiveDefinite):
        init_sdomain_state(x0, metropolis_weights(build_topology("full", 6)), 0.1)


def test_single_node_every_algorithm_is_momentum_sgd():
    p = generate_regression(1, 4, 9, seed=6, sigma_sq=1.0)
    one = WeightMatrix(np.ones((1, 1)))
    x0 = np.full((1, 4), 0.5)
    for name, step in STEPPERS.items():
        beta = 0.0 if name in ("dsgd", "awc_dsgd") else 0.8
        ref, _ = run(step_psgd_momentum, init_state(x0, 0.01, beta), p, one, 100, NOISY, seed=1)
        got, _ = run(step, init_state(x0, 0.01, beta), p, one, 100, NOISY, seed=1)
        scale = np.maximum(1.0, np.linalg.norm(ref, axis=(1, 2)))
        assert (np.linalg.norm(got - ref, axis=(1, 2)) / scale).max() <= 1e-12, name


def test_da_dmsgd_exact_averaging_no_momentum_is_psgd(ring_case):
    p, _, _ = ring_case
    avg = WeightMatrix(np.full((p.n, p.n), 1.0 / p.n))
    x0 = np.zeros((p.n, p.d))
    a, _ = run(STEPPERS["da_dmsgd"], init_state(x0, 0.02), p, avg, 30, NOISY)
    b, _ = run(step_psgd_momentum, init_state(x0, 0.02), p, avg, 30, NOISY)
    np.testing.assert_allclose(a[1:], b[1:], atol=1e-12)


def test_awc_identity_is_local_sgd(ring_case):
    p, _, x0 = ring_case
    eye = WeightMatrix(np.eye(p.n))
    s = step_awc_dmsgd(init_state(x0, 0.1), p, eye)
    g = np.stack([p.A[i].T @ (p.A[i] @ x0[i] - p.b[i]) for i in range(p.n)])
    np.testing.assert_allclose(s.x, x0 - 0.1 * g, atol=1e-14)


def test_time_varying_weights(ring_case):
    from decentlam.topology import weight_provider

    p, _, x0 = ring_case
    provider = weight_provider("bipartite", p.n, seed=3)
    s = init_state(x0, 0.01, 0.5)
    for k in range(3):
        before = s.x
        s = step_dsgd(s, p, provider)
        g = np.stack([p.A[i].T @ (p.A[i] @ before[i] - p.b[i]) for i in range(p.n)])
        np.testing.assert_allclose(s.x, provider(k).w @ (before - 0.01 * g), atol=1e-13)


def test_steps_are_pure(ring_case):
    p, w, x0 = ring_case
    s = init_state(x0, 0.02, 0.5)
    x_copy = s.x.copy()
    for step in STEPPERS.values():
        out = step(s, p, w, NOISY, 1)
        assert out.k == 1
        np.testing.assert_array_equal(s.x, x_copy)
        assert s.k == 0


def test_schedules():
    assert make_schedule("constant", 0.3)(1000) == 0.3
    assert make_schedule("inverse_time", 1.0, k0=1)(3) == 0.25
    assert make_schedule("step_decay", 0.1, factor=0.1, period=100)(250) == pytest.approx(0.001, rel=1e-15)
    for bad in (dict(kind="constant", gamma0=0.0), dict(kind="inverse_time", gamma0=1.0, k0=0.0),
                dict(kind="step_decay", gamma0=1.0, factor=1.5), dict(kind="step_decay", gamma0=1.0, period=0)):
        with pytest.raises(InvalidSchedule):
            make_schedule(**bad)
    with pytest.raises(ValueError):
        make_schedule("cosine", 0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(0.1, 1e4), st.integers(0, 10**6))
def test_inverse_time_is_decreasing(gamma0, k0, k):
    sched = make_schedule("inverse_time", gamma0, k0=k0)
    assert 0 < sched(k + 1) <= sched(k) <= gamma0
