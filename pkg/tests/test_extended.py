import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit, logit

from linkadjust import (
    EmConfig,
    InvalidInputError,
    LinkedDataset,
    MismatchParams,
    MismatchRateConstraint,
    NoMismatchMassError,
    OutcomeParams,
    ScenarioSpec,
    composite_loglik_extended,
    extended_mstep_gamma,
    extended_mstep_theta,
    extended_responsibilities,
    fit_extended,
    generate,
    mismatch_source_weights,
    pairwise_weights,
)
from linkadjust.extended import gamma_objective, reduce_responsibilities
from linkadjust.model import constraint_slack

from conftest import random_dataset


def z_for_h(h):
    """Intercept-only-free design reproducing given h values exactly."""
    h = np.asarray(h, dtype=float)
    return np.column_stack([np.ones(h.size), logit(h)]), np.array([0.0, 1.0])


def brute_weights(h):
    n = h.size
    S = np.sum(1 - h)
    W = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            W[i, j] = h[i] + (1 - h[i]) ** 2 / S if i == j else (1 - h[i]) * (1 - h[j]) / S
    return W


def brute_density(data, theta):
    n = data.n
    F = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            F[i, j] = stats.norm.pdf(data.y[i], data.X[j] @ theta.beta, theta.sigma)
    return F


def test_mismatch_source_weights_constant_h_uniform():
    Z = np.ones((7, 1))
    assert mismatch_source_weights(Z, [1.3]) == pytest.approx(np.full(7, 1 / 7), abs=1e-15)


def test_mismatch_source_weights_hand_values():
    Z, g = z_for_h([0.9, 0.7, 0.4])
    assert mismatch_source_weights(Z, g) == pytest.approx([0.1, 0.3, 0.6], abs=1e-12)


def test_mismatch_source_weights_zero_mass_at_certain_match():
    Z = np.array([[1.0, 1.0], [1.0, 0.0]])
    w = mismatch_source_weights(Z, [0.0, 800.0])
    assert w == pytest.approx([0.0, 1.0], abs=1e-15)


def test_no_mismatch_mass_error():
    with pytest.raises(NoMismatchMassError):
        mismatch_source_weights(np.ones((3, 1)), [800.0])
    with pytest.raises(NoMismatchMassError):
        pairwise_weights(np.ones((3, 1)), [800.0])


def test_pairwise_two_points():
    w = pairwise_weights(np.ones((2, 1)), [0.0])
    assert w.S == pytest.approx(1.0)
    assert w.omega_diag[0] == pytest.approx(0.75)
    assert w.offdiag(0, 1) == pytest.approx(0.25)


def test_pairwise_dense_matches_definition(rng):
    h = rng.uniform(0.05, 0.95, 9)
    Z, g = z_for_h(h)
    assert pairwise_weights(Z, g).dense() == pytest.approx(brute_weights(h), abs=1e-14)


def test_responsibilities_flat_likelihood(rng):
    data = random_dataset(rng, n=12)
    theta = OutcomeParams([0.0, 0.0], 1.0)
    data = LinkedDataset(np.zeros(12), data.X, data.Z)
    g = np.array([0.5, -0.7])
    L = extended_responsibilities(data, theta, g).L
    assert L == pytest.approx(pairwise_weights(data.Z, g).dense(), abs=1e-14)


def test_responsibilities_brute_force_n3(rng):
    data = random_dataset(rng, n=3)
    theta = OutcomeParams([0.2, 0.5], 0.8)
    h = np.array([0.9, 0.4, 0.6])
    Z, g = z_for_h(h)
    data = LinkedDataset(data.y, data.X, Z)
    P = brute_weights(h) * brute_density(data, theta)
    assert extended_responsibilities(data, theta, g).L == pytest.approx(P / P.sum(axis=1, keepdims=True),
                                                                       abs=1e-12)


def test_responsibilities_near_identity():
    x = np.array([0.0, 10.0, 20.0])
    data = LinkedDataset.from_covariates(x.copy(), x, np.zeros(3))
    L = extended_responsibilities(data, OutcomeParams([0.0, 1.0], 0.5), [logit(1 - 1e-9), 0.0]).L
    assert L == pytest.approx(np.eye(3), abs=1e-8)


def test_composite_loglik_single_observation():
    data = LinkedDataset(np.array([0.4]), np.ones((1, 1)), np.ones((1, 1)))
    theta = OutcomeParams([0.1], 0.5)
    assert composite_loglik_extended(data, theta, [0.3]) == pytest.approx(stats.norm.logpdf(0.4, 0.1, 0.5))


def test_composite_loglik_brute_force(rng):
    data = random_dataset(rng, n=5)
    theta = OutcomeParams([0.3, -0.4], 0.6)
    g = np.array([0.4, 1.1])
    h = expit(data.Z @ g)
    expected = np.sum(np.log((brute_weights(h) * brute_density(data, theta)).sum(axis=1)))
    assert composite_loglik_extended(data, theta, g) == pytest.approx(expected, abs=1e-10)


def test_composite_loglik_far_outlier_is_finite(rng):
    data = random_dataset(rng, n=20)
    y = data.y.copy()
    y[0] = 1e4
    data = LinkedDataset(y, data.X, data.Z)
    assert math.isfinite(composite_loglik_extended(data, OutcomeParams([0.0, 0.0], 0.1), [1.0, 0.0]))


def test_mstep_theta_identity_is_ols(rng):
    data = random_dataset(rng, n=30, p=3)
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    assert extended_mstep_theta(data, np.eye(30)).beta == pytest.approx(beta, abs=1e-10)


def test_mstep_theta_uniform_rows(rng):
    data = random_dataset(rng, n=25, p=3)
    theta = extended_mstep_theta(data, np.full((25, 25), 1 / 25))
    assert theta.beta[0] == pytest.approx(data.y.mean(), abs=1e-10)
    assert theta.beta[1:] == pytest.approx([0.0, 0.0], abs=1e-10)


def test_mstep_gamma_identity_pushes_to_bound(rng):
    data = random_dataset(rng, n=20, q=1)
    with pytest.warns(Warning):
        g = extended_mstep_gamma(data, np.eye(20), [0.0], rng=np.random.default_rng(0))
    assert g.gamma[0] == pytest.approx(30.0, abs=1e-6)


def test_mstep_gamma_intercept_grid_search(rng):
    n = 40
    data = LinkedDataset(rng.standard_normal(n), np.ones((n, 1)), np.ones((n, 1)))
    L = np.full((n, n), 0.5 / (n - 1))
    np.fill_diagonal(L, 0.5)
    stats_ = reduce_responsibilities(L)
    grid = np.linspace(-10, 10, 200001)
    vals = [gamma_objective(data.Z, np.array([v]), stats_) for v in grid]
    best = grid[int(np.argmax(vals))]
    got = extended_mstep_gamma(data, L, [0.0], rng=np.random.default_rng(1)).gamma[0]
    assert got == pytest.approx(best, abs=1e-4)


def test_mstep_gamma_uniform_rows_grid_search(rng):
    n = 30
    data = LinkedDataset(rng.standard_normal(n), np.ones((n, 1)), np.ones((n, 1)))
    L = np.full((n, n), 1 / n)
    grid = np.linspace(-30, 30, 600001)
    st = reduce_responsibilities(L)
    best = max(gamma_objective(data.Z, np.array([v]), st) for v in grid)
    got = extended_mstep_gamma(data, L, [0.0], rng=np.random.default_rng(1)).gamma[0]
    # the supremum sits at h -> 0, where the objective is flat, so compare values
    assert got < -10
    assert gamma_objective(data.Z, np.array([got]), st) == pytest.approx(best, abs=1e-8)


def test_mstep_gamma_constraint(rng):
    data = random_dataset(rng, n=30)
    L = rng.random((30, 30))
    L /= L.sum(axis=1, keepdims=True)
    c = MismatchRateConstraint(0.02)
    g = extended_mstep_gamma(data, L, MismatchParams([5.0, 0.0]), c, rng=np.random.default_rng(2))
    assert constraint_slack(data.Z, g.gamma, c) >= -1e-8


def test_fit_extended_recovers_truth():
    data, _ = generate(ScenarioSpec("motivating", n=400, seed=9))
    res = fit_extended(data)
    assert res.converged
    assert np.all(np.abs(res.theta.beta - [1.0, -1.0]) < 4 * res.se[:2])
    assert np.all(np.diff(res.loglik_trace) >= -1e-8)
    assert np.all((res.posterior_correct >= 0) & (res.posterior_correct <= 1))


def test_fit_extended_posterior_correct_definition(rng):
    data = random_dataset(rng, n=30)
    res = fit_extended(data, EmConfig(max_iter=5), inference=False)
    h = expit(data.Z @ res.gamma.gamma)
    F = brute_density(data, res.theta)
    expected = h * np.diag(F) / (brute_weights(h) * F).sum(axis=1)
    assert res.posterior_correct == pytest.approx(expected, abs=1e-10)


def test_fit_extended_size_limit(rng):
    data = random_dataset(rng, n=30)
    with pytest.raises(InvalidInputError):
        fit_extended(data, EmConfig(n_max=20))


def test_fit_extended_deterministic(rng):
    data = random_dataset(rng, n=60)
    a = fit_extended(data, inference=False)
    b = fit_extended(data, inference=False)
    assert np.array_equal(a.params, b.params)
