import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import logit

from linkadjust import (
    InvalidInputError,
    LinkedDataset,
    MismatchParams,
    MismatchRateConstraint,
    OutcomeParams,
    gaussian_loglik,
    h_logistic,
)
from linkadjust.model import constraint_slack

finite = st.floats(-50, 50, allow_nan=False)


def test_gaussian_loglik_standard_normal_mode():
    val = gaussian_loglik(0.0, [1.0, 0.0], OutcomeParams([0.0, 0.0], 1.0))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_gaussian_loglik_zero_residual():
    val = gaussian_loglik(1.0, [1.0, 0.0], OutcomeParams([1.0, -1.0], 0.25))
    assert val == pytest.approx(math.log(1 / (0.25 * math.sqrt(2 * math.pi))), abs=1e-12)


def test_gaussian_loglik_against_scipy():
    val = gaussian_loglik(1.5, [1.0, 1.0], OutcomeParams([1.0, -1.0], 0.25))
    assert val == pytest.approx(stats.norm.logpdf(1.5, loc=0.0, scale=0.25), rel=1e-12)


def test_gaussian_loglik_far_tail_is_finite():
    assert math.isfinite(gaussian_loglik(1e6, [1.0], OutcomeParams([0.0], 1e-3)))


def test_gaussian_loglik_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        gaussian_loglik(math.nan, [1.0], OutcomeParams([0.0], 1.0))


def test_gaussian_loglik_integrates_to_one():
    theta = OutcomeParams([0.3, 2.0], 0.7)
    mass, _ = integrate.quad(lambda v: math.exp(gaussian_loglik(v, [1.0, 0.5], theta)), -np.inf, np.inf)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_gaussian_loglik_peaks_at_mean():
    theta = OutcomeParams([0.3, 2.0], 0.7)
    grid = np.linspace(-3, 5, 801)
    vals = [gaussian_loglik(v, [1.0, 0.5], theta) for v in grid]
    assert grid[int(np.argmax(vals))] == pytest.approx(1.3, abs=0.01)


@pytest.mark.parametrize(
    "z, g, expected",
    [((1, 0), (0, 5), 0.5), ((1, 0), (2.5, 4.5), 1 / (1 + math.exp(-2.5))), ((1, 1), (2.5, 4.5), 1 / (1 + math.exp(-7)))],
)
def test_h_logistic_values(z, g, expected):
    assert h_logistic(z, g) == pytest.approx(expected, abs=1e-12)


def test_h_logistic_examples_rounded():
    assert round(h_logistic((1, 0), (2.5, 4.5)), 6) == 0.924142
    assert round(h_logistic((1, 1), (2.5, 4.5)), 6) == 0.999089


def test_h_logistic_extreme_predictor():
    assert h_logistic((1.0,), (700.0,)) == 1.0
    assert 0.0 <= h_logistic((1.0,), (-700.0,)) < 1e-300


def test_h_logistic_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        h_logistic((1.0, 2.0), (1.0,))


@given(st.lists(finite, min_size=1, max_size=4).flatmap(
    lambda z: st.tuples(st.just(z), st.lists(finite, min_size=len(z), max_size=len(z)))))
def test_h_logistic_symmetry(zg):
    z, g = zg
    assert h_logistic(z, g) + h_logistic(z, [-v for v in g]) == pytest.approx(1.0, abs=1e-12)


def test_constraint_slack_boundary():
    c = MismatchRateConstraint(0.2)
    assert constraint_slack(np.ones((5, 1)), [-c.b], c) == pytest.approx(0.0, abs=1e-15)


def test_constraint_slack_scalar_oracle():
    c = MismatchRateConstraint(0.3)
    assert constraint_slack(np.ones((4, 1)), [logit(0.9)], c) == pytest.approx(logit(0.3) + logit(0.9))


def test_constraint_slack_two_columns():
    Z = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert constraint_slack(Z, [1.0, 2.0], MismatchRateConstraint(0.5)) == pytest.approx(2.0)


def test_constraint_b_is_logit():
    c = MismatchRateConstraint(0.1)
    assert c.b == pytest.approx(math.log(0.1 / 0.9))
    with pytest.raises(InvalidInputError):
        MismatchRateConstraint(1.0)


def test_constant_rate_parameterisation():
    mp = MismatchParams.constant_rate(0.3)
    assert mp.gamma[0] == pytest.approx(logit(0.7))
    assert mp.satisfies_constraint(np.ones((3, 1)))
    tight = MismatchParams(mp.gamma, MismatchRateConstraint(0.2))
    assert not tight.satisfies_constraint(np.ones((3, 1)))


def test_dataset_validation():
    y = np.arange(5.0)
    X = np.column_stack([np.ones(5), y])
    with pytest.raises(InvalidInputError):
        LinkedDataset(y, X * 2, X)
    with pytest.raises(InvalidInputError):
        LinkedDataset(np.array([1.0, np.inf, 0, 0, 0]), X, X)
    with pytest.raises(InvalidInputError):
        LinkedDataset(y[:1], X[:1], X[:1])
    with pytest.raises(InvalidInputError):
        LinkedDataset(y, X, X, true_m=np.ones(4))
    with pytest.raises(InvalidInputError):
        OutcomeParams([0.0], 0.0)


def test_from_covariates_prepends_intercepts():
    d = LinkedDataset.from_covariates(np.arange(4.0), np.arange(4.0) ** 2)
    assert d.X.shape == (4, 2) and d.Z.shape == (4, 1)
    assert np.all(d.X[:, 0] == 1.0)
