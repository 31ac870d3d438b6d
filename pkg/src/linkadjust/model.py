"""Shared data model: the linked file, parameter containers and densities.

Both design matrices carry an explicit all-ones first column.  A model
with a constant correct-match probability is therefore just a mismatch
model with ``q == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logit

from .errors import InvalidInputError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _as_float_array(a, name, ndim):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


@dataclass
class LinkedDataset:
    """A linked file ``{(x_i, y_i, z_i)}``.

    Attributes
    ----------
    y : (n,) array
        Responses.
    X : (n, p) array
        Outcome design, first column all ones.
    Z : (n, q) array
        Mismatch-model design, first column all ones.
    true_m : (n,) int array, optional
        Ground-truth mismatch flags (simulations only).
    block_id : (n,) int array, optional
        Block membership.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    true_m: np.ndarray | None = None
    block_id: np.ndarray | None = None
    x_names: list[str] | None = None
    z_names: list[str] | None = None

    def __post_init__(self):
        self.y = _as_float_array(self.y, "y", 1)
        self.X = _as_float_array(self.X, "X", 2)
        self.Z = _as_float_array(self.Z, "Z", 2)
        n = self.y.shape[0]
        for name, mat in (("X", self.X), ("Z", self.Z)):
            if mat.shape[0] != n:
                raise InvalidInputError(f"{name} has {mat.shape[0]} rows, expected {n}")
            if mat.shape[1] < 1 or not np.all(mat[:, 0] == 1.0):
                raise InvalidInputError(f"first column of {name} must be an all-ones intercept")
        if n < self.X.shape[1] or n < self.Z.shape[1]:
            raise InvalidInputError("need at least as many observations as columns in X and Z")
        if self.true_m is not None:
            self.true_m = np.asarray(self.true_m).astype(int)
            if self.true_m.shape != (n,) or not np.all((self.true_m == 0) | (self.true_m == 1)):
                raise InvalidInputError("true_m must be a 0/1 vector of length n")
        if self.block_id is not None:
            self.block_id = np.asarray(self.block_id).astype(int)
            if self.block_id.shape != (n,):
                raise InvalidInputError("block_id must have length n")
        if self.x_names is None:
            self.x_names = ["intercept"] + [f"x{k}" for k in range(1, self.p)]
        if self.z_names is None:
            self.z_names = ["intercept"] + [f"z{k}" for k in range(1, self.q)]

    @classmethod
    def from_covariates(cls, y, covariates, m_covariates=None, **kwargs):
        """Build a dataset, prepending the intercept columns.

        ``covariates`` and ``m_covariates`` are ``(n, k)`` arrays without an
        intercept; ``m_covariates=None`` gives an intercept-only mismatch model.
        """
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        ones = np.ones((n, 1))
        cov = np.asarray(covariates, dtype=float).reshape(n, -1)
        mcov = np.empty((n, 0)) if m_covariates is None else np.asarray(m_covariates, dtype=float).reshape(n, -1)
        return cls(y=y, X=np.hstack([ones, cov]), Z=np.hstack([ones, mcov]), **kwargs)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Z.shape[1]

    def with_z(self, Z, z_names=None):
        """Return a copy using a different mismatch-model design."""
        return LinkedDataset(self.y, self.X, Z, self.true_m, self.block_id, self.x_names, z_names)


@dataclass
class OutcomeParams:
    """Gaussian linear outcome model ``y | x ~ N(x'beta, sigma^2)``."""

    beta: np.ndarray
    sigma: float

    def __post_init__(self):
        self.beta = _as_float_array(self.beta, "beta", 1)
        self.sigma = float(self.sigma)
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidInputError(f"sigma must be positive and finite, got {self.sigma}")


@dataclass
class MismatchRateConstraint:
    """Upper bound on the overall mismatch rate.

    ``b`` is the logit of ``assumed_rate``; the constraint on the
    logistic parameter reads ``mean(Z, axis=0) @ (-gamma) <= b``.
    """

    assumed_rate: float
    b: float = field(init=False)

    def __post_init__(self):
        rate = float(self.assumed_rate)
        if not 0.0 < rate < 1.0:
            raise InvalidInputError(f"assumed_rate must lie in (0, 1), got {rate}")
        self.assumed_rate = rate
        self.b = float(logit(rate))


@dataclass
class MismatchParams:
    """Logistic correct-match model ``P(m=0 | z) = expit(z'gamma)``."""

    gamma: np.ndarray
    constraint: MismatchRateConstraint | None = None

    def __post_init__(self):
        self.gamma = _as_float_array(self.gamma, "gamma", 1)

    @classmethod
    def constant_rate(cls, mismatch_rate, q=1, constraint=None):
        """Intercept-only model with ``P(m=1) = mismatch_rate``."""
        gamma = np.zeros(q)
        gamma[0] = logit(1.0 - mismatch_rate)
        return cls(gamma, constraint)

    def satisfies_constraint(self, Z, tol=1e-8):
        if self.constraint is None:
            return True
        return constraint_slack(Z, self.gamma, self.constraint) >= -tol


def gaussian_logpdf(y, mean, sigma):
    """Vectorised log N(y; mean, sigma^2)."""
    r = (np.asarray(y, dtype=float) - mean) / sigma
    return -0.5 * r * r - math.log(sigma) - LOG_SQRT_2PI


def gaussian_loglik(y_val, x_row, theta: OutcomeParams) -> float:
    """Log density of a single response under the outcome model."""
    x_row = np.asarray(x_row, dtype=float)
    if x_row.shape != theta.beta.shape:
        raise InvalidInputError(f"x_row has shape {x_row.shape}, beta has {theta.beta.shape}")
    if not (math.isfinite(y_val) and np.all(np.isfinite(x_row))):
        raise InvalidInputError("non-finite input to gaussian_loglik")
    return float(gaussian_logpdf(y_val, float(x_row @ theta.beta), theta.sigma))


def h_logistic(z_row, gamma) -> float:
    """Correct-match probability ``P(m=0 | z)`` for one row."""
    z_row = np.asarray(z_row, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if z_row.shape != gamma.shape:
        raise InvalidInputError(f"z_row has shape {z_row.shape}, gamma has {gamma.shape}")
    return float(expit(z_row @ gamma))


def log_h_terms(Z, gamma):
    """Return ``(log h, log(1 - h))`` for every row of Z."""
    eta = np.asarray(Z, dtype=float) @ np.asarray(gamma, dtype=float)
    return log_expit(eta), log_expit(-eta)


def constraint_slack(Z, gamma, c: MismatchRateConstraint) -> float:
    """``b - zbar'(-gamma)``; nonnegative iff the rate constraint holds."""
    zbar = np.asarray(Z, dtype=float).mean(axis=0)
    gamma = np.asarray(gamma, dtype=float)
    if zbar.shape != gamma.shape:
        raise InvalidInputError(f"Z has {zbar.shape[0]} columns, gamma has length {gamma.shape[0]}")
    return float(c.b + zbar @ gamma)
