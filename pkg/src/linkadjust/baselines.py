"""Reference estimators: least squares that ignores linkage error, and the
mixture fit with a known mismatch-component density."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateDensityError, InvalidInputError, SingularDesignError
from .inference import InferenceResult, wald_intervals
from .model import LinkedDataset, OutcomeParams
from .plain import EmConfig, MarginalDensity, fit_plain
from .results import FitResult


def fit_naive(data: LinkedDataset, level=0.95) -> FitResult:
    """Ordinary least squares on the linked file.

    ``sigma`` is the residual standard error with denominator ``n - p``
    (the EM fits use mass-weighted denominators instead).  The covariance
    is the classical ``sigma^2 (X'X)^-1``; ``log sigma`` gets the usual
    large-sample variance ``1 / (2 (n - p))``.
    """
    X, y = data.X, data.y
    n, p = X.shape
    if n <= p:
        raise InvalidInputError("least squares needs more observations than coefficients")
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        raise SingularDesignError("outcome design matrix is rank deficient")
    resid = y - X @ beta
    dof = n - p
    sigma = math.sqrt(resid @ resid / dof)
    if sigma == 0:
        sigma = np.finfo(float).tiny
    cov = np.zeros((p + 1, p + 1))
    cov[:p, :p] = sigma**2 * np.linalg.inv(X.T @ X)
    cov[p, p] = 1.0 / (2.0 * dof)
    theta = OutcomeParams(beta, sigma)
    se = np.sqrt(np.diag(cov))
    inf = wald_intervals(np.concatenate([beta, [math.log(sigma)]]), InferenceResult(cov, se), level, sigma_index=p)
    return FitResult(
        method="naive",
        theta=theta,
        gamma=None,
        posterior_correct=np.ones(n),
        loglik_trace=np.asarray([float(-0.5 * n * (math.log(2 * math.pi * sigma**2)) - 0.5 * dof)]),
        iterations=0,
        converged=True,
        names=[f"beta[{nm}]" for nm in data.x_names] + ["sigma"],
        cov=cov,
        se=se,
        inference=inf,
    )


@dataclass
class OracleSpec:
    """Known density of the responses among mismatched links."""

    f_y_given_m1: MarginalDensity

    @classmethod
    def gaussian_from_mismatches(cls, data: LinkedDataset):
        """Gaussian with the mean and SD of the truly mismatched responses."""
        if data.true_m is None:
            raise InvalidInputError("data carries no true mismatch flags")
        ym = data.y[data.true_m == 1]
        if ym.size < 2:
            raise InvalidInputError("need at least two mismatched responses")
        return cls(MarginalDensity.gaussian(float(ym.mean()), float(ym.std(ddof=1))))


def fit_oracle(data: LinkedDataset, spec: OracleSpec, config: EmConfig | None = None, *, inference=True,
               level=0.95) -> FitResult:
    """:func:`fit_plain` with ``spec.f_y_given_m1`` as the mismatch component."""
    logf = spec.f_y_given_m1.logpdf(data.y)
    bad = np.flatnonzero(~np.isfinite(logf))
    if bad.size:
        raise DegenerateDensityError(bad[0], f"oracle density is not positive at observation {bad[0]}")
    config = EmConfig() if config is None else config
    return fit_plain(data, replace(config, marginal=spec.f_y_given_m1), inference=inference, level=level,
                     method="oracle")


__all__ = ["OracleSpec", "fit_naive", "fit_oracle"]
