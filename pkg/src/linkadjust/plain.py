"""Two-component mixture fit under strongly non-informative linkage.

Each response is modelled as

    y_i | x_i ~ h_i f(y_i | x_i; theta) + (1 - h_i) f(y_i),

with ``h_i = P(m_i = 0 | z_i)`` logistic in ``z_i`` and ``f(y)`` the
marginal density of the responses.  The composite likelihood is
maximized by EM treating the mismatch indicators as missing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from ._optim import GAMMA_CLIP, fit_weighted_logistic, logistic_objective, make_feasible
from .errors import (
    DegenerateDataError,
    DegenerateDensityError,
    InvalidInputError,
    LinkageWarning,
    SingularDesignError,
)
from .model import (
    LOG_SQRT_2PI,
    LinkedDataset,
    MismatchParams,
    MismatchRateConstraint,
    OutcomeParams,
    gaussian_logpdf,
    log_h_terms,
)
from .results import FitResult, param_names

MARGINAL_MODES = ("kde", "empirical_pmf", "integrated", "user")
DEFAULT_INIT_CORRECT = 0.95


@dataclass
class MarginalDensity:
    """A density for the responses, evaluated in log space.

    ``mode`` is one of ``kde``, ``empirical_pmf``, ``integrated`` or ``user``.
    """

    mode: str
    logpdf: Callable[[np.ndarray], np.ndarray]
    bandwidth: float | None = None

    def eval(self, y):
        return np.exp(self.logpdf(np.atleast_1d(np.asarray(y, dtype=float))))

    @classmethod
    def gaussian(cls, mean, sd):
        """User-supplied Gaussian density (used for the oracle)."""
        if not sd > 0:
            raise InvalidInputError("sd must be positive")
        return cls("user", lambda y: gaussian_logpdf(y, mean, sd))


def silverman_bandwidth(y):
    y = np.asarray(y, dtype=float)
    sd = y.std(ddof=1)
    q75, q25 = np.percentile(y, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    return 0.9 * spread * y.size ** (-0.2)


def _kde_logpdf(data, bw, chunk=2048):
    data = np.asarray(data, dtype=float)
    log_norm = math.log(data.size) + math.log(bw) + LOG_SQRT_2PI

    def logpdf(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty(y.shape)
        for s in range(0, y.size, chunk):
            u = (y[s : s + chunk, None] - data[None, :]) / bw
            out[s : s + chunk] = logsumexp(-0.5 * u * u, axis=1) - log_norm
        return out

    return logpdf


def integrated_logpdf(X, theta: OutcomeParams):
    """``log (1/n) sum_j f(y | x_j; theta)`` as a function of y."""
    mu = X @ theta.beta
    log_n = math.log(mu.size)

    def logpdf(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return logsumexp(gaussian_logpdf(y[:, None], mu[None, :], theta.sigma), axis=1) - log_n

    return logpdf


def estimate_marginal(y, mode="kde", theta: OutcomeParams | None = None, X=None) -> MarginalDensity:
    """Estimate the marginal response density.

    ``kde`` uses a Gaussian kernel with Silverman's rule-of-thumb
    bandwidth; ``empirical_pmf`` uses relative frequencies and needs
    discrete responses; ``integrated`` averages the outcome density over
    the observed covariate rows and needs ``theta`` and ``X``.
    """
    y = np.asarray(y, dtype=float)
    if mode == "kde":
        if y.size < 2:
            raise InvalidInputError("kernel density estimation needs at least two responses")
        if np.ptp(y) == 0:
            raise DegenerateDataError("responses have zero variance; kernel density is degenerate")
        bw = silverman_bandwidth(y)
        return MarginalDensity("kde", _kde_logpdf(y, bw), bandwidth=bw)
    if mode == "empirical_pmf":
        values, counts = np.unique(y, return_counts=True)
        if values.size > max(2, y.size // 2):
            raise InvalidInputError("empirical_pmf requires discrete responses (few distinct values)")
        logp = np.log(counts / y.size)

        def logpdf(v):
            v = np.atleast_1d(np.asarray(v, dtype=float))
            idx = np.clip(np.searchsorted(values, v), 0, values.size - 1)
            return np.where(values[idx] == v, logp[idx], -np.inf)

        return MarginalDensity("empirical_pmf", logpdf)
    if mode == "integrated":
        if theta is None or X is None:
            raise InvalidInputError("integrated marginal needs theta and the outcome design X")
        return MarginalDensity("integrated", integrated_logpdf(np.asarray(X, dtype=float), theta))
    raise InvalidInputError(f"unknown marginal mode {mode!r}; expected one of {MARGINAL_MODES}")


@dataclass
class EmConfig:
    """Settings shared by the EM fitters.

    ``marginal`` is a mode name or a ready :class:`MarginalDensity`.  The
    last four fields are only used by :func:`linkadjust.extended.fit_extended`.
    """

    max_iter: int = 500
    tol: float = 1e-8
    theta_init: OutcomeParams | None = None
    gamma_init: MismatchParams | None = None
    marginal: str | MarginalDensity = "kde"
    constraint: MismatchRateConstraint | None = None
    n_max: int = 20_000
    restarts: int = 2
    warm_start_iter: int = 10
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise InvalidInputError("max_iter must be at least 1")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")


def ols(X, y):
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesignError("outcome design matrix is rank deficient")
    return beta


def sigma_floor(y):
    sd = float(np.std(y))
    return 1e-6 * sd if sd > 0 else 1e-12


def initial_params(data: LinkedDataset, config: EmConfig):
    """OLS for theta, intercept-only ``h = 0.95`` for gamma unless supplied."""
    if config.theta_init is not None:
        theta = config.theta_init
    else:
        beta = ols(data.X, data.y)
        resid = data.y - data.X @ beta
        theta = OutcomeParams(beta, max(math.sqrt(resid @ resid / data.n), sigma_floor(data.y)))
    if config.gamma_init is not None:
        gamma = config.gamma_init.gamma.copy()
    else:
        gamma = np.zeros(data.q)
        gamma[0] = math.log(DEFAULT_INIT_CORRECT / (1 - DEFAULT_INIT_CORRECT))
    if config.constraint is not None:
        gamma = make_feasible(gamma, data.Z.mean(axis=0), config.constraint.b)
    return theta, MismatchParams(gamma, config.constraint)


def _posterior_mismatch(log_fyx, log_fy, log_h, log_1mh):
    a = log_fyx + log_h
    b = log_fy + log_1mh
    bad = np.flatnonzero(np.isneginf(a) & np.isneginf(b))
    if bad.size:
        raise DegenerateDensityError(bad[0])
    with np.errstate(invalid="ignore"):
        return np.exp(b - np.logaddexp(a, b))


def plain_estep(data: LinkedDataset, theta: OutcomeParams, gamma: MismatchParams, f_y) -> np.ndarray:
    """Posterior mismatch probabilities ``P(m_i = 1 | x_i, y_i, z_i)``.

    ``f_y`` is a :class:`MarginalDensity` or precomputed ``log f(y_i)``.
    """
    log_fy = f_y.logpdf(data.y) if isinstance(f_y, MarginalDensity) else np.asarray(f_y, dtype=float)
    log_fyx = gaussian_logpdf(data.y, data.X @ theta.beta, theta.sigma)
    log_h, log_1mh = log_h_terms(data.Z, gamma.gamma)
    return _posterior_mismatch(log_fyx, log_fy, log_h, log_1mh)


def plain_mstep_theta(data: LinkedDataset, m_hat, floor=None) -> OutcomeParams:
    """Weighted least squares with weights ``1 - m_hat``."""
    w = 1.0 - np.asarray(m_hat, dtype=float)
    if w.sum() <= data.p:
        raise DegenerateDataError("total correct-match mass does not exceed the number of coefficients")
    sw = np.sqrt(w)
    beta, _, rank, _ = np.linalg.lstsq(data.X * sw[:, None], data.y * sw, rcond=None)
    if rank < data.p:
        raise SingularDesignError("weighted outcome design is rank deficient")
    resid = data.y - data.X @ beta
    sigma = math.sqrt(w @ (resid * resid) / w.sum())
    floor = sigma_floor(data.y) if floor is None else floor
    return OutcomeParams(beta, max(sigma, floor))


def plain_mstep_gamma(data: LinkedDataset, m_hat, constraint=None, gamma_init=None, diagnostics=None):
    """Fit the logistic correct-match model to the targets ``1 - m_hat``."""
    m_hat = np.asarray(m_hat, dtype=float)
    if np.any((m_hat < 0) | (m_hat > 1)):
        raise InvalidInputError("m_hat must lie in [0, 1]")
    g0 = None if gamma_init is None else getattr(gamma_init, "gamma", gamma_init)
    gamma = fit_weighted_logistic(data.Z, 1.0 - m_hat, g0, constraint, diagnostics)
    return MismatchParams(gamma, constraint)


def plain_composite_loglik(data: LinkedDataset, theta, gamma, log_fy):
    """Per-observation log mixture densities ``log{h f(y|x) + (1-h) f(y)}``."""
    log_fyx = gaussian_logpdf(data.y, data.X @ theta.beta, theta.sigma)
    log_h, log_1mh = log_h_terms(data.Z, gamma.gamma)
    return np.logaddexp(log_fyx + log_h, log_fy + log_1mh)


def _resolve_marginal(data, config, theta):
    if isinstance(config.marginal, MarginalDensity):
        return config.marginal
    return estimate_marginal(data.y, config.marginal, theta=theta, X=data.X)


def _converged(prev, cur, tol):
    return abs(cur - prev) <= tol * max(1.0, abs(prev))


def fit_plain(data: LinkedDataset, config: EmConfig | None = None, *, inference=True, level=0.95,
              method="plain") -> FitResult:
    """EM for the mixture with a marginal-density mismatch component."""
    config = config or EmConfig()
    diagnostics = {"marginal": getattr(config.marginal, "mode", config.marginal), "theta_frozen": 0}
    theta, gamma = initial_params(data, config)
    marginal = _resolve_marginal(data, config, theta)
    integrated = marginal.mode == "integrated" and not isinstance(config.marginal, MarginalDensity)
    log_fy = marginal.logpdf(data.y)
    floor = sigma_floor(data.y)

    trace = [float(plain_composite_loglik(data, theta, gamma, log_fy).sum())]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        m_hat = plain_estep(data, theta, gamma, log_fy)
        if (1.0 - m_hat).sum() > data.p:
            theta = plain_mstep_theta(data, m_hat, floor)
        else:
            diagnostics["theta_frozen"] += 1
        old_q = logistic_objective(data.Z, 1.0 - m_hat, gamma.gamma)
        new_gamma = plain_mstep_gamma(data, m_hat, config.constraint, gamma, diagnostics)
        if logistic_objective(data.Z, 1.0 - m_hat, new_gamma.gamma) >= old_q - 1e-12 * max(1.0, abs(old_q)):
            gamma = new_gamma
        if integrated:
            marginal = estimate_marginal(data.y, "integrated", theta=theta, X=data.X)
            log_fy = marginal.logpdf(data.y)
        ll = float(plain_composite_loglik(data, theta, gamma, log_fy).sum())
        if not integrated and ll < trace[-1] - 1e-6:
            diagnostics["monotonicity_violation"] = max(diagnostics.get("monotonicity_violation", 0.0), trace[-1] - ll)
            warnings.warn(f"EM log-likelihood decreased by {trace[-1] - ll:.3g}", LinkageWarning, stacklevel=2)
        trace.append(ll)
        if _converged(trace[-2], ll, config.tol):
            converged = True
            break

    m_hat = plain_estep(data, theta, gamma, log_fy)
    result = FitResult(
        method=method,
        theta=theta,
        gamma=gamma,
        posterior_correct=1.0 - m_hat,
        loglik_trace=np.asarray(trace),
        iterations=it,
        converged=converged,
        names=param_names(data.x_names, data.z_names),
        diagnostics=diagnostics,
    )
    if np.any(np.abs(gamma.gamma) >= GAMMA_CLIP):
        diagnostics["gamma_at_bound"] = True
    if inference:
        from .inference import attach_inference

        attach_inference(result, data, kind="plain", marginal=marginal, level=level)
    return result


def plain_objective(data: LinkedDataset, marginal: MarginalDensity):
    """Per-observation negative composite log-likelihood as a function of
    the packed vector ``(beta, log sigma, gamma)``."""
    p = data.p
    fixed_log_fy = None if marginal.mode == "integrated" else marginal.logpdf(data.y)

    def contributions(vec):
        vec = np.asarray(vec, dtype=float)
        beta, log_sigma, g = vec[:p], vec[p], vec[p + 1 :]
        sigma = math.exp(log_sigma)
        mu = data.X @ beta
        if fixed_log_fy is None:
            log_fy = logsumexp(gaussian_logpdf(data.y[:, None], mu[None, :], sigma), axis=1) - math.log(data.n)
        else:
            log_fy = fixed_log_fy
        log_fyx = gaussian_logpdf(data.y, mu, sigma)
        log_h, log_1mh = log_h_terms(data.Z, g)
        return -np.logaddexp(log_fyx + log_h, log_fy + log_1mh)

    return contributions


__all__ = [
    "EmConfig",
    "MarginalDensity",
    "estimate_marginal",
    "fit_plain",
    "plain_estep",
    "plain_mstep_gamma",
    "plain_mstep_theta",
    "plain_composite_loglik",
    "plain_objective",
]
