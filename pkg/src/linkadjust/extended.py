"""Mixture fit without the strongly non-informative linkage assumption.

The mismatch component is no longer the marginal density of y but the
covariate-weighted average

    f(y_i | m=1) = sum_j w_j f(y_i | x_j; theta),   w_j = (1 - h_j) / S,

with ``S = sum_k (1 - h_k)``.  Folding the correct-match component into
the sum gives ``n`` mixture components per observation with weights

    omega_ii = h_i + (1 - h_i)^2 / S,
    omega_ij = (1 - h_i)(1 - h_j) / S     (j != i),

and every row of ``omega`` sums to one.  EM runs over the ``n x n``
responsibilities, but the M-steps only need a handful of row and column
reductions, so the fitter below never stores the responsibilities
themselves; it works from the row-rescaled density matrix.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit, logsumexp

from ._optim import GAMMA_CLIP, make_feasible, simplex_minimize
from .errors import (
    DegenerateDensityError,
    InvalidInputError,
    LinkageWarning,
    NoMismatchMassError,
    SingularDesignError,
)
from .model import LOG_SQRT_2PI, LinkedDataset, MismatchParams, OutcomeParams, gaussian_logpdf, log_h_terms
from .plain import EmConfig, fit_plain, initial_params, sigma_floor
from .results import FitResult, param_names

MIN_MISMATCH_MASS = 1e-12


@dataclass
class PairwiseWeights:
    """Mixture weights ``omega`` in compact form.

    Only the diagonal is stored; ``omega[i, j] = (1-h_i)(1-h_j)/S`` off it.
    """

    h: np.ndarray
    S: float
    omega_diag: np.ndarray
    one_minus_h: np.ndarray | None = None

    def __post_init__(self):
        # 1 - h by subtraction loses digits when h is close to 1
        if self.one_minus_h is None:
            self.one_minus_h = 1.0 - self.h

    def offdiag(self, i, j):
        return self.one_minus_h[i] * self.one_minus_h[j] / self.S

    def dense(self):
        u = self.one_minus_h
        W = np.outer(u, u) / self.S
        np.fill_diagonal(W, self.omega_diag)
        return W


@dataclass
class Responsibilities:
    """Posterior component memberships; ``L[i, j] = P(y_i drawn from row j)``."""

    L: np.ndarray

    def reduce(self):
        return reduce_responsibilities(self.L)


def _check_mass(one_minus_h):
    S = float(one_minus_h.sum())
    if not S > MIN_MISMATCH_MASS:
        raise NoMismatchMassError("all links are certain matches; f(y | m=1) is unidentified")
    return S


def mismatch_source_weights(Z, gamma):
    """Probability that a mismatched response came from row j, ``(1 - h_j) / S``.

    ``lemma1_weights`` is an alias kept for the original operation name.
    """
    _, log_1mh = log_h_terms(Z, gamma)
    u = np.exp(log_1mh)
    S = _check_mass(u)
    return u / S


lemma1_weights = mismatch_source_weights


def pairwise_weights(Z, gamma) -> PairwiseWeights:
    log_h, log_1mh = log_h_terms(Z, gamma)
    h = np.exp(log_h)
    u = np.exp(log_1mh)
    S = _check_mass(u)
    return PairwiseWeights(h=h, S=S, omega_diag=h + u * u / S, one_minus_h=u)


def _log_density_matrix(data, theta):
    mu = data.X @ theta.beta
    return gaussian_logpdf(data.y[:, None], mu[None, :], theta.sigma)


def extended_responsibilities(data: LinkedDataset, theta: OutcomeParams, gamma) -> Responsibilities:
    """Dense ``n x n`` responsibilities, normalised row by row in log space."""
    g = getattr(gamma, "gamma", gamma)
    w = pairwise_weights(data.Z, g)
    with np.errstate(divide="ignore"):
        log_w = np.log(w.dense())
    A = log_w + _log_density_matrix(data, theta)
    norm = logsumexp(A, axis=1)
    bad = np.flatnonzero(~np.isfinite(norm))
    if bad.size:
        raise DegenerateDensityError(bad[0])
    A -= norm[:, None]
    return Responsibilities(np.exp(A))


def composite_loglik_extended(data: LinkedDataset, theta: OutcomeParams, gamma) -> float:
    """``sum_i log sum_j omega_ij f(y_i | x_j; theta)``."""
    g = getattr(gamma, "gamma", gamma)
    return float(_Kernel(data, cache_size=1).row_loglik(theta.beta, theta.sigma, g).sum())


def extended_mstep_theta(data: LinkedDataset, L) -> OutcomeParams:
    """Maximize ``sum_ij L_ij log f(y_i | x_j; theta)`` via column reductions."""
    L = getattr(L, "L", L)
    colsum = L.sum(axis=0)
    v = L.T @ data.y
    return _theta_from_stats(data, colsum, v)


def _theta_from_stats(data, colsum, v, floor=None):
    X = data.X
    G = (X * colsum[:, None]).T @ X
    rhs = X.T @ v
    try:
        cho = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise SingularDesignError("responsibility-weighted normal equations are singular") from None
    if np.linalg.cond(G) > 1e14:
        raise SingularDesignError("responsibility-weighted normal equations are singular")
    beta = np.linalg.solve(cho.T, np.linalg.solve(cho, rhs))
    mu = X @ beta
    # rows of L sum to one, so the total mass is n
    ss = data.y @ data.y - 2.0 * (mu @ v) + colsum @ (mu * mu)
    sigma2 = max(ss, 0.0) / data.n
    floor = sigma_floor(data.y) if floor is None else floor
    return OutcomeParams(beta, max(math.sqrt(sigma2), floor))


def reduce_responsibilities(L):
    """Return ``(d, r, c, T)``: diagonal, off-diagonal row and column sums, total."""
    L = getattr(L, "L", L)
    d = np.diag(L).copy()
    r = L.sum(axis=1) - d
    c = L.sum(axis=0) - d
    return d, r, c, float(r.sum())


def gamma_objective(Z, gamma, stats):
    """``sum_ij L_ij log omega_ij(gamma)`` from the reductions of L in O(n)."""
    d, r, c, T = stats
    eta = Z @ gamma
    log_h = log_expit(eta)
    log_1mh = log_expit(-eta)
    top = log_1mh.max()
    log_S = top + math.log(np.exp(log_1mh - top).sum())
    log_wii = np.logaddexp(log_h, 2.0 * log_1mh - log_S)
    return float(d @ log_wii + (r + c) @ log_1mh - T * log_S)


def extended_mstep_gamma(data: LinkedDataset, L, gamma_init, constraint=None, *, rng=None,
                         restarts=2, diagnostics=None) -> MismatchParams:
    """Maximize the pairwise-weight term of the expected complete log-likelihood.

    ``L`` may be :class:`Responsibilities`, a dense array, or the tuple
    returned by :func:`reduce_responsibilities`.
    """
    stats = L if isinstance(L, tuple) else reduce_responsibilities(L)
    Z = data.Z
    g0 = np.asarray(getattr(gamma_init, "gamma", gamma_init), dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng

    def negobj(g):
        return -gamma_objective(Z, g, stats)

    best, _ = simplex_minimize(negobj, g0, rng, restarts=restarts, diagnostics=diagnostics)
    if constraint is not None:
        zbar = Z.mean(axis=0)
        b = constraint.b
        if b + zbar @ best < 0:
            best = _barrier_search(negobj, make_feasible(g0, zbar, b), zbar, b, rng, diagnostics)
            if diagnostics is not None:
                diagnostics["constraint_active"] = True
    if np.any(np.abs(best) >= GAMMA_CLIP - 1e-9):
        if diagnostics is not None:
            diagnostics["gamma_clipped"] = diagnostics.get("gamma_clipped", 0) + 1
        warnings.warn(f"mismatch-model coefficients reached the bound {GAMMA_CLIP:g}", LinkageWarning, stacklevel=2)
    return MismatchParams(best, constraint)


def _barrier_search(negobj, g, zbar, b, rng, diagnostics):
    from ._optim import BARRIER_DECAY, BARRIER_MU0, BARRIER_ROUNDS

    mu = BARRIER_MU0
    for _ in range(BARRIER_ROUNDS):

        def f(x, mu=mu):
            s = b + zbar @ x
            return math.inf if s <= 0 else negobj(x) - mu * math.log(s)

        g, _ = simplex_minimize(f, g, rng, restarts=0, diagnostics=diagnostics)
        mu *= BARRIER_DECAY
    return g


class _Kernel:
    """Row-rescaled density matrix ``F[i, j] = f(y_i | x_j) / max_j f(y_i | x_j)``.

    ``log f(y_i | x_j) = s_i + log F[i, j]``.  Matrices are cached by
    ``theta`` so that perturbing only ``gamma`` costs O(n^2) multiply-adds
    and no exponentials.
    """

    def __init__(self, data: LinkedDataset, cache_size=4):
        self.data = data
        self.cache_size = cache_size
        self._cache = OrderedDict()

    def density(self, beta, sigma):
        key = (np.asarray(beta, dtype=float).tobytes(), float(sigma))
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        y = self.data.y
        mu = self.data.X @ beta
        order = np.sort(mu)
        pos = np.clip(np.searchsorted(order, y), 1, order.size - 1) if order.size > 1 else np.zeros(y.size, int)
        lo = y - order[pos - 1] if order.size > 1 else y - order[0]
        hi = y - order[pos]
        dmin2 = np.minimum(lo * lo, hi * hi)
        F = np.subtract.outer(y, mu)
        np.square(F, out=F)
        F -= dmin2[:, None]
        F *= -0.5 / (sigma * sigma)
        np.exp(F, out=F)
        s = -0.5 * dmin2 / (sigma * sigma) - math.log(sigma) - LOG_SQRT_2PI
        entry = (F, s)
        self._cache[key] = entry
        while len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return entry

    def mixture(self, beta, sigma, gamma):
        """Return ``(F, s, h, w, D)`` with ``sum_j omega_ij f_ij = exp(s_i) D_i``."""
        F, s = self.density(beta, sigma)
        log_h, log_1mh = log_h_terms(self.data.Z, gamma)
        h = np.exp(log_h)
        u = np.exp(log_1mh)
        S = _check_mass(u)
        w = u / S
        D = h * np.diagonal(F) + u * (F @ w)
        bad = np.flatnonzero(~(D > 0))
        if bad.size:
            raise DegenerateDensityError(bad[0])
        return F, s, h, w, D

    def row_loglik(self, beta, sigma, gamma):
        _, s, _, _, D = self.mixture(beta, sigma, gamma)
        return s + np.log(D)

    def estep(self, beta, sigma, gamma):
        """Log-likelihood and the responsibility reductions needed by the M-steps."""
        F, s, h, w, D = self.mixture(beta, sigma, gamma)
        y = self.data.y
        a = (1.0 - h) / D
        Fd = np.diagonal(F)
        e = h * Fd / D  # extra diagonal mass from the correct-match component
        Ft = F.T @ np.column_stack([a, a * y])
        colsum = w * Ft[:, 0] + e
        v = w * Ft[:, 1] + e * y
        d = a * w * Fd + e
        return {
            "loglik": float((s + np.log(D)).sum()),
            "colsum": colsum,
            "v": v,
            "d": d,
            "posterior_correct": e,
        }


def extended_objective(data: LinkedDataset):
    """Per-observation negative composite log-likelihood of the packed
    vector ``(beta, log sigma, gamma)``; reuses density matrices across
    calls that share ``(beta, sigma)``."""
    p = data.p
    kernel = _Kernel(data, cache_size=4 if data.n <= 4000 else 1)

    def contributions(vec):
        vec = np.asarray(vec, dtype=float)
        return -kernel.row_loglik(vec[:p], math.exp(vec[p]), vec[p + 1 :])

    return contributions


def _warm_start(data, config, diagnostics):
    if config.theta_init is not None and config.gamma_init is not None:
        return initial_params(data, config)
    try:
        cfg = EmConfig(
            max_iter=max(1, config.warm_start_iter),
            tol=config.tol,
            theta_init=config.theta_init,
            gamma_init=config.gamma_init,
            constraint=config.constraint,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinkageWarning)
            res = fit_plain(data, cfg, inference=False)
        return res.theta, res.gamma
    except Exception as exc:  # noqa: BLE001 - fall back to the plain initial values
        diagnostics["warm_start_failed"] = repr(exc)
        return initial_params(data, config)


def fit_extended(data: LinkedDataset, config: EmConfig | None = None, *, inference=True, level=0.95,
                 method="extended") -> FitResult:
    """EM for the pairwise-weight mixture.

    Warm-started from a short plain fit; iterates until the relative change
    of the composite log-likelihood drops below ``config.tol``.
    """
    config = config or EmConfig()
    if data.n > config.n_max:
        raise InvalidInputError(
            f"n = {data.n} exceeds the dense-responsibility limit n_max = {config.n_max}"
        )
    diagnostics = {}
    theta, gamma = _warm_start(data, config, diagnostics)
    gamma = MismatchParams(gamma.gamma, config.constraint)
    rng = np.random.default_rng(config.seed)
    kernel = _Kernel(data, cache_size=1)
    floor = sigma_floor(data.y)

    trace = []
    converged = False
    it = 0
    stats = kernel.estep(theta.beta, theta.sigma, gamma.gamma)
    trace.append(stats["loglik"])
    for it in range(1, config.max_iter + 1):
        theta = _theta_from_stats(data, stats["colsum"], stats["v"], floor)
        d = stats["d"]
        r = 1.0 - d
        c = stats["colsum"] - d
        red = (d, r, c, float(r.sum()))
        old_q = gamma_objective(data.Z, gamma.gamma, red)
        new_gamma = extended_mstep_gamma(
            data,
            red,
            gamma,
            config.constraint,
            rng=rng,
            # later steps start next to the previous optimum; restarts there rarely pay off
            restarts=config.restarts if it == 1 else 0,
            diagnostics=diagnostics,
        )
        if gamma_objective(data.Z, new_gamma.gamma, red) >= old_q:
            gamma = new_gamma
        stats = kernel.estep(theta.beta, theta.sigma, gamma.gamma)
        ll = stats["loglik"]
        if ll < trace[-1] - 1e-6:
            diagnostics["monotonicity_violation"] = max(diagnostics.get("monotonicity_violation", 0.0), trace[-1] - ll)
            warnings.warn(f"EM log-likelihood decreased by {trace[-1] - ll:.3g}", LinkageWarning, stacklevel=2)
        trace.append(ll)
        if abs(ll - trace[-2]) <= config.tol * max(1.0, abs(trace[-2])):
            converged = True
            break

    result = FitResult(
        method=method,
        theta=theta,
        gamma=gamma,
        posterior_correct=stats["posterior_correct"],
        loglik_trace=np.asarray(trace),
        iterations=it,
        converged=converged,
        names=param_names(data.x_names, data.z_names),
        diagnostics=diagnostics,
    )
    if inference:
        from .inference import attach_inference

        attach_inference(result, data, kind="extended", level=level)
    return result
