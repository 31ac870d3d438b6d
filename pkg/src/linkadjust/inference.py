"""Sandwich covariance and Wald intervals for composite-likelihood fits.

With ``l = -log L`` split into per-observation terms ``l_i``, the
covariance of the packed estimate ``(beta, log sigma, gamma)`` is
estimated as ``H^-1 J H^-1 / n`` where ``H`` is the Hessian of ``l / n``
and ``J`` the mean outer product of the per-observation scores.  All
derivatives are finite differences.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidInputError, LinkageWarning, SingularInformationError

EPS = np.finfo(float).eps
MAX_CONDITION = 1e12


@dataclass
class InferenceResult:
    """Covariance, standard errors and Wald intervals.

    ``cov`` and ``se`` refer to the packed vector with ``log sigma``;
    ``ci_lower``/``ci_upper`` are on the natural scale (sigma interval
    obtained by exponentiating the log-scale one).  ``sigma_ci_raw`` is the
    symmetric raw-scale alternative.
    """

    cov: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    level: float | None = None
    sigma_ci_raw: tuple | None = None
    diagnostics: dict = field(default_factory=dict)


def _step(x, power):
    return EPS**power * max(1.0, abs(x))


def score_matrix(contributions, vec, free=None):
    """Central-difference Jacobian of the per-observation contributions.

    Returns an ``(n, k)`` array for the ``k`` free coordinates.
    """
    vec = np.asarray(vec, dtype=float)
    free = np.arange(vec.size) if free is None else np.asarray(free)
    cols = []
    for k in free:
        h = _step(vec[k], 1.0 / 3.0)
        for _ in range(6):
            e = np.zeros_like(vec)
            e[k] = h
            up, dn = contributions(vec + e), contributions(vec - e)
            if np.all(np.isfinite(up)) and np.all(np.isfinite(dn)):
                break
            h *= 0.5
        else:
            raise InvalidInputError(f"objective is not finite near coordinate {k}")
        cols.append((up - dn) / (2.0 * h))
    return np.column_stack(cols)


def per_observation_score(data, params, i, kind, marginal=None):
    """Gradient of the i-th negative composite log-likelihood term."""
    contributions = make_objective(data, kind, marginal)
    vec = getattr(params, "params", params)
    return score_matrix(contributions, vec)[i]


def hessian_fd(fun, x, stencil=3):
    """Finite-difference Hessian of a scalar function.

    ``stencil=3`` uses the standard central second differences,
    ``stencil=5`` the fourth-order five-point formulas.
    """
    x = np.asarray(x, dtype=float)
    k = x.size
    H = np.empty((k, k))
    if stencil == 3:
        hs = np.array([_step(v, 0.25) for v in x])
        f0 = fun(x)
        for a in range(k):
            ea = np.zeros(k)
            ea[a] = hs[a]
            H[a, a] = (fun(x + ea) - 2.0 * f0 + fun(x - ea)) / hs[a] ** 2
            for b in range(a):
                eb = np.zeros(k)
                eb[b] = hs[b]
                val = sum(sa * sb * fun(x + sa * ea + sb * eb) for sa in (1, -1) for sb in (1, -1))
                H[a, b] = H[b, a] = val / (4.0 * hs[a] * hs[b])
        return H
    if stencil == 5:
        hs = np.array([_step(v, 1.0 / 6.0) for v in x])
        f0 = fun(x)
        w1 = {2: -1.0, 1: 8.0, -1: -8.0, -2: 1.0}
        for a in range(k):
            ea = np.zeros(k)
            ea[a] = hs[a]
            H[a, a] = (
                -fun(x + 2 * ea) + 16 * fun(x + ea) - 30 * f0 + 16 * fun(x - ea) - fun(x - 2 * ea)
            ) / (12.0 * hs[a] ** 2)
            for b in range(a):
                eb = np.zeros(k)
                eb[b] = hs[b]
                val = 0.0
                for i, wi in w1.items():
                    for j, wj in w1.items():
                        val += wi * wj * fun(x + i * ea + j * eb)
                H[a, b] = H[b, a] = val / (144.0 * hs[a] * hs[b])
        return H
    raise InvalidInputError("stencil must be 3 or 5")


def make_objective(data, kind, marginal=None):
    if kind == "plain":
        from .plain import estimate_marginal, plain_objective

        if marginal is None:
            marginal = estimate_marginal(data.y, "kde")
        return plain_objective(data, marginal)
    if kind == "extended":
        from .extended import extended_objective

        return extended_objective(data)
    raise InvalidInputError(f"unknown kind {kind!r}; expected 'plain' or 'extended'")


def sandwich_from_objective(contributions, vec, free=None):
    """Sandwich covariance of the free coordinates of ``vec``."""
    vec = np.asarray(vec, dtype=float)
    free = np.arange(vec.size) if free is None else np.asarray(free)
    scores = score_matrix(contributions, vec, free)
    n = scores.shape[0]

    def total(sub):
        full = vec.copy()
        full[free] = sub
        return float(contributions(full).sum())

    H = hessian_fd(total, vec[free]) / n
    J = scores.T @ scores / n
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularInformationError(cond)
    Hinv = np.linalg.inv(H)
    cov = Hinv @ J @ Hinv / n
    cov = 0.5 * (cov + cov.T)
    diagnostics = {"hessian_condition": float(cond), "mean_score_norm": float(np.linalg.norm(scores.mean(axis=0)))}
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < 0:
        shift = float(-vals.min())
        if shift > 1e-8:
            diagnostics["psd_repair"] = shift
            warnings.warn(f"sandwich covariance was indefinite; clipped eigenvalue {-shift:.3g}", LinkageWarning,
                          stacklevel=3)
        cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return cov, diagnostics


def sandwich_covariance(data, params, kind, *, marginal=None, free=None, level=0.95) -> InferenceResult:
    """Sandwich covariance for a plain or extended fit.

    ``params`` is a :class:`~linkadjust.results.FitResult` or a packed
    vector.  ``free`` selects coordinates to treat as estimated (the rest
    are held fixed); by default all are free.
    """
    vec = np.asarray(getattr(params, "params", params), dtype=float)
    contributions = make_objective(data, kind, marginal)
    idx = np.arange(vec.size) if free is None else np.asarray(free)
    sub_cov, diagnostics = sandwich_from_objective(contributions, vec, idx)
    cov = np.zeros((vec.size, vec.size))
    cov[np.ix_(idx, idx)] = sub_cov
    res = InferenceResult(cov=cov, se=np.sqrt(np.clip(np.diag(cov), 0.0, None)), diagnostics=diagnostics)
    return wald_intervals(vec, res, level, sigma_index=data.p)


def wald_intervals(params, result: InferenceResult, level=0.95, sigma_index=None) -> InferenceResult:
    """Normal-quantile intervals ``est +/- z se``.

    ``params`` is the packed vector; when ``sigma_index`` is given that
    coordinate holds ``log sigma`` and its interval is exponentiated.
    """
    if not 0.0 < level < 1.0:
        raise InvalidInputError(f"level must lie in (0, 1), got {level}")
    est = np.asarray(getattr(params, "params", params), dtype=float)
    zq = norm.ppf(0.5 * (1.0 + level))
    lo = est - zq * result.se
    hi = est + zq * result.se
    sigma_raw = None
    if sigma_index is not None:
        lo[sigma_index] = math.exp(lo[sigma_index])
        hi[sigma_index] = math.exp(hi[sigma_index])
        sig = math.exp(est[sigma_index])
        se_raw = sig * result.se[sigma_index]
        sigma_raw = (sig - zq * se_raw, sig + zq * se_raw)
    zero = np.flatnonzero(result.se == 0)
    diagnostics = dict(result.diagnostics)
    if zero.size:
        diagnostics["zero_width"] = zero.tolist()
    return InferenceResult(
        cov=result.cov,
        se=result.se,
        ci_lower=lo,
        ci_upper=hi,
        level=level,
        sigma_ci_raw=sigma_raw,
        diagnostics=diagnostics,
    )


def attach_inference(result, data, kind, marginal=None, level=0.95):
    """Fill ``cov``, ``se`` and ``inference`` of a FitResult in place.

    Failures are recorded in ``result.diagnostics`` instead of raised.
    """
    try:
        inf = sandwich_covariance(data, result.params, kind, marginal=marginal, level=level)
    except (SingularInformationError, InvalidInputError, np.linalg.LinAlgError) as exc:
        result.diagnostics["inference_error"] = str(exc)
        return result
    result.inference = inf
    result.cov = inf.cov
    result.se = inf.se
    result.diagnostics.update({f"inference_{k}": v for k, v in inf.diagnostics.items()})
    return result
