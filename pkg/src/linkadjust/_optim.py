"""Optimizers for the mismatch-model parameter.

Two flavours are needed: a Newton solver for the concave weighted
logistic objective of the plain M-step, and a derivative-free simplex
with a quasi-Newton polish for the pairwise objective of the extended
M-step.  Both support the linear mismatch-rate constraint through a
log barrier.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .errors import LinkageWarning

GAMMA_CLIP = 30.0
BARRIER_ROUNDS = 5
BARRIER_DECAY = 0.2
BARRIER_MU0 = 1.0
FEASIBLE_MARGIN = 1e-3


def make_feasible(gamma, zbar, b, margin=FEASIBLE_MARGIN):
    """Shift the intercept so that ``b + zbar @ gamma >= margin``.

    ``zbar[0]`` is 1 because of the intercept column, so moving the
    intercept moves the slack one-for-one.
    """
    gamma = np.array(gamma, dtype=float)
    slack = b + zbar @ gamma
    if slack < margin:
        gamma[0] += margin - slack
    return gamma


def _clip(gamma, diagnostics=None):
    if np.any(np.abs(gamma) > GAMMA_CLIP):
        if diagnostics is not None:
            diagnostics["gamma_clipped"] = diagnostics.get("gamma_clipped", 0) + 1
        warnings.warn(
            f"mismatch-model coefficients exceed {GAMMA_CLIP:g} in magnitude (separation); clipped",
            LinkageWarning,
            stacklevel=3,
        )
        gamma = np.clip(gamma, -GAMMA_CLIP, GAMMA_CLIP)
    return gamma


def logistic_objective(Z, target, gamma):
    """Sum of ``t log h + (1 - t) log(1 - h)`` with ``h = expit(Z gamma)``."""
    eta = Z @ gamma
    return float(target @ log_expit(eta) + (1.0 - target) @ log_expit(-eta))


def _newton(Z, target, gamma, zbar=None, b=None, mu=0.0, max_iter=100, tol=1e-10):
    """Damped Newton ascent on the (optionally barrier-augmented) objective."""

    def value(g):
        v = logistic_objective(Z, target, g)
        if mu > 0:
            s = b + zbar @ g
            if s <= 0:
                return -math.inf
            v += mu * math.log(s)
        return v

    f = value(gamma)
    for _ in range(max_iter):
        eta = Z @ gamma
        h = expit(eta)
        grad = Z.T @ (target - h)
        W = h * (1.0 - h)
        hess = (Z * W[:, None]).T @ Z
        if mu > 0:
            s = b + zbar @ gamma
            grad = grad + mu * zbar / s
            hess = hess + mu * np.outer(zbar, zbar) / s**2
        hess += 1e-12 * np.eye(len(gamma))
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = gamma + t * step
            if np.all(np.abs(cand) <= 2 * GAMMA_CLIP):
                fc = value(cand)
                if fc >= f - 1e-12 * max(1.0, abs(f)):
                    break
            t *= 0.5
        else:
            break
        gamma, f_old, f = cand, f, fc
        if np.max(np.abs(t * step)) < tol or abs(f - f_old) <= 1e-15 * max(1.0, abs(f)):
            break
        if np.any(np.abs(gamma) > GAMMA_CLIP):
            break
    return gamma


def fit_weighted_logistic(Z, target, gamma0=None, constraint=None, diagnostics=None):
    """Maximize the weighted logistic objective, optionally rate-constrained.

    ``target`` holds the (fractional) correct-match indicators ``1 - m_hat``.
    """
    Z = np.asarray(Z, dtype=float)
    target = np.asarray(target, dtype=float)
    q = Z.shape[1]
    gamma = np.zeros(q) if gamma0 is None else np.clip(np.array(gamma0, dtype=float), -GAMMA_CLIP, GAMMA_CLIP)
    free = _newton(Z, target, gamma)
    if constraint is None:
        return _clip(free, diagnostics)
    zbar = Z.mean(axis=0)
    b = constraint.b
    if b + zbar @ free >= 0:
        return _clip(free, diagnostics)
    gamma = make_feasible(gamma, zbar, b)
    mu = BARRIER_MU0
    for _ in range(BARRIER_ROUNDS):
        gamma = _newton(Z, target, gamma, zbar=zbar, b=b, mu=mu)
        mu *= BARRIER_DECAY
    if diagnostics is not None:
        diagnostics["constraint_active"] = True
    return _clip(gamma, diagnostics)


def central_gradient(fun, x, rel_step=None):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    if rel_step is None:
        rel_step = np.finfo(float).eps ** (1.0 / 3.0)
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def simplex_minimize(fun, x0, rng, restarts=2, perturbation=0.5, bound=GAMMA_CLIP, diagnostics=None):
    """Nelder-Mead from ``x0`` plus random restarts, then a quasi-Newton polish.

    Returns the best point found; never worse than ``x0``.
    """
    x0 = np.clip(np.asarray(x0, dtype=float), -bound, bound)
    dim = x0.size
    bounds = [(-bound, bound)] * dim

    def safe(x):
        v = fun(x)
        return v if np.isfinite(v) else np.inf

    best_x, best_f = x0, safe(x0)
    starts = [x0] + [np.clip(x0 + perturbation * rng.standard_normal(dim), -bound, bound) for _ in range(restarts)]
    failures = 0
    for start in starts:
        # scipy's default coefficients are reflection 1, expansion 2, contraction 0.5, shrink 0.5
        res = minimize(
            safe,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 400 * dim, "maxfev": 600 * dim},
        )
        if not res.success:
            failures += 1
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    res = minimize(
        safe,
        best_x,
        method="L-BFGS-B",
        jac=lambda x: central_gradient(safe, x),
        bounds=bounds,
        options={"gtol": 1e-9, "ftol": 1e-15, "maxiter": 200},
    )
    if np.isfinite(res.fun) and res.fun <= best_f:
        best_x, best_f = res.x, res.fun
    if failures == len(starts) and diagnostics is not None:
        diagnostics["gamma_optimizer_failed"] = diagnostics.get("gamma_optimizer_failed", 0) + 1
        warnings.warn("simplex search for the mismatch model did not converge", LinkageWarning, stacklevel=3)
    return np.asarray(best_x), float(best_f)
