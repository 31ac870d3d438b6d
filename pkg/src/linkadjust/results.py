"""Result container shared by every estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import MismatchParams, OutcomeParams


def param_names(x_names, z_names):
    return [f"beta[{n}]" for n in x_names] + ["sigma"] + [f"gamma[{n}]" for n in z_names]


def pack_params(theta: OutcomeParams, gamma: MismatchParams | None):
    """Flatten to the inference vector ``(beta, log sigma, gamma)``."""
    g = np.empty(0) if gamma is None else gamma.gamma
    return np.concatenate([theta.beta, [math.log(theta.sigma)], g])


def unpack_params(vec, p):
    vec = np.asarray(vec, dtype=float)
    return vec[:p], math.exp(vec[p]), vec[p + 1 :]


@dataclass
class FitResult:
    """Estimates and fit metadata.

    ``cov`` and ``se`` refer to the vector ``(beta, log sigma, gamma)``.
    ``posterior_correct[i]`` is the fitted ``P(m_i = 0 | data)``.
    """

    method: str
    theta: OutcomeParams
    gamma: MismatchParams | None
    posterior_correct: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    names: list[str]
    cov: np.ndarray | None = None
    se: np.ndarray | None = None
    inference: object | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def params(self):
        return pack_params(self.theta, self.gamma)

    @property
    def loglik(self):
        return float(self.loglik_trace[-1]) if len(self.loglik_trace) else math.nan

    def estimates(self):
        """Mapping ``name -> {est, se, ci_lo, ci_hi}`` on the natural scale."""
        est = self.params.copy()
        p = self.theta.beta.size
        est[p] = self.theta.sigma
        out = {}
        inf = self.inference
        for k, name in enumerate(self.names):
            row = {"est": float(est[k]), "se": None, "ci_lo": None, "ci_hi": None}
            if self.se is not None:
                se = float(self.se[k])
                # se of sigma on the raw scale by the delta method
                row["se"] = se * self.theta.sigma if k == p else se
            if inf is not None:
                row["ci_lo"] = float(inf.ci_lower[k])
                row["ci_hi"] = float(inf.ci_upper[k])
            out[name] = row
        return out
