"""Synthetic linked files with covariate-dependent mismatch error.

Every generator draws clean responses from a Gaussian linear model,
draws mismatch indicators from a logistic correct-match model and then
shuffles the responses of the flagged rows among themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit
from scipy.stats import norm

from .errors import InvalidInputError
from .model import LinkedDataset

SCENARIOS = ("motivating", "overlap1", "overlap2", "overlap3", "ele_blocks", "casestudy")

# block correct-match probabilities of the exchangeable-error design
ELE_BLOCK_PROBS = (0.28, 0.97)
OVERLAP_CORR = -0.8
# synthetic income covariate for the case-study mechanism, in 10k EUR
INCOME_MEDIAN = 1.5
INCOME_LOG_SD = 0.7
CASESTUDY_BETA = (0.3429, 0.8104)
CASESTUDY_SIGMA = 0.3862


@dataclass
class Truth:
    beta: np.ndarray
    sigma: float
    gamma: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.sigma = float(self.sigma)


def _ele_gamma():
    lo, hi = (logit(p) for p in ELE_BLOCK_PROBS)
    g0 = 0.5 * (lo + hi)
    # sum-to-zero coding: logit h = g0 + g1 * (+1 in block 1, -1 in block 2)
    return np.array([g0, lo - g0])


def default_truth(kind) -> Truth:
    if kind == "motivating":
        return Truth([1.0, -1.0], 0.25, [2.5, 4.5])
    if kind in ("overlap1", "overlap2"):
        return Truth([1.0, 2.0, -1.5, 1.0], 0.25, [1.0, -2.5, 1.0])
    if kind == "overlap3":
        return Truth([1.0, 2.0, -1.5, 1.0], 0.25, [1.0, 0.0, 1.0])
    if kind == "ele_blocks":
        return Truth([1.0, -1.0], 0.25, _ele_gamma())
    if kind == "casestudy":
        return Truth(CASESTUDY_BETA, CASESTUDY_SIGMA, [2.0, 3.0])
    raise InvalidInputError(f"unknown scenario {kind!r}; expected one of {SCENARIOS}")


@dataclass
class ScenarioSpec:
    """Scenario name, sample size, seed and (overridable) true parameters."""

    kind: str = "motivating"
    n: int = 1000
    seed: int = 0
    truth: Truth | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise InvalidInputError(f"unknown scenario {self.kind!r}; expected one of {SCENARIOS}")
        if int(self.n) < 10:
            raise InvalidInputError("scenario n must be at least 10")
        self.n = int(self.n)
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if self.truth is None:
            self.truth = default_truth(self.kind)


def replication_rng(seed, r):
    """Independent generator for replication ``r`` of a study seeded by ``seed``.

    Uses numpy's ``SeedSequence`` hashing of ``(seed, r)``, so replication
    ``r`` can be regenerated in isolation.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(r),)))


def shuffle_flagged(y, m, rng, blocks=None):
    """Uniformly permute ``y`` over the rows with ``m == 1`` (within blocks)."""
    y = np.array(y, dtype=float, copy=True)
    m = np.asarray(m).astype(bool)
    groups = [np.ones(y.size, bool)] if blocks is None else [blocks == b for b in np.unique(blocks)]
    for g in groups:
        idx = np.flatnonzero(m & g)
        if idx.size > 1:
            y[idx] = y[rng.permutation(idx)]
    return y


def _draw_mismatch(rng, eta):
    return (rng.random(eta.size) >= expit(eta)).astype(int)


def gen_motivating(spec: ScenarioSpec, rng=None, force_no_mismatch=False):
    """Single predictor, mismatches concentrated at low x.

    With ``spec.options["independent_z"]`` the mismatch model uses a
    standard normal covariate drawn independently of x instead of x itself.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    t = spec.truth
    n = spec.n
    x = rng.standard_normal(n)
    X = np.column_stack([np.ones(n), x])
    y_clean = X @ t.beta + t.sigma * rng.standard_normal(n)
    if spec.options.get("independent_z"):
        Z = np.column_stack([np.ones(n), rng.standard_normal(n)])
        m = _draw_mismatch(rng, Z @ t.gamma)
        names = ["intercept", "z"]
    else:
        Z = X.copy()
        m = _draw_mismatch(rng, X @ t.gamma)
        names = ["intercept", "x"]
    if force_no_mismatch:
        m[:] = 0
    y = shuffle_flagged(y_clean, m, rng)
    data = LinkedDataset(y, X, Z, true_m=m, x_names=["intercept", "x"], z_names=names)
    return data, t


@lru_cache(maxsize=16)
def latent_correlation(target=OVERLAP_CORR, n_sim=200_000, seed=12345):
    """Gaussian-copula correlation giving Pearson ``Corr(x, z) = target``.

    x is uniform on the grid, z = logit(Beta(4.5, 0.5)); solved by bisection
    on a fixed Monte Carlo sample.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n_sim)
    e = rng.standard_normal(n_sim)
    xs = norm.cdf(u)  # uniform margin; affine map to [-3, 3] leaves Pearson unchanged
    zq = np.sort(logit(rng.beta(4.5, 0.5, n_sim)))

    def pearson(rho):
        v = rho * u + math.sqrt(1 - rho * rho) * e
        z = np.empty(n_sim)
        z[np.argsort(v)] = zq
        return np.corrcoef(xs, z)[0, 1]

    lo, hi = -0.999, 0.0
    if target > 0:
        lo, hi = 0.0, 0.999
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if (pearson(mid) - target) * (pearson(lo) - target) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gen_overlap(setting, spec: ScenarioSpec, rng=None):
    """Binary d (upper half of the x grid), grid x, interaction; z = logit(Beta(4.5, 0.5)).

    Settings 1 and 3 correlate x and z through a Gaussian copula; setting 2
    draws z independently of x.
    """
    setting = {"i": 1, "ii": 2, "iii": 3, "I": 1, "II": 2, "III": 3}.get(setting, setting)
    if setting not in (1, 2, 3):
        raise InvalidInputError(f"overlap setting must be 1, 2 or 3, got {setting!r}")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    t = spec.truth
    n = spec.n
    x = np.linspace(-3.0, 3.0, n)
    d = (np.arange(n) >= n // 2).astype(float)
    z_sorted = np.sort(logit(rng.beta(4.5, 0.5, n)))
    if setting == 2:
        z = rng.permutation(z_sorted)
    else:
        rho = latent_correlation(spec.options.get("corr", OVERLAP_CORR))
        u = norm.ppf((np.arange(n) + 0.5) / n)
        v = rho * u + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
        z = np.empty(n)
        z[np.argsort(v)] = z_sorted
    X = np.column_stack([np.ones(n), d, x, x * d])
    Z = np.column_stack([np.ones(n), d, z])
    y_clean = X @ t.beta + t.sigma * rng.standard_normal(n)
    m = _draw_mismatch(rng, Z @ t.gamma)
    y = shuffle_flagged(y_clean, m, rng)
    data = LinkedDataset(
        y, X, Z, true_m=m, x_names=["intercept", "d", "x", "x:d"], z_names=["intercept", "d", "z"]
    )
    return data, t


def gen_ele_blocks(spec: ScenarioSpec, rng=None):
    """Two blocks split at x = 0 with constant correct-match rate per block."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    t = spec.truth
    n = spec.n
    x = rng.standard_normal(n)
    X = np.column_stack([np.ones(n), x])
    block = np.where(x <= 0, 1, 2)
    contrast = np.where(block == 1, 1.0, -1.0)
    Z = np.column_stack([np.ones(n), contrast])
    y_clean = X @ t.beta + t.sigma * rng.standard_normal(n)
    m = _draw_mismatch(rng, Z @ t.gamma)
    y = shuffle_flagged(y_clean, m, rng, blocks=block)
    data = LinkedDataset(
        y, X, Z, true_m=m, block_id=block, x_names=["intercept", "x"], z_names=["intercept", "block"]
    )
    return data, t


def casestudy_mismatch_design(x):
    """Squared distance to the median, the mismatch covariate of the case-study mechanism."""
    x = np.asarray(x, dtype=float)
    return (np.median(x) - x) ** 2


def inject_casestudy_mismatch(x, y, gamma, seed):
    """Shuffle responses with ``logit P(m=0) = g0 + g1 (median(x) - x)^2``.

    Returns ``(y_linked, true_m, zcol)`` where ``zcol`` is the squared
    distance column to use in the mismatch model.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InvalidInputError("x and y must have the same length")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gamma = np.asarray(gamma, dtype=float)
    zcol = casestudy_mismatch_design(x)
    m = _draw_mismatch(rng, gamma[0] + gamma[1] * zcol)
    return shuffle_flagged(y, m, rng), m, zcol


def casestudy_intercept_for_rate(x, slope, rate):
    """Intercept giving an expected mismatch share of ``rate`` for the given slope on ``x``."""
    if not 0.0 < rate < 1.0:
        raise InvalidInputError(f"rate must lie in (0, 1), got {rate}")
    zcol = casestudy_mismatch_design(x)
    return brentq(lambda g0: 1.0 - expit(g0 + slope * zcol).mean() - rate, -50.0, 50.0)


def income_like_data(n, rng, beta=CASESTUDY_BETA, sigma=CASESTUDY_SIGMA):
    """Lognormal 'income' covariate with a linear year-on-year response."""
    x = INCOME_MEDIAN * np.exp(INCOME_LOG_SD * rng.standard_normal(n))
    y = beta[0] + beta[1] * x + sigma * rng.standard_normal(n)
    return x, y


def gen_casestudy(spec: ScenarioSpec, rng=None):
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    t = spec.truth
    x, y_clean = income_like_data(spec.n, rng, t.beta, t.sigma)
    y, m, zcol = inject_casestudy_mismatch(x, y_clean, t.gamma, rng)
    n = spec.n
    data = LinkedDataset(
        y,
        np.column_stack([np.ones(n), x]),
        np.column_stack([np.ones(n), zcol]),
        true_m=m,
        x_names=["intercept", "x"],
        z_names=["intercept", "dist2"],
    )
    return data, t


def generate(spec: ScenarioSpec, rng=None):
    """Dispatch on ``spec.kind``; returns ``(LinkedDataset, Truth)``."""
    if spec.kind == "motivating":
        return gen_motivating(spec, rng)
    if spec.kind.startswith("overlap"):
        return gen_overlap(int(spec.kind[-1]), spec, rng)
    if spec.kind == "ele_blocks":
        return gen_ele_blocks(spec, rng)
    return gen_casestudy(spec, rng)
