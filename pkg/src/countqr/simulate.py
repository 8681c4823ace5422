"""Simulation settings with known latent conditional quantile curves.

Setting 1 mixes two Poisson and two Bernoulli log/logit regressions on a
standard normal covariate.  Setting 2 draws ``(y*, x)`` from a five-component
bivariate normal mixture truncated to ``y* > -1`` and rounds ``y*`` up.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError
from .mixture.model import Dataset
from .stochastic import find_root, make_rng

SETTING1_WEIGHTS = np.array([0.2, 0.3, 0.3, 0.2])
SETTING1_BETAS = np.array([[0.8, 0.4], [2.0, 0.3], [-1.0, 0.3], [-1.0, -0.1]])

SETTING2_WEIGHTS = np.array([0.4, 0.1, 0.2, 0.15, 0.15])
# (y*, x) means and covariances
SETTING2_MEANS = np.array([[5.0, 1.0], [7.5, 5.0], [10.0, 8.0], [12.5, 10.0], [15.0, 8.0]])
SETTING2_COVS = np.array([
    [[1.0, 0.6], [0.6, 2.0]],
    [[1.0, 0.6], [0.6, 2.0]],
    [[1.0, 0.4], [0.4, 2.0]],
    [[1.0, 0.4], [0.4, 3.0]],
    [[1.0, -0.3], [-0.3, 1.0]],
])

# Binomial components carry no trial count in the source description; one
# trial is assumed throughout.
BERNOULLI_NOTE = "setting 1 binomial components simulated as Bernoulli (one trial)"


@dataclass
class SimulatedData:
    data: Dataset
    components: np.ndarray
    latent: np.ndarray | None
    setting: int
    seed: int

    @property
    def metadata(self) -> dict:
        meta = {"setting": self.setting, "n": self.data.n, "seed": self.seed}
        if self.setting == 1:
            meta["note"] = BERNOULLI_NOTE
        return meta


@dataclass
class TruthCurve:
    tau: float
    grid_x: np.ndarray
    y_star_true: np.ndarray


def _check_n(n: int) -> None:
    if n < 10:
        raise DomainError("simulation needs N >= 10")


def gen_setting1(n: int, seed: int) -> SimulatedData:
    _check_n(n)
    rng = make_rng(seed)
    x = rng.standard_normal(n)
    comp = rng.choice(4, size=n, p=SETTING1_WEIGHTS)
    eta = SETTING1_BETAS[comp, 0] + SETTING1_BETAS[comp, 1] * x
    pois = comp < 2
    y = np.empty(n, dtype=np.int64)
    y[pois] = rng.poisson(np.exp(eta[pois]))
    y[~pois] = rng.random((~pois).sum()) < special.expit(eta[~pois])
    return SimulatedData(Dataset(y, x[:, None], ["x"]), comp, None, 1, seed)


def gen_setting2(n: int, seed: int) -> SimulatedData:
    _check_n(n)
    rng = make_rng(seed)
    comp = rng.choice(5, size=n, p=SETTING2_WEIGHTS)
    z = np.empty((n, 2))
    chol = np.linalg.cholesky(SETTING2_COVS)
    todo = np.arange(n)
    while todo.size:
        k = comp[todo]
        draw = SETTING2_MEANS[k] + np.einsum("nij,nj->ni", chol[k], rng.standard_normal((todo.size, 2)))
        z[todo] = draw
        todo = todo[draw[:, 0] <= -1.0]
    ystar, x = z[:, 0], z[:, 1]
    y = np.ceil(ystar).astype(np.int64)
    return SimulatedData(Dataset(y, x[:, None], ["x"]), comp, ystar, 2, seed)


# ---------------------------------------------------------------------------
# true conditional CDFs of y* given x
# ---------------------------------------------------------------------------

def _bernoulli_interp_cdf(y, p):
    """Bernoulli CDF linearly interpolated over the cells (-1, 0] and (0, 1]."""
    return np.where(
        y <= -1, 0.0,
        np.where(y <= 0, (1 - p) * (y + 1), np.where(y <= 1, (1 - p) + p * y, 1.0)),
    )


def setting1_cdf(y: float, x: float) -> float:
    if y <= -1:
        return 0.0
    lam = np.exp(SETTING1_BETAS[:2, 0] + SETTING1_BETAS[:2, 1] * x)
    p = special.expit(SETTING1_BETAS[2:, 0] + SETTING1_BETAS[2:, 1] * x)
    cdfs = np.concatenate([special.gammaincc(y + 1.0, lam), _bernoulli_interp_cdf(y, p)])
    return float(SETTING1_WEIGHTS @ cdfs)


def _setting2_conditional(x: float):
    mu_y, mu_x = SETTING2_MEANS[:, 0], SETTING2_MEANS[:, 1]
    syy, sxy, sxx = SETTING2_COVS[:, 0, 0], SETTING2_COVS[:, 0, 1], SETTING2_COVS[:, 1, 1]
    m = mu_y + sxy / sxx * (x - mu_x)
    s = np.sqrt(syy - sxy ** 2 / sxx)
    log_w = (np.log(SETTING2_WEIGHTS) - 0.5 * np.log(2 * np.pi * sxx)
             - 0.5 * (x - mu_x) ** 2 / sxx - special.log_ndtr((mu_y + 1) / np.sqrt(syy)))
    lo = (-1.0 - m) / s
    # weight of each component's conditional mass above -1
    log_mass = log_w + special.log_ndtr(-lo)
    return m, s, lo, log_mass


def setting2_cdf(y: float, x: float) -> float:
    if y <= -1:
        return 0.0
    m, s, lo, log_mass = _setting2_conditional(x)
    w = np.exp(log_mass - special.logsumexp(log_mass))
    within = -np.expm1(special.log_ndtr(-(y - m) / s) - special.log_ndtr(-lo))
    return float(w @ within)


def setting2_density(y, x: float):
    """Conditional density of y* given x (for quadrature checks)."""
    y = np.asarray(y, dtype=float)
    m, s, lo, log_mass = _setting2_conditional(x)
    w = np.exp(log_mass - special.logsumexp(log_mass))
    comp = np.exp(-0.5 * ((y[..., None] - m) / s) ** 2 - special.log_ndtr(-lo)) / (s * np.sqrt(2 * np.pi))
    return np.where(y > -1, comp @ w, 0.0)


def true_quantile(setting: int, tau: float, x: float) -> float:
    if not 0 < tau < 1:
        raise DomainError("tau must lie in (0, 1)")
    cdf = {1: setting1_cdf, 2: setting2_cdf}[setting]
    hi = 10.0
    while cdf(hi, x) < tau:
        hi *= 2.0
    return find_root(lambda y: cdf(y, x) - tau, (-1.0, hi), tol=1e-10)


def true_quantiles(setting: int, tau: float, grid_x) -> TruthCurve:
    grid_x = np.asarray(grid_x, dtype=float)
    q = np.array([true_quantile(setting, tau, float(x)) for x in grid_x])
    return TruthCurve(tau, grid_x, q)
