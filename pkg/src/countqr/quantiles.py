"""Conditional distribution of y* given x under one posterior draw, and its quantiles.

For each mixture component the conditional of y* given x is a normal
truncated to y* > -1.  Component weights are proportional to the mixture
weight times the covariate marginal N(x; mu_x, Sigma_x) (``mode="paper"``);
``mode="exact"`` multiplies in P(y* > -1 | x) / P(y* > -1), the factor the
truncated joint kernel implies for the covariate marginal.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError
from .mixture.sampler import PosteriorDraw
from .stochastic import find_root

log = logging.getLogger(__name__)

MODES = ("paper", "exact")
SQRT_2PI = float(np.sqrt(2 * np.pi))
MAX_WIDENINGS = 6
MAX_INVALID_FRACTION = 1e-3


@dataclass
class ConditionalMixture:
    weights: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.sds = np.asarray(self.sds, dtype=float)
        if np.any(self.sds <= 0):
            raise DomainError("component standard deviations must be positive")

    @property
    def log_mass_above(self) -> np.ndarray:
        """log P(y* > -1) per component."""
        return special.log_ndtr((self.means + 1.0) / self.sds)


def _component_arrays(draw: PosteriorDraw, X: np.ndarray, mode: str):
    """Unnormalized log weights (N x J), conditional means (N x J), sds (J)."""
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    X = np.atleast_2d(X)
    comps = draw.components()
    n, J = X.shape[0], len(comps)
    logw = np.empty((n, J))
    means = np.empty((n, J))
    sds = np.empty(J)
    with np.errstate(divide="ignore"):
        for j, (w, atom) in enumerate(comps):
            m, v = atom.conditional_moments(X)
            means[:, j] = m
            sds[j] = np.sqrt(v)
            logw[:, j] = np.log(w) + atom.log_marginal_x(X)
            if mode == "exact":
                logw[:, j] += special.log_ndtr((m + 1.0) / sds[j]) - atom.log_mass_above
    return logw, means, sds


def build_conditional(draw: PosteriorDraw, x, mode: str = "paper",
                      observation: int | None = None) -> ConditionalMixture:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise DomainError("covariate vector must be finite")
    logw, means, sds = _component_arrays(draw, x[None, :], mode)
    logw = logw[0]
    top = logw.max()
    if not np.isfinite(top):
        who = "" if observation is None else f" for observation {observation}"
        raise NumericalError(f"all conditional mixture weights underflow{who}")
    w = np.exp(logw - special.logsumexp(logw))
    return ConditionalMixture(w, means[0], sds)


def _cdf_terms(y, means, sds, log_sf_lower):
    z = (y - means) / sds
    return -np.expm1(special.log_ndtr(-z) - log_sf_lower), z


def conditional_cdf(mix: ConditionalMixture, y: float) -> float:
    if y < -1:
        raise DomainError("the conditional distribution is supported on y > -1")
    if y == -1:
        return 0.0
    if np.isinf(y):
        return 1.0
    within, _ = _cdf_terms(y, mix.means, mix.sds, mix.log_mass_above)
    return float(np.clip(mix.weights @ within, 0.0, 1.0))


def conditional_pdf(mix: ConditionalMixture, y: float) -> float:
    if y <= -1:
        return 0.0
    z = (y - mix.means) / mix.sds
    dens = np.exp(-0.5 * z * z - mix.log_mass_above) / (mix.sds * SQRT_2PI)
    return float(mix.weights @ dens)


def _upper_start(means, sds) -> float:
    return float(np.max(means + 10.0 * sds))


def solve_quantile(mix: ConditionalMixture, tau: float, tol: float = 1e-8) -> float:
    """q with |F(q | x) - tau| <= tol, by Brent on a widening bracket."""
    if not 0 < tau < 1:
        raise DomainError("tau must lie in (0, 1)")
    hi = max(_upper_start(mix.means, mix.sds), 0.0)
    for _ in range(MAX_WIDENINGS + 1):
        if conditional_cdf(mix, hi) >= tau:
            break
        hi = -1.0 + 2.0 * (hi + 1.0)
    else:
        raise NumericalError(f"could not bracket the {tau} quantile")
    f = lambda y: conditional_cdf(mix, y) - tau
    q = find_root(f, (-1.0, hi), tol=1e-14 * max(1.0, abs(hi)), maxiter=500)
    if abs(f(q)) > tol:
        raise NumericalError(f"quantile solve missed tolerance: |F - tau| = {abs(f(q)):.3g}")
    return q


def solve_quantiles_batch(logw, means, sds, tau: float, tol: float = 1e-8):
    """Vectorized safeguarded Newton for many conditional mixtures at once.

    Returns (quantiles, ok) where ``ok`` flags rows that met the tolerance.
    """
    top = logw.max(axis=1, keepdims=True)
    finite = np.isfinite(top[:, 0])
    w = np.exp(logw - np.where(np.isfinite(top), top, 0.0))
    w /= np.where(finite, w.sum(axis=1), 1.0)[:, None]
    log_sf_lower = special.log_ndtr((means + 1.0) / sds)
    scale = 1.0 / (sds * SQRT_2PI)

    def cdf_pdf(y):
        within, z = _cdf_terms(y[:, None], means, sds, log_sf_lower)
        F = np.clip(np.sum(w * within, axis=1), 0.0, 1.0)
        f = np.sum(w * np.exp(-0.5 * z * z - log_sf_lower) * scale, axis=1)
        return F, f

    n = logw.shape[0]
    lo = np.full(n, -1.0)
    hi = np.maximum(np.max(means + 10.0 * sds, axis=1), 0.0)
    Fh, _ = cdf_pdf(hi)
    for _ in range(MAX_WIDENINGS):
        short = Fh < tau
        if not np.any(short):
            break
        hi = np.where(short, -1.0 + 2.0 * (hi + 1.0), hi)
        Fh, _ = cdf_pdf(hi)
    bracketed = (Fh >= tau) & finite

    x = 0.5 * (lo + hi)
    done = ~bracketed
    err = np.full(n, np.inf)
    for _ in range(200):
        F, f = cdf_pdf(x)
        gap = F - tau
        err = np.where(done, err, np.abs(gap))
        conv = ~done & ((np.abs(gap) <= tol) | (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(x))))
        done |= conv
        if np.all(done):
            break
        lo = np.where(~done & (gap < 0), x, lo)
        hi = np.where(~done & (gap > 0), x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - gap / f
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
    ok = bracketed & (err <= tol)
    return x, ok


@dataclass
class QuantileDrawMatrix:
    """S x N posterior draws of the tau-th conditional quantile of y*."""

    values: np.ndarray
    tau: float
    observation_ids: list = field(default_factory=list)
    mode: str = "paper"
    tol: float = 1e-8
    invalid: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not self.observation_ids:
            self.observation_ids = [str(i) for i in range(self.values.shape[1])]

    @property
    def header(self) -> dict:
        return {"tau": self.tau, "mode": self.mode, "tol": self.tol,
                "n_draws": int(self.values.shape[0]),
                "n_observations": int(self.values.shape[1]),
                "invalid_cells": [list(map(int, c)) for c in self.invalid]}

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("# " + json.dumps(self.header, sort_keys=True) + "\n")
            fh.write(",".join(map(str, self.observation_ids)) + "\n")
            np.savetxt(fh, self.values, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "QuantileDrawMatrix":
        path = Path(path)
        with path.open() as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing JSON header line")
            header = json.loads(first[2:])
            ids = fh.readline().strip().split(",")
            values = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(values, header["tau"], ids, header["mode"], header["tol"],
                   [tuple(c) for c in header.get("invalid_cells", [])])


def quantile_draws(draws, X, taus, mode: str = "paper", tol: float = 1e-8,
                   observation_ids=None) -> dict[float, QuantileDrawMatrix]:
    """Conditional quantiles for every (draw, observation) pair and every tau.

    Cells that fail are stored as NaN with their (s, i) index; more than
    0.1% failed cells aborts the run.
    """
    draws = list(draws)
    if not draws:
        raise DomainError("need at least one posterior draw")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] != draws[0].atoms[0].p:
        X = X.T
    taus = sorted(float(t) for t in taus)
    S, n = len(draws), X.shape[0]
    out = {t: np.empty((S, n)) for t in taus}
    invalid = {t: [] for t in taus}
    for s, draw in enumerate(draws):
        logw, means, sds = _component_arrays(draw, X, mode)
        for t in taus:
            q, ok = solve_quantiles_batch(logw, means, sds, t, tol)
            q[~ok] = np.nan
            out[t][s] = q
            for i in np.flatnonzero(~ok):
                invalid[t].append((s, int(i)))
                log.warning("quantile tau=%g failed at draw %d, observation %d", t, s, i)
    limit = MAX_INVALID_FRACTION * S * n
    for t in taus:
        if len(invalid[t]) > limit:
            raise NumericalError(
                f"{len(invalid[t])} of {S * n} quantile cells failed at tau={t}; "
                f"first failures: {invalid[t][:5]}"
            )
    ids = list(observation_ids) if observation_ids is not None else None
    return {t: QuantileDrawMatrix(out[t], t, ids or [], mode, tol, invalid[t]) for t in taus}
