"""General Bayesian updating of additive spline quantile curves.

Each posterior draw of the latent conditional quantiles y*_tau is regressed
on spline bases of the covariates by penalized least squares.  The smoothing
parameter is chosen once, by GCV on the draw-wise mean, and then held fixed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .quantiles import QuantileDrawMatrix
from .splines import PenalizedDesign, SplineBasis, SplineSpec, select_lambda

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("covariate", "grid_x", "posterior_mean", "lower_95", "upper_95", "tau")


@dataclass
class CurveSummary:
    covariate: str
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    tau: float

    def rows(self):
        for g, m, lo, hi in zip(self.grid, self.mean, self.lower, self.upper):
            yield [self.covariate, g, m, lo, hi, self.tau]


@dataclass
class RegressionDraws:
    """Coefficient draws plus partial-effect curves on a grid per covariate.

    ``curves[j]`` is grid x S; a reported curve adds the intercept, i.e. the
    quantile as a function of covariate j with the other effects at their
    average of zero.
    """

    tau: float
    lam: float
    intercepts: np.ndarray
    betas: np.ndarray
    bases: list[SplineBasis]
    grids: list[np.ndarray]
    curves: list[np.ndarray]
    column_names: list[str] = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.intercepts.size

    def split(self) -> list[np.ndarray]:
        dims = [b.dim for b in self.bases]
        return np.split(self.betas, np.cumsum(dims)[:-1], axis=1)

    def fitted(self, X) -> np.ndarray:
        """S x N fitted quantiles at the rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.repeat(self.intercepts[:, None], X.shape[0], axis=1)
        for j, (basis, beta) in enumerate(zip(self.bases, self.split())):
            out += beta @ basis(X[:, j]).T
        return out

    def curve_draws(self, j: int) -> np.ndarray:
        return self.curves[j] + self.intercepts[None, :]

    def summary(self, j: int) -> CurveSummary:
        c = self.curve_draws(j)
        lo, hi = np.percentile(c, [2.5, 97.5], axis=1)
        return CurveSummary(self.column_names[j], self.grids[j], c.mean(axis=1), lo, hi, self.tau)

    def summaries(self) -> list[CurveSummary]:
        return [self.summary(j) for j in range(len(self.bases))]


def _fill_invalid(values: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values)
    if not np.any(bad):
        return values
    empty = np.flatnonzero(np.all(bad, axis=0))
    if empty.size:
        raise NumericalError(f"observation {empty[0]} has no valid quantile draw")
    col_mean = np.nanmean(values, axis=0)
    log.warning("%d invalid quantile cells replaced by their observation means", int(bad.sum()))
    return np.where(bad, col_mean[None, :], values)


def general_bayes_update(quantiles: QuantileDrawMatrix, X, spec: SplineSpec = SplineSpec(),
                         column_names=None, grid_points: int = 200) -> RegressionDraws:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and quantiles.values.shape[1] != 1:
        X = X.T
    Y = _fill_invalid(quantiles.values)
    if Y.shape[1] != X.shape[0]:
        raise ValueError(f"quantile matrix has {Y.shape[1]} columns but X has {X.shape[0]} rows")
    bases = [SplineBasis.from_data(X[:, j], spec) for j in range(X.shape[1])]
    design = PenalizedDesign([b(X[:, j]) for j, b in enumerate(bases)], spec.penalty_order)
    if spec.lam == "auto":
        lam = select_lambda(Y.mean(axis=0), design)
    else:
        lam = float(spec.lam)
    try:
        intercepts, betas = design.solve(Y, lam)
    except NumericalError as exc:
        raise NumericalError(f"tau={quantiles.tau}: {exc}") from exc
    grids, curves = [], []
    for basis, beta in zip(bases, design.split(betas)):
        g = np.linspace(basis.lower, basis.upper, grid_points)
        grids.append(g)
        curves.append(basis(g) @ beta.T)
    names = list(column_names) if column_names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    return RegressionDraws(quantiles.tau, lam, intercepts, betas, bases, grids, curves, names)


def write_curves_csv(path, summaries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for s in summaries:
            for row in s.rows():
                w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def read_curves_csv(path) -> list[CurveSummary]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out: dict[tuple, list] = {}
    for r in rows:
        out.setdefault((r["covariate"], float(r["tau"])), []).append(r)
    summaries = []
    for (name, tau), rs in out.items():
        col = lambda k: np.array([float(r[k]) for r in rs])
        summaries.append(CurveSummary(name, col("grid_x"), col("posterior_mean"),
                                      col("lower_95"), col("upper_95"), tau))
    return summaries
