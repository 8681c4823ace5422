"""Penalized B-spline least squares with GCV smoothing selection."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, NumericalError

log = logging.getLogger(__name__)

LAMBDA_GRID = np.logspace(-4, 4, 40)


@dataclass(frozen=True)
class SplineSpec:
    degree: int = 3
    n_interior: int = 20
    penalty_order: int = 2
    lam: float | str = "auto"

    def __post_init__(self):
        if self.degree < 0 or self.n_interior < 0:
            raise DomainError("degree and interior knot count must be nonnegative")
        if self.penalty_order < 0:
            raise DomainError("penalty order must be nonnegative")
        if self.penalty_order >= self.dim:
            raise DomainError(f"penalty order {self.penalty_order} must be below basis dimension {self.dim}")
        if self.lam != "auto" and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            raise DomainError("lam must be a nonnegative number or 'auto'")

    @property
    def dim(self) -> int:
        return self.n_interior + self.degree + 1


class SplineBasis:
    """B-splines on equally spaced knots over [lower, upper].

    The knot sequence continues with the same spacing beyond both ends, so
    knots are strictly increasing and coefficient sequences that are
    polynomial in the index give polynomial functions of x.
    """

    def __init__(self, lower: float, upper: float, spec: SplineSpec = SplineSpec()):
        if not (np.isfinite(lower) and np.isfinite(upper)) or upper <= lower:
            raise DomainError(f"invalid basis range [{lower}, {upper}]")
        self.lower, self.upper, self.spec = float(lower), float(upper), spec
        d = spec.degree
        h = (upper - lower) / (spec.n_interior + 1)
        self.knots = lower + h * np.arange(-d, spec.n_interior + 2 + d)
        # pin the range ends exactly so boundary points are never clamped
        self.knots[d], self.knots[-d - 1] = lower, upper

    @classmethod
    def from_data(cls, x, spec: SplineSpec = SplineSpec()) -> "SplineBasis":
        x = np.asarray(x, dtype=float)
        return cls(float(x.min()), float(x.max()), spec)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        outside = (x < self.lower) | (x > self.upper)
        if np.any(outside):
            warnings.warn(f"{int(outside.sum())} value(s) outside [{self.lower:.6g}, {self.upper:.6g}] clamped",
                          RuntimeWarning, stacklevel=2)
            x = np.clip(x, self.lower, self.upper)
        return BSpline.design_matrix(x, self.knots, self.spec.degree).toarray()

    def to_dict(self) -> dict:
        s = self.spec
        return {"lower": self.lower, "upper": self.upper, "degree": s.degree,
                "n_interior": s.n_interior, "penalty_order": s.penalty_order}


def bspline_basis(x, spec: SplineSpec = SplineSpec(), bounds=None) -> np.ndarray:
    """N x m basis matrix; knots span ``bounds`` or the observed range of x."""
    basis = SplineBasis(*bounds, spec) if bounds is not None else SplineBasis.from_data(x, spec)
    return basis(x)


def difference_matrix(m: int, order: int) -> np.ndarray:
    if order >= m:
        raise DomainError(f"difference order {order} must be below dimension {m}")
    return np.diff(np.eye(m), n=order, axis=0)


def difference_penalty(m: int, order: int) -> np.ndarray:
    delta = difference_matrix(m, order)
    return delta.T @ delta


# ---------------------------------------------------------------------------
# penalized least squares
# ---------------------------------------------------------------------------

def _reparametrize(m: int, order: int):
    """Columns spanning the penalized space: polynomial part (minus constants) and
    a part whose coefficients are the order-th differences themselves."""
    k = np.arange(m, dtype=float)
    k = (k - k.mean()) / max(k.std(), 1.0)
    fixed = np.column_stack([k ** j for j in range(1, order)]) if order > 1 else np.empty((m, 0))
    if order == 0:
        return fixed, np.eye(m)
    delta = difference_matrix(m, order)
    rand = np.linalg.solve(delta @ delta.T, delta).T
    return fixed, rand


class PenalizedDesign:
    """Additive centered spline design with one shared smoothing parameter.

    The fit minimizes (1/N)||y - a - sum_j B_j b_j||^2 + lam^2 sum_j b_j' D b_j
    with every partial effect B_j b_j averaging to zero over observations.
    Solving in a basis where the penalty is a plain ridge on some columns
    keeps the system well conditioned for very large lam.
    """

    def __init__(self, bases: list[np.ndarray], order: int = 2):
        self.bases = [np.asarray(B, dtype=float) for B in bases]
        n = self.bases[0].shape[0]
        if any(B.shape[0] != n for B in self.bases):
            raise DomainError("basis matrices must share the number of rows")
        self.n, self.order = n, order
        self.dims = [B.shape[1] for B in self.bases]
        cols, pen, self._maps = [np.ones((n, 1))], [0.0], []
        for B in self.bases:
            fixed, rand = _reparametrize(B.shape[1], order)
            T = np.hstack([fixed, rand])
            Bc = B - B.mean(axis=0)
            cols.append(Bc @ T)
            pen += [0.0] * fixed.shape[1] + [1.0] * rand.shape[1]
            self._maps.append((T, B.mean(axis=0)))
        self.Z = np.hstack(cols)
        self.pen = np.asarray(pen)
        self.penalties = [difference_penalty(m, order) for m in self.dims]

    def factor(self, lam: float):
        """QR pieces for the augmented least-squares system at ``lam``."""
        aug = np.vstack([self.Z / np.sqrt(self.n), np.diag(lam * np.sqrt(self.pen))])
        Q, R = np.linalg.qr(aug)
        # compare each pivot with its own column norm; lam may span many decades
        d = np.abs(np.diag(R)) / np.maximum(np.linalg.norm(aug, axis=0), 1e-300)
        if d.min() <= 1e-10:
            raise NumericalError(f"penalized system is singular at lambda={lam:g}")
        return Q[: self.n], R

    def solve(self, Y, lam: float):
        """Intercepts (S,) and stacked coefficient vectors (S, sum m_j) for Y (N,) or (S, N)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        Qt, R = self.factor(lam)
        theta = np.linalg.solve(R, Qt.T @ Y.T) / np.sqrt(self.n)
        return theta[0], self._to_beta(theta[1:]).T

    def _to_beta(self, theta):
        out, start = [], 0
        for T, colmean in self._maps:
            t = theta[start:start + T.shape[1]]
            start += T.shape[1]
            beta = T @ t
            # shift by a constant so B beta averages to zero (rows of B sum to 1)
            out.append(beta - colmean @ beta)
        return np.vstack(out)

    def split(self, beta) -> list[np.ndarray]:
        return np.split(np.asarray(beta), np.cumsum(self.dims)[:-1], axis=-1)

    def fitted(self, intercept, beta) -> np.ndarray:
        parts = self.split(beta)
        return intercept + sum(B @ b for B, b in zip(self.bases, parts))

    def gcv(self, y, lam: float) -> float:
        Qt, _ = self.factor(lam)
        fit = Qt @ (Qt.T @ y)
        edf = float(np.sum(Qt * Qt))
        rss = float(np.sum((y - fit) ** 2))
        return self.n * rss / max(self.n - edf, 1e-12) ** 2


@dataclass
class PenalizedFit:
    intercept: float
    beta: np.ndarray
    lam: float
    fitted: np.ndarray


def fit_penalized(ystar, bases, lam: float, order: int = 2) -> PenalizedFit:
    """Single penalized fit; ``bases`` is one matrix or a list of them."""
    if isinstance(bases, np.ndarray) and bases.ndim == 2:
        bases = [bases]
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    design = PenalizedDesign(bases, order)
    y = np.asarray(ystar, dtype=float)
    a, b = design.solve(y, lam)
    return PenalizedFit(float(a[0]), b[0], float(lam), design.fitted(a[0], b[0]))


def select_lambda(ystar, bases, order: int = 2, grid=LAMBDA_GRID) -> float:
    """GCV-minimizing lambda over a fixed log grid."""
    if isinstance(bases, np.ndarray) and bases.ndim == 2:
        bases = [bases]
    design = bases if isinstance(bases, PenalizedDesign) else PenalizedDesign(bases, order)
    y = np.asarray(ystar, dtype=float)
    scores = np.array([design.gcv(y, lam) for lam in grid])
    best = int(np.argmin(scores))
    if best in (0, len(grid) - 1):
        log.warning("GCV optimum at grid boundary lambda=%g", grid[best])
    return float(grid[best])
