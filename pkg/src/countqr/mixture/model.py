"""Data containers and the truncated-normal joint kernel.

The joint kernel of ``z = (y*, x)`` is written through its factorization

    k(z) = TN(y*; mu_y, sigma2_y, y* > -1) * N(x; mu_x + eta (y* - mu_y) / sigma2_y, Sigma_c)

so ``eta`` is the covariance between ``y*`` and ``x`` before truncation and
the untruncated covariance of ``x`` is ``Sigma_c + eta eta' / sigma2_y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

from ..errors import DataError, DomainError
from ..stochastic import (
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_mvnormal,
)

LOG_2PI = float(np.log(2 * np.pi))


@dataclass
class Dataset:
    """Count responses ``y`` with an ``N x P`` continuous covariate matrix."""

    y: np.ndarray
    X: np.ndarray
    column_names: list[str] = field(default_factory=list)
    response_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.size:
            raise DataError(f"shape mismatch: y {y.shape}, X {X.shape}")
        if y.size < 2:
            raise DataError("need at least two observations")
        if X.shape[1] < 1:
            raise DataError("need at least one covariate")
        yf = y.astype(float)
        if np.any(~np.isfinite(yf)) or np.any(~np.isfinite(X)):
            raise DataError("missing or non-finite cells")
        if np.any(yf < 0) or np.any(yf != np.round(yf)):
            raise DataError("responses must be nonnegative integers")
        self.y = yf.astype(np.int64)
        self.X = X
        if not self.column_names:
            self.column_names = [f"x{j + 1}" for j in range(X.shape[1])]
        if len(self.column_names) != X.shape[1]:
            raise DataError("column_names length does not match X")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ClusterAtom:
    mu_y: float
    sigma2_y: float
    mu_x: np.ndarray
    Sigma_c: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        if not self.sigma2_y > 0:
            raise DomainError(f"sigma2_y must be positive, got {self.sigma2_y}")
        object.__setattr__(self, "mu_x", np.atleast_1d(np.asarray(self.mu_x, dtype=float)))
        object.__setattr__(self, "Sigma_c", np.atleast_2d(np.asarray(self.Sigma_c, dtype=float)))
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))

    @property
    def p(self) -> int:
        return self.mu_x.size

    @cached_property
    def chol_c(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.Sigma_c)
        except np.linalg.LinAlgError:
            raise DomainError("Sigma_c is not positive definite") from None

    @cached_property
    def prec_c(self) -> np.ndarray:
        inv_l = np.linalg.inv(self.chol_c)
        return inv_l.T @ inv_l

    @cached_property
    def logdet_c(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol_c))))

    @cached_property
    def prec_eta(self) -> np.ndarray:
        """Sigma_c^{-1} eta."""
        return self.prec_c @ self.eta

    @cached_property
    def eta_quad(self) -> float:
        """a = eta' Sigma_c^{-1} eta."""
        return float(self.eta @ self.prec_eta)

    @cached_property
    def log_mass_above(self) -> float:
        """log P(y* > -1) under the marginal N(mu_y, sigma2_y)."""
        return float(special.log_ndtr((self.mu_y + 1.0) / np.sqrt(self.sigma2_y)))

    @property
    def Sigma_x(self) -> np.ndarray:
        return self.Sigma_c + np.outer(self.eta, self.eta) / self.sigma2_y

    @property
    def joint_mean(self) -> np.ndarray:
        return np.concatenate([[self.mu_y], self.mu_x])

    @property
    def joint_cov(self) -> np.ndarray:
        p = self.p
        cov = np.empty((p + 1, p + 1))
        cov[0, 0] = self.sigma2_y
        cov[0, 1:] = cov[1:, 0] = self.eta
        cov[1:, 1:] = self.Sigma_x
        return cov

    def log_kernel(self, ystar: np.ndarray, X: np.ndarray) -> np.ndarray:
        """log k(z_i; theta) for every row, using the factorized form."""
        d = ystar - self.mu_y
        s2 = self.sigma2_y
        log_y = -0.5 * (LOG_2PI + np.log(s2) + d * d / s2) - self.log_mass_above
        r = X - self.mu_x - np.outer(d / s2, self.eta)
        quad = np.einsum("ij,jk,ik->i", r, self.prec_c, r)
        log_x = -0.5 * (self.p * LOG_2PI + self.logdet_c + quad)
        return log_y + log_x

    def conditional_moments(self, X: np.ndarray, paper_form: bool = False):
        """Mean and variance of y* given x before truncation.

        The default completes the square on the factorized kernel:
        variance ``s2^2 / (s2 + a)`` and mean
        ``mu_y + s2 / (s2 + a) * eta' Sigma_c^{-1} (x - mu_x)``.
        ``paper_form=True`` returns ``mu_y + eta' Sigma_c^{-1}(x - mu_x)`` and
        ``s2 - a`` instead; that variance can be nonpositive.
        """
        b = (np.atleast_2d(X) - self.mu_x) @ self.prec_eta
        s2, a = self.sigma2_y, self.eta_quad
        if paper_form:
            return self.mu_y + b, s2 - a
        return self.mu_y + s2 / (s2 + a) * b, s2 * s2 / (s2 + a)

    def log_marginal_x(self, X: np.ndarray) -> np.ndarray:
        """log N(x; mu_x, Sigma_x), the untruncated covariate marginal."""
        sx = self.Sigma_x
        chol = np.linalg.cholesky(sx)
        r = np.linalg.solve(chol, (np.atleast_2d(X) - self.mu_x).T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (self.p * LOG_2PI + logdet + np.sum(r * r, axis=0))

    def to_dict(self) -> dict:
        return {
            "mu_y": float(self.mu_y),
            "sigma2_y": float(self.sigma2_y),
            "mu_x": self.mu_x.tolist(),
            "Sigma_c": self.Sigma_c.tolist(),
            "eta": self.eta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterAtom":
        return cls(d["mu_y"], d["sigma2_y"], np.array(d["mu_x"]),
                   np.array(d["Sigma_c"]), np.array(d["eta"]))


@dataclass(frozen=True)
class AtomBatch:
    """Several atoms as stacked arrays, for vectorized kernel evaluation."""

    mu_y: np.ndarray        # (R,)
    sigma2_y: np.ndarray    # (R,)
    mu_x: np.ndarray        # (R, P)
    Sigma_c: np.ndarray     # (R, P, P)
    eta: np.ndarray         # (R, P)

    @classmethod
    def from_atoms(cls, atoms) -> "AtomBatch":
        return cls(np.array([a.mu_y for a in atoms], dtype=float),
                   np.array([a.sigma2_y for a in atoms], dtype=float),
                   np.array([a.mu_x for a in atoms]), np.array([a.Sigma_c for a in atoms]),
                   np.array([a.eta for a in atoms]))

    def __len__(self) -> int:
        return self.mu_y.size

    def atom(self, h: int) -> ClusterAtom:
        return ClusterAtom(float(self.mu_y[h]), float(self.sigma2_y[h]), self.mu_x[h].copy(),
                           self.Sigma_c[h].copy(), self.eta[h].copy())

    @cached_property
    def _factors(self):
        chol = np.linalg.cholesky(self.Sigma_c)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        log_above = special.log_ndtr((self.mu_y + 1.0) / np.sqrt(self.sigma2_y))
        return np.linalg.inv(self.Sigma_c), logdet, log_above

    def log_kernel_pairs(self, ystar, X, h) -> np.ndarray:
        """log k(z_i; atom h_i) for aligned arrays of rows and atom indices."""
        prec, logdet, log_above = self._factors
        h = np.asarray(h)
        s2 = self.sigma2_y[h]
        d = np.asarray(ystar, dtype=float) - self.mu_y[h]
        log_y = -0.5 * (LOG_2PI + np.log(s2) + d * d / s2) - log_above[h]
        r = np.atleast_2d(X) - self.mu_x[h] - (d / s2)[:, None] * self.eta[h]
        quad = np.einsum("ij,ijk,ik->i", r, prec[h], r)
        return log_y - 0.5 * (self.mu_x.shape[1] * LOG_2PI + logdet[h] + quad)


@dataclass(frozen=True)
class BaseMeasure:
    """Normal x inverse-gamma x normal x inverse-Wishart x normal base measure."""

    mu_y0: float
    sigma2_y0: float
    k0: float
    t0: float
    mu_x0: np.ndarray
    Sigma_x0: np.ndarray
    n0: float
    S0: np.ndarray
    mu_eta0: np.ndarray
    Sigma_eta0: np.ndarray

    def __post_init__(self):
        for name in ("mu_x0", "mu_eta0"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("Sigma_x0", "S0", "Sigma_eta0"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, m)
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise DomainError(f"{name} must be symmetric positive definite") from None
        if self.sigma2_y0 <= 0 or self.k0 <= 0 or self.t0 <= 0:
            raise DomainError("sigma2_y0, k0 and t0 must be positive")
        p = self.mu_x0.size
        if not self.n0 > p - 1:
            raise DomainError(f"n0 must exceed P - 1 = {p - 1}")
        shapes = {self.Sigma_x0.shape, self.S0.shape, self.Sigma_eta0.shape}
        if shapes != {(p, p)} or self.mu_eta0.size != p:
            raise DomainError("base measure blocks have inconsistent dimensions")

    @property
    def p(self) -> int:
        return self.mu_x0.size

    @cached_property
    def prec_x0(self) -> np.ndarray:
        return np.linalg.inv(self.Sigma_x0)

    @cached_property
    def prec_eta0(self) -> np.ndarray:
        return np.linalg.inv(self.Sigma_eta0)

    def sample_atom(self, rng: np.random.Generator) -> ClusterAtom:
        return ClusterAtom(
            mu_y=float(self.mu_y0 + np.sqrt(self.sigma2_y0) * rng.standard_normal()),
            sigma2_y=float(sample_inverse_gamma(self.k0, self.t0, rng)),
            mu_x=sample_mvnormal(self.mu_x0, self.Sigma_x0, rng),
            Sigma_c=sample_inverse_wishart(self.n0, self.S0, rng),
            eta=sample_mvnormal(self.mu_eta0, self.Sigma_eta0, rng),
        )

    def sample_atoms(self, n: int, rng: np.random.Generator) -> AtomBatch:
        """``n`` independent atoms drawn in one batch."""
        p = self.p
        chol_x = np.linalg.cholesky(self.Sigma_x0)
        chol_e = np.linalg.cholesky(self.Sigma_eta0)
        return AtomBatch(
            mu_y=self.mu_y0 + np.sqrt(self.sigma2_y0) * rng.standard_normal(n),
            sigma2_y=sample_inverse_gamma(self.k0, self.t0, rng, size=n),
            mu_x=self.mu_x0 + rng.standard_normal((n, p)) @ chol_x.T,
            Sigma_c=sample_inverse_wishart(self.n0, self.S0, rng, size=n),
            eta=self.mu_eta0 + rng.standard_normal((n, p)) @ chol_e.T,
        )

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if k in self.__dataclass_fields__:
                out[k] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BaseMeasure":
        return cls(**{k: (np.array(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class PYParams:
    discount: float
    strength: float

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise DomainError(f"discount must lie in [0, 1), got {self.discount}")
        if not self.strength > -self.discount:
            raise DomainError(
                f"strength must exceed -discount ({-self.discount}), got {self.strength}"
            )


def default_hyperparameters(data: Dataset) -> BaseMeasure:
    """Data-driven base measure that spreads prior mass over the data support."""
    y = data.y.astype(float)
    X = data.X
    p = data.p
    var_y = float(np.var(y, ddof=1))
    if var_y <= 0:
        raise DataError(f"response column '{data.response_name}' has zero variance")
    var_x = np.var(X, axis=0, ddof=1)
    for j in np.flatnonzero(var_x <= 0):
        raise DataError(f"covariate column '{data.column_names[j]}' has zero variance")
    k0 = 3.0
    n0 = p + 2.0
    cov_xy = ((X - X.mean(axis=0)) * (y - y.mean())[:, None]).sum(axis=0) / (data.n - 1)
    return BaseMeasure(
        mu_y0=float(y.mean()),
        sigma2_y0=2.0 * var_y,
        k0=k0,
        t0=(k0 - 1.0) * var_y,
        mu_x0=X.mean(axis=0),
        Sigma_x0=np.diag(2.0 * var_x),
        n0=n0,
        S0=(n0 - p - 1.0) * np.diag(var_x),
        mu_eta0=cov_xy / np.sqrt(var_y),
        Sigma_eta0=10.0 * np.eye(p),
    )
