"""Comparison methods: continuous-Poisson three-step regression and jittering.

Also holds the integrated-squared-error ratio used to compare curves.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .errors import DataError, DomainError, NumericalError
from .regression import CurveSummary
from .splines import PenalizedDesign, SplineBasis, SplineSpec, difference_penalty, select_lambda
from .stochastic import find_root, make_rng

log = logging.getLogger(__name__)

GLM_LAMBDA_GRID = np.logspace(-4, 1, 21)
JITTER_LAMBDA_GRID = np.logspace(-4, 0, 9)


# ---------------------------------------------------------------------------
# Poisson GLM
# ---------------------------------------------------------------------------

@dataclass
class GlmFit:
    coefficients: np.ndarray
    design_spec: dict
    converged: bool
    iterations: int
    deviance_trace: list = field(default_factory=list)
    edf: float = float("nan")

    @property
    def deviance(self) -> float:
        return self.deviance_trace[-1]

    def predict(self, design) -> np.ndarray:
        return np.exp(np.asarray(design) @ self.coefficients)


def _poisson_deviance(y, mu) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(t - (y - mu)))


def fit_poisson_glm(y, design, penalty=None, design_spec=None, max_iter: int = 100) -> GlmFit:
    """Log-link Poisson fit by IRLS, optionally with a quadratic penalty.

    ``penalty`` is a matrix P added as 0.5 * beta' P beta to the negative
    log-likelihood.
    """
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(design, dtype=float))
    if X.shape[0] != y.size:
        X = X.T
    if not np.any(y > 0):
        raise DataError("all responses are zero: the Poisson MLE is infinite")
    if np.linalg.matrix_rank(X) < X.shape[1] and penalty is None:
        raise DataError("design matrix is rank deficient")
    P = np.zeros((X.shape[1], X.shape[1])) if penalty is None else np.asarray(penalty, dtype=float)
    beta = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)[0]

    def objective(b):
        mu = np.exp(np.clip(X @ b, -700, 700))
        return _poisson_deviance(y, mu) + b @ P @ b, mu

    dev, mu = objective(beta)
    trace = [dev]
    for it in range(1, max_iter + 1):
        W = mu
        z = X @ beta + (y - mu) / mu
        H = X.T @ (W[:, None] * X) + P
        try:
            target = np.linalg.solve(H, X.T @ (W * z))
        except np.linalg.LinAlgError:
            raise NumericalError(f"singular IRLS system; deviance trace {trace}") from None
        step = target - beta
        for _ in range(30):
            new_dev, new_mu = objective(beta + step)
            if np.isfinite(new_dev) and new_dev <= dev * (1 + 1e-12):
                break
            step *= 0.5
        beta = beta + step
        trace.append(new_dev)
        if abs(new_dev - dev) / (abs(new_dev) + 0.1) < 1e-10:
            mu = new_mu
            H = X.T @ (mu[:, None] * X)
            edf = float(np.trace(np.linalg.solve(H + P, H)))
            return GlmFit(beta, design_spec or {}, True, it, trace, edf)
        dev, mu = new_dev, new_mu
    raise NumericalError(f"IRLS did not converge in {max_iter} iterations; deviance trace {trace[-5:]}")


def fit_poisson_spline(y, x, spec: SplineSpec = SplineSpec(), grid=GLM_LAMBDA_GRID, bounds=None):
    """Penalized spline Poisson fit with lambda chosen by AIC; returns (fit, basis)."""
    basis = SplineBasis(*bounds, spec) if bounds is not None else SplineBasis.from_data(x, spec)
    B = basis(x)
    D = difference_penalty(basis.dim, spec.penalty_order)
    n = B.shape[0]
    best = None
    lams = grid if spec.lam == "auto" else [float(spec.lam)]
    for lam in lams:
        try:
            fit = fit_poisson_glm(y, B, 2.0 * n * lam ** 2 * D,
                                  {"kind": "spline", "lambda": float(lam), **basis.to_dict()})
        except NumericalError:
            continue
        aic = fit.deviance + 2.0 * fit.edf
        if best is None or aic < best[0]:
            best = (aic, fit)
    if best is None:
        raise NumericalError("penalized Poisson fit failed for every lambda")
    return best[1], basis


def cpoisson_quantile(lam: float, tau: float, tol: float = 1e-9) -> float:
    """Root y > -1 of Q(y + 1, lam) = tau for the continuous Poisson CDF."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    if not 0 < tau < 1:
        raise DomainError("tau must lie in (0, 1)")
    f = lambda y: float(special.gammaincc(y + 1.0, lam)) - tau
    hi = lam + 10.0 * np.sqrt(lam) + 10.0
    while f(hi) < 0:
        hi *= 2.0
    lo = -1.0
    if f(lo) >= 0:
        return lo
    return find_root(f, (lo, hi), tol=min(tol, 1e-12), maxiter=500)


# ---------------------------------------------------------------------------
# three-step method
# ---------------------------------------------------------------------------

@dataclass
class BaselineCurves:
    """Per-tau curves on a common grid, with optional bootstrap bands."""

    method: str
    grid: np.ndarray
    curves: dict
    lower: dict = field(default_factory=dict)
    upper: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def summary(self, tau: float, covariate: str = "x") -> CurveSummary:
        c = self.curves[tau]
        lo = self.lower.get(tau, c)
        hi = self.upper.get(tau, c)
        return CurveSummary(covariate, self.grid, c, lo, hi, tau)


def _three_step_once(y, x, grid, taus, spec: SplineSpec, lam_reg, bounds):
    glm, basis = fit_poisson_spline(y, x, spec, bounds=bounds)
    rate = glm.predict(basis(x))
    B = basis(x)
    design = PenalizedDesign([B], spec.penalty_order)
    Bg = basis(grid)
    out, lams = {}, {}
    for t in taus:
        ystar = np.array([cpoisson_quantile(r, t) for r in rate])
        lam = lam_reg.get(t) if lam_reg else None
        if lam is None:
            lam = select_lambda(ystar, design)
        a, b = design.solve(ystar, lam)
        out[t] = a[0] + Bg @ b[0]
        lams[t] = lam
    return out, lams


def continuous_poisson_three_step(y, x, taus, spec: SplineSpec = SplineSpec(), bootstrap: int = 0,
                                  seed: int = 0, grid=None, grid_points: int = 200) -> BaselineCurves:
    """GLM fit, per-observation continuous-Poisson quantiles, spline regression,
    and a case-resampling bootstrap for 95% bands.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if grid is None:
        grid = np.linspace(x.min(), x.max(), grid_points)
    grid = np.asarray(grid, dtype=float)
    taus = sorted(float(t) for t in taus)
    bounds = (min(x.min(), grid.min()), max(x.max(), grid.max()))
    curves, lams = _three_step_once(y, x, grid, taus, spec, None, bounds)
    result = BaselineCurves("continuous-poisson", np.asarray(grid), curves,
                            metadata={"lambda": lams, "bootstrap": bootstrap})
    if bootstrap > 0:
        rng = make_rng(seed, 7)
        boot = {t: [] for t in taus}
        for _ in range(bootstrap):
            idx = rng.integers(0, y.size, y.size)
            try:
                c, _ = _three_step_once(y[idx], x[idx], grid, taus, spec, lams, bounds)
            except (NumericalError, DataError) as exc:
                log.warning("bootstrap replicate skipped: %s", exc)
                continue
            for t in taus:
                boot[t].append(c[t])
        for t in taus:
            arr = np.array(boot[t])
            result.lower[t], result.upper[t] = np.percentile(arr, [2.5, 97.5], axis=0)
    return result


# ---------------------------------------------------------------------------
# jittering
# ---------------------------------------------------------------------------

def _smoothed_check(r, tau: float, h: float):
    """Huberized check loss, its derivative and curvature indicator."""
    upper, lower = tau * h, -(1.0 - tau) * h
    loss = np.where(r > upper, tau * r - 0.5 * tau * tau * h,
                    np.where(r < lower, (tau - 1.0) * r - 0.5 * (1 - tau) ** 2 * h, 0.5 * r * r / h))
    psi = np.where(r > upper, tau, np.where(r < lower, tau - 1.0, r / h))
    quad = (r >= lower) & (r <= upper)
    return loss, psi, quad


def smoothed_quantile_fit(z, X, tau: float, penalty=None, h_final: float = 1e-4,
                          max_newton: int = 500) -> np.ndarray:
    """Minimize mean smoothed check loss plus beta' P beta, continuing h down to ``h_final``.

    Newton directions use an exact line search: along a direction the
    objective is a convex piecewise quadratic, so its slope is monotone and
    Brent's method finds the minimizing step.
    """
    z = np.asarray(z, dtype=float)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    P = np.zeros((p, p)) if penalty is None else np.asarray(penalty, dtype=float)
    ridge = 1e-10 * np.eye(p)
    beta = np.linalg.solve(X.T @ X / n + 2.0 * P + ridge, X.T @ z / n)
    h = max(float(np.std(z)), h_final)

    def obj(b):
        loss, _, _ = _smoothed_check(z - X @ b, tau, h)
        return loss.mean() + b @ P @ b

    while True:
        f = obj(beta)
        for _ in range(max_newton):
            r = z - X @ beta
            _, psi, quad = _smoothed_check(r, tau, h)
            grad = -X.T @ psi / n + 2.0 * P @ beta
            d = -np.linalg.solve(X[quad].T @ X[quad] / (n * h) + 2.0 * P + ridge, grad)
            Xd, Pd = X @ d, P @ d
            slope = lambda t: -Xd @ _smoothed_check(r - t * Xd, tau, h)[1] / n + 2.0 * (beta + t * d) @ Pd
            if slope(0.0) >= 0:
                break
            hi = 1.0
            while slope(hi) < 0:
                hi *= 2.0
                if hi > 1e12:
                    raise NumericalError("unbounded line search in smoothed check-loss fit")
            t = optimize.brentq(slope, 0.0, hi, xtol=1e-15)
            beta = beta + t * d
            fn = obj(beta)
            done = f - fn <= 1e-14 * max(1.0, abs(f))
            f = fn
            if done:
                break
        else:
            raise NumericalError(f"smoothed check-loss Newton failed to converge at h={h:g}")
        if h <= h_final:
            return beta
        h = max(h / 10.0, h_final)


def _sic(z, X, beta, tau, h: float = 1e-4):
    r = z - X @ beta
    rho = np.mean(r * (tau - (r < 0)))
    # interpolated observations sit inside the smoothing zone
    edf = int(np.sum(np.abs(r) <= 2 * h))
    return np.log(max(rho, 1e-300)) + 0.5 * np.log(z.size) * edf / z.size


def jitter_quantile_fit(y, x, tau: float, n_jitters: int = 50, seed: int = 0,
                        spec: SplineSpec = SplineSpec(penalty_order=1), grid=None,
                        grid_points: int = 200) -> BaselineCurves:
    """Average of check-loss spline fits to y + U(0, 1), shifted by -1.

    The shift aligns jittered values, which lie in (g, g + 1), with the
    latent cells (g - 1, g].  lambda is chosen by the Schwarz criterion on
    the first jitter and reused for the rest.
    """
    if n_jitters < 1:
        raise DomainError("n_jitters must be at least 1")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if grid is None:
        grid = np.linspace(x.min(), x.max(), grid_points)
    grid = np.asarray(grid, dtype=float)
    basis = SplineBasis(min(x.min(), grid.min()), max(x.max(), grid.max()), spec)
    B = basis(x)
    D = difference_penalty(basis.dim, spec.penalty_order)
    Bg = basis(grid)
    rng = make_rng(seed, 11)
    lam = spec.lam
    total = np.zeros(len(grid))
    for j in range(n_jitters):
        z = y + rng.random(y.size)
        if lam == "auto":
            scores = []
            for cand in JITTER_LAMBDA_GRID:
                b = smoothed_quantile_fit(z, B, tau, cand ** 2 * D)
                scores.append(_sic(z, B, b, tau))
            lam = float(JITTER_LAMBDA_GRID[int(np.argmin(scores))])
        beta = smoothed_quantile_fit(z, B, tau, float(lam) ** 2 * D)
        total += Bg @ beta
    curve = total / n_jitters - 1.0
    return BaselineCurves("jittering", np.asarray(grid), {float(tau): curve},
                          metadata={"lambda": lam, "n_jitters": n_jitters, "shift": -1.0})


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def integrated_squared_error(curve, truth, grid) -> float:
    return float(np.trapezoid((np.asarray(curve) - np.asarray(truth)) ** 2, np.asarray(grid)))


def relative_ise(method_curve, reference_curve, true_curve, grid) -> float:
    ref = integrated_squared_error(reference_curve, true_curve, grid)
    if ref <= 0:
        raise NumericalError("reference curve has zero ISE; ratio undefined")
    return integrated_squared_error(method_curve, true_curve, grid) / ref


@dataclass
class CurveComparison:
    tau: float
    method: str
    grid: np.ndarray
    method_curve: np.ndarray
    reference_curve: np.ndarray
    true_curve: np.ndarray

    @property
    def ise_ratio(self) -> float:
        return relative_ise(self.method_curve, self.reference_curve, self.true_curve, self.grid)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "method": self.method, "relative_ise": self.ise_ratio}


def write_comparison_json(path, comparisons) -> None:
    rows = [c.to_dict() for c in comparisons]
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
