"""Special functions, random primitives and scalar root finding.

Every sampler takes an explicit :class:`numpy.random.Generator`; build one
with :func:`make_rng` so that ``(seed, stream_id)`` pins the whole sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import BracketError, DomainError, NumericalError

__all__ = [
    "Interval",
    "make_rng",
    "regularized_upper_gamma",
    "normal_cdf",
    "log_normal_cdf",
    "normal_quantile",
    "sample_truncated_normal",
    "truncated_normal",
    "sample_dirichlet",
    "sample_inverse_gamma",
    "sample_inverse_wishart",
    "sample_mvnormal",
    "find_root",
    "bracketed_roots",
]

# standardized lower bound beyond which the inverse-CDF route is abandoned
TAIL_THRESHOLD = 5.0


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise DomainError("interval endpoints must not be NaN")
        if not self.lower < self.upper:
            raise DomainError(
                f"interval must satisfy lower < upper, got ({self.lower}, {self.upper})"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id)``."""
    if seed < 0 or stream_id < 0:
        raise DomainError("seed and stream_id must be unsigned")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def regularized_upper_gamma(shape, cut):
    """Q(shape, cut) = Gamma(shape, cut) / Gamma(shape)."""
    shape = np.asarray(shape, dtype=float)
    cut = np.asarray(cut, dtype=float)
    if np.any(shape <= 0):
        raise DomainError("regularized_upper_gamma requires shape > 0")
    if np.any(cut < 0):
        raise DomainError("regularized_upper_gamma requires cut >= 0")
    out = special.gammaincc(shape, cut)
    return out if out.ndim else float(out)


def normal_cdf(z):
    out = special.ndtr(np.asarray(z, dtype=float))
    return out if out.ndim else float(out)


def log_normal_cdf(z):
    """log Phi(z), finite far into the lower tail."""
    out = special.log_ndtr(np.asarray(z, dtype=float))
    return out if out.ndim else float(out)


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise DomainError("normal_quantile requires p in (0, 1)")
    out = special.ndtri(p)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# truncated normal
# ---------------------------------------------------------------------------

def _tail_exponential(a, b, rng):
    """Standard normal restricted to (a, b) with a >= TAIL_THRESHOLD.

    Exponential proposals (Robert, 1995); narrow intervals use a uniform
    proposal, whose acceptance rate is then higher.
    """
    out = np.empty_like(a)
    todo = np.arange(a.size)
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    narrow = rate * (b - a) < 0.5
    while todo.size:
        aa, bb, lam, nar = a[todo], b[todo], rate[todo], narrow[todo]
        u = rng.random(todo.size)
        x = np.where(
            nar,
            aa + (bb - aa) * rng.random(todo.size),
            aa + rng.standard_exponential(todo.size) / lam,
        )
        log_acc = np.where(
            nar,
            -0.5 * (x * x - aa * aa),
            -0.5 * (x - lam) ** 2,
        )
        ok = (x < bb) & (np.log(u) <= log_acc)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def truncated_normal(mu, sigma, lower, upper, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draws from N(mu, sigma^2) restricted to (lower, upper).

    Inverse-CDF in the body of the distribution, exponential rejection when
    the interval starts more than ``TAIL_THRESHOLD`` standard deviations
    out.  Results are clipped to lie strictly inside the interval.
    """
    mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu, sigma, lower, upper))
    )
    shape = mu.shape
    mu, sigma, lower, upper = (v.ravel() for v in (mu, sigma, lower, upper))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    if np.any(~(lower < upper)):
        raise DomainError("truncation region must have positive width")

    a = (lower - mu) / sigma
    b = (upper - mu) / sigma
    # reflect so that one-sided intervals sit on the positive half-line
    flip = b <= 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    z = np.empty_like(a)

    straddle = a < 0
    if np.any(straddle):
        pa, pb = special.ndtr(a[straddle]), special.ndtr(b[straddle])
        u = rng.random(pa.size)
        p = np.clip(pa + u * (pb - pa), np.finfo(float).tiny, 1.0 - 1e-16)
        z[straddle] = special.ndtri(p)

    body = ~straddle & (a < TAIL_THRESHOLD)
    if np.any(body):
        qa, qb = special.ndtr(-a[body]), special.ndtr(-b[body])
        u = rng.random(qa.size)
        q = np.maximum(qa - u * (qa - qb), np.finfo(float).tiny)
        z[body] = -special.ndtri(q)

    tail = ~straddle & ~body
    if np.any(tail):
        z[tail] = _tail_exponential(a[tail], b[tail], rng)

    z = np.where(flip, -z, z)
    x = mu + sigma * z
    x = np.clip(x, np.nextafter(lower, np.inf), np.nextafter(upper, -np.inf))
    return x.reshape(shape)


def sample_truncated_normal(mu: float, sigma: float, region: Interval,
                            rng: np.random.Generator) -> float:
    """One draw from N(mu, sigma^2) restricted to ``region``."""
    if not isinstance(region, Interval):
        region = Interval(*region)
    return float(truncated_normal(mu, sigma, region.lower, region.upper, rng))


# ---------------------------------------------------------------------------
# conjugate-family samplers
# ---------------------------------------------------------------------------

def sample_dirichlet(alphas, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw computed through log-gamma variates.

    Small concentrations use Gamma(a) = Gamma(a + 1) * U**(1/a) in log form,
    so no component collapses to exactly zero.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size == 0:
        raise DomainError("alphas must be a non-empty vector")
    if np.any(~(alphas > 0)):
        raise DomainError("all Dirichlet parameters must be positive")
    small = alphas < 1.0
    g = rng.standard_gamma(np.where(small, alphas + 1.0, alphas))
    logg = np.log(g)
    if np.any(small):
        logg = logg + np.where(small, np.log(rng.random(alphas.size)) / alphas, 0.0)
    w = np.exp(logg - special.logsumexp(logg))
    w = np.maximum(w, np.finfo(float).tiny)
    return w / w.sum()


def sample_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    """IG(shape, scale): density proportional to s**(-shape-1) exp(-scale/s)."""
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(scale) <= 0):
        raise DomainError("inverse gamma needs positive shape and scale")
    return scale / rng.standard_gamma(shape, size=size)


def _cholesky(m: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise DomainError(f"{what} is not symmetric positive definite") from None


def sample_inverse_wishart(dof: float, scale: np.ndarray, rng: np.random.Generator,
                           size: int | None = None) -> np.ndarray:
    """IW(dof, scale) via the Bartlett decomposition of W(dof, scale^-1).

    Mean is ``scale / (dof - p - 1)`` when ``dof > p + 1``.  With ``size``
    a stack of shape ``(size, p, p)`` is returned.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if scale.shape != (p, p) or np.max(np.abs(scale - scale.T)) > 1e-8 * np.max(np.abs(scale)):
        raise DomainError("scale matrix must be square and symmetric")
    if dof <= p - 1:
        raise DomainError(f"inverse Wishart needs dof > {p - 1}, got {dof}")
    chol_s = _cholesky(scale, "inverse Wishart scale")
    # chol of scale^-1 is inv(chol_s).T, still needs a triangular factor
    inv_s = np.linalg.inv(chol_s)
    lw = np.linalg.cholesky(inv_s.T @ inv_s)
    n = 1 if size is None else int(size)
    a = np.zeros((n, p, p))
    diag = np.arange(p)
    a[:, diag, diag] = np.sqrt(rng.chisquare(dof - diag, size=(n, p)))
    rows, cols = np.tril_indices(p, -1)
    a[:, rows, cols] = rng.standard_normal((n, rows.size))
    inv_la = np.linalg.inv(lw @ a)
    out = np.swapaxes(inv_la, 1, 2) @ inv_la
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return out[0] if size is None else out


def sample_mvnormal(mean, cov, rng: np.random.Generator) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = _cholesky(cov, "covariance")
    return mean + chol @ rng.standard_normal(mean.size)


# ---------------------------------------------------------------------------
# root finding
# ---------------------------------------------------------------------------

def find_root(f, bracket, tol: float = 1e-9, maxiter: int = 200) -> float:
    """Brent root of a continuous ``f`` on ``bracket``.

    Raises :class:`BracketError` when ``f`` does not change sign.
    """
    if not isinstance(bracket, Interval):
        bracket = Interval(*bracket)
    lo, hi = bracket.lower, bracket.upper
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f = ({flo}, {fhi})")
    try:
        return optimize.brentq(f, lo, hi, xtol=tol, maxiter=maxiter)
    except RuntimeError as exc:
        raise NumericalError(str(exc)) from None


def bracketed_roots(f, lo, hi, xtol: float = 1e-12, maxiter: int = 200) -> np.ndarray:
    """Vectorized Illinois regula falsi with a bisection safeguard.

    ``f`` maps an array of abscissae to an array of values; it must be
    increasing on each ``[lo_i, hi_i]`` and change sign there.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    flo, fhi = f(lo), f(hi)
    if np.any(flo > 0) or np.any(fhi < 0):
        raise BracketError("every bracket must satisfy f(lo) <= 0 <= f(hi)")
    x = 0.5 * (lo + hi)
    active = (hi - lo > xtol) & (flo != 0) & (fhi != 0)
    x = np.where(flo == 0, lo, np.where(fhi == 0, hi, x))
    side = np.zeros(lo.shape, dtype=int)
    for it in range(maxiter):
        if not np.any(active):
            break
        width = hi - lo
        denom = fhi - flo
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = np.where(denom > 0, lo - flo * width / denom, 0.5 * (lo + hi))
        bisect = (it % 3 == 2) | ~np.isfinite(xs) | (xs <= lo) | (xs >= hi)
        xn = np.where(bisect, 0.5 * (lo + hi), xs)
        xn = np.where(active, xn, x)
        fx = f(xn)
        x = xn
        exact = active & (fx == 0)
        left = active & (fx < 0)
        right = active & (fx > 0)
        lo = np.where(left, xn, lo)
        flo = np.where(left, fx, flo)
        hi = np.where(right, xn, hi)
        fhi = np.where(right, fx, fhi)
        # Illinois: halve the stale endpoint value after two same-side moves
        flo = np.where(right & (side == 1), 0.5 * flo, flo)
        fhi = np.where(left & (side == -1), 0.5 * fhi, fhi)
        side = np.where(left, -1, np.where(right, 1, side))
        active = active & ~exact & (hi - lo > xtol)
    else:
        if np.any(active):
            raise NumericalError("bracketed_roots hit the iteration cap")
    return np.where(hi - lo <= xtol, 0.5 * (lo + hi), x)
