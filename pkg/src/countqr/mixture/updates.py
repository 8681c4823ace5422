"""Full-conditional updates for one cluster's parameters and the latent y*.

Each ``*_conditional`` function returns the exact moments of a conjugate
full conditional; the matching ``update_*`` function draws from it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..stochastic import sample_inverse_wishart, sample_mvnormal, truncated_normal
from .model import LOG_2PI, BaseMeasure, ClusterAtom

log = logging.getLogger(__name__)

RANDOM_WALK = "random-walk"
ACCEPT_REJECT = "acceptance-rejection"


# ---------------------------------------------------------------------------
# (mu_y, sigma2_y) block
# ---------------------------------------------------------------------------

class MuSigmaTarget:
    """Log full conditional of (mu_y, log sigma2_y) for one cluster.

    Works on sufficient statistics so each evaluation is O(1).  With
    ``include_x_term`` the conditional kernel of x given y*, whose mean
    shifts with mu_y and sigma2_y, contributes as well.
    """

    def __init__(self, ystar, X, atom: ClusterAtom, base: BaseMeasure,
                 include_x_term: bool = True):
        ystar = np.asarray(ystar, dtype=float)
        self.n = ystar.size
        self.s1 = float(ystar.sum())
        self.s2 = float(ystar @ ystar)
        if include_x_term and self.n:
            b = (np.atleast_2d(X) - atom.mu_x) @ atom.prec_eta
            self.b0 = float(b.sum())
            self.b1 = float(b @ ystar)
            self.a = atom.eta_quad
        else:
            self.b0 = self.b1 = self.a = 0.0
        self.mu0 = base.mu_y0
        self.v0 = base.sigma2_y0
        self.k0 = base.k0
        self.t0 = base.t0

    def logp(self, mu: float, ell: float) -> float:
        mu, ell = float(mu), float(ell)
        if not (math.isfinite(mu) and math.isfinite(ell)) or abs(ell) > 700:
            return -math.inf
        u = math.exp(-ell)
        q = self.s2 - 2.0 * mu * self.s1 + self.n * mu * mu
        z = (mu + 1.0) * math.exp(-0.5 * ell)
        v = (
            -0.5 * self.n * ell - 0.5 * q * u - self.n * float(special.log_ndtr(z))
            + (self.b1 - mu * self.b0) * u - 0.5 * self.a * q * u * u
            - 0.5 * (mu - self.mu0) ** 2 / self.v0 - self.k0 * ell - self.t0 * u
        )
        # overflow far in the tails: treat as zero density rather than nan
        return v if math.isfinite(v) else -math.inf

    def derivatives(self, mu: float, ell: float):
        """(g_mu, g_ell, h_mm, h_ml, h_ll) as plain floats."""
        n = self.n
        u = math.exp(-ell)
        q = self.s2 - 2.0 * mu * self.s1 + n * mu * mu
        q_mu = 2.0 * (n * mu - self.s1)
        lin = self.b1 - mu * self.b0
        g_mu = -0.5 * q_mu * u - self.b0 * u - 0.5 * self.a * q_mu * u * u - (mu - self.mu0) / self.v0
        g_ell = -0.5 * n + 0.5 * q * u - lin * u + self.a * q * u * u - self.k0 + self.t0 * u
        h_mm = -n * u - self.a * n * u * u - 1.0 / self.v0
        h_ml = 0.5 * q_mu * u + self.b0 * u + self.a * q_mu * u * u
        h_ll = -0.5 * q * u + lin * u - 2.0 * self.a * q * u * u - self.t0 * u
        if n:
            # -n log Phi(z) with z = (mu + 1) exp(-ell / 2)
            z_mu = math.exp(-0.5 * ell)
            z = (mu + 1.0) * z_mu
            z_l = -0.5 * z
            mills = math.exp(-0.5 * z * z - 0.5 * LOG_2PI - float(special.log_ndtr(z)))
            dmills = -mills * (z + mills)
            g_mu -= n * mills * z_mu
            g_ell -= n * mills * z_l
            h_mm -= n * dmills * z_mu * z_mu
            h_ml -= n * (dmills * z_mu * z_l - 0.5 * mills * z_mu)
            h_ll -= n * (dmills * z_l * z_l + 0.25 * mills * z)
        return g_mu, g_ell, h_mm, h_ml, h_ll

    def grad_hess(self, mu: float, ell: float):
        g_mu, g_ell, h_mm, h_ml, h_ll = self.derivatives(float(mu), float(ell))
        return np.array([g_mu, g_ell]), np.array([[h_mm, h_ml], [h_ml, h_ll]])


def find_mode(target: MuSigmaTarget, start, max_steps: int = 20, tol: float = 1e-8):
    """Damped Newton ascent. Returns (mode, hessian) or None on failure."""
    mu, ell = float(start[0]), float(start[1])
    fx = target.logp(mu, ell)
    if not math.isfinite(fx):
        return None
    for _ in range(max_steps):
        g1, g2, a, b, c = target.derivatives(mu, ell)
        det = a * c - b * b
        if not all(map(math.isfinite, (g1, g2, a, b, c))) or a >= 0 or det <= 0:
            return None
        s1 = -(c * g1 - b * g2) / det
        s2 = -(a * g2 - b * g1) / det
        t = 1.0
        for _ in range(30):
            fn = target.logp(mu + t * s1, ell + t * s2)
            if fn >= fx - 1e-12:
                break
            t *= 0.5
        else:
            return None
        mu, ell, fx = mu + t * s1, ell + t * s2, fn
        if max(abs(t * s1), abs(t * s2)) < tol:
            _, _, a, b, c = target.derivatives(mu, ell)
            if a >= 0 or a * c - b * b <= 0:
                return None
            return np.array([mu, ell]), np.array([[a, b], [b, c]])
    return None


@dataclass
class MHResult:
    mu_y: float
    sigma2_y: float
    accepted: bool
    method: str


def _rw_step(target: MuSigmaTarget, x, step: float, rng) -> tuple[np.ndarray, bool]:
    y = x + step * rng.standard_normal(2)
    log_ratio = target.logp(*y) - target.logp(*x)
    if math.log(rng.random()) < log_ratio:
        return y, True
    return x, False


def _armh_step(target: MuSigmaTarget, x, rng, max_tries: int = 500):
    """Acceptance-rejection Metropolis-Hastings (Tierney 1994).

    Proposal: normal approximation at the mode, scaled so that f = c h there.
    Returns None if the mode search or the rejection stage fails.
    """
    found = find_mode(target, x)
    if found is None:
        return None
    (m1, m2), ((a, b), (_, c)) = found
    det = a * c - b * b
    # Cholesky factor of the proposal covariance inv(-H)
    l11 = math.sqrt(-c / det)
    l21 = (b / det) / l11
    v22 = -a / det - l21 * l21
    if not v22 > 0:
        return None
    l22 = math.sqrt(v22)
    log_norm = -LOG_2PI - math.log(l11) - math.log(l22)

    def log_ratio(v1, v2):  # log f(v) / (c h(v)) up to the constant at the mode
        r1 = (v1 - m1) / l11
        r2 = (v2 - m2 - l21 * r1) / l22
        return target.logp(v1, v2) - log_norm + 0.5 * (r1 * r1 + r2 * r2)

    log_c = target.logp(m1, m2) - log_norm
    for _ in range(max_tries):
        z1, z2 = rng.standard_normal(2)
        y1, y2 = m1 + l11 * z1, m2 + l21 * z1 + l22 * z2
        ly = log_ratio(y1, y2) - log_c
        if math.log(rng.random()) <= ly:
            break
    else:
        return None
    lx = log_ratio(float(x[0]), float(x[1])) - log_c
    if lx < 0:
        log_alpha = 0.0
    elif ly < 0:
        log_alpha = -lx
    else:
        log_alpha = min(0.0, ly - lx)
    if math.log(rng.random()) < log_alpha:
        return np.array([y1, y2]), True
    return x, False


def update_mu_sigma_y(ystar, X, atom: ClusterAtom, base: BaseMeasure, phase: str,
                      rng: np.random.Generator, rw_step: float = 0.1,
                      include_x_term: bool = True) -> MHResult:
    """One MH transition for (mu_y, sigma2_y) of a cluster.

    Empty clusters are drawn from the prior.  In the accept-reject phase a
    failed mode search falls back to a random-walk move.
    """
    if np.size(ystar) == 0:
        mu = base.mu_y0 + math.sqrt(base.sigma2_y0) * rng.standard_normal()
        s2 = base.t0 / rng.standard_gamma(base.k0)
        return MHResult(float(mu), float(s2), True, "prior")
    target = MuSigmaTarget(ystar, X, atom, base, include_x_term)
    x = np.array([atom.mu_y, math.log(atom.sigma2_y)])
    method = RANDOM_WALK
    if phase == ACCEPT_REJECT:
        out = _armh_step(target, x, rng)
        if out is not None:
            x_new, acc = out
            method = ACCEPT_REJECT
        else:
            x_new, acc = _rw_step(target, x, rw_step, rng)
            method = "fallback"
    else:
        x_new, acc = _rw_step(target, x, rw_step, rng)
    return MHResult(float(x_new[0]), float(math.exp(x_new[1])), acc, method)


# ---------------------------------------------------------------------------
# conjugate blocks
# ---------------------------------------------------------------------------

def _adjusted(ystar, X, atom: ClusterAtom) -> np.ndarray:
    """x_i - eta (y*_i - mu_y) / sigma2_y."""
    d = (np.asarray(ystar, dtype=float) - atom.mu_y) / atom.sigma2_y
    return np.atleast_2d(X) - np.outer(d, atom.eta)


def mu_x_conditional(ystar, X, atom: ClusterAtom, base: BaseMeasure):
    n = np.size(ystar)
    prec = n * atom.prec_c + base.prec_x0
    cov = np.linalg.inv(prec)
    lin = base.prec_x0 @ base.mu_x0
    if n:
        lin = lin + atom.prec_c @ _adjusted(ystar, X, atom).sum(axis=0)
    return cov @ lin, 0.5 * (cov + cov.T)


def update_mu_x(ystar, X, atom, base, rng) -> np.ndarray:
    mean, cov = mu_x_conditional(ystar, X, atom, base)
    return sample_mvnormal(mean, cov, rng)


def sigma_c_conditional(ystar, X, atom: ClusterAtom, base: BaseMeasure):
    n = np.size(ystar)
    scale = base.S0.copy()
    if n:
        e = _adjusted(ystar, X, atom) - atom.mu_x
        scale = scale + e.T @ e
    return base.n0 + n, scale


def update_sigma_c(ystar, X, atom, base, rng) -> np.ndarray:
    dof, scale = sigma_c_conditional(ystar, X, atom, base)
    return sample_inverse_wishart(dof, scale, rng)


def eta_conditional(ystar, X, atom: ClusterAtom, base: BaseMeasure):
    d = np.asarray(ystar, dtype=float) - atom.mu_y
    s2 = atom.sigma2_y
    prec = float(d @ d) / s2 ** 2 * atom.prec_c + base.prec_eta0
    cov = np.linalg.inv(prec)
    lin = base.prec_eta0 @ base.mu_eta0
    if d.size:
        lin = lin + atom.prec_c @ ((np.atleast_2d(X) - atom.mu_x).T @ d) / s2
    return cov @ lin, 0.5 * (cov + cov.T)


def update_eta(ystar, X, atom, base, rng) -> np.ndarray:
    mean, cov = eta_conditional(ystar, X, atom, base)
    return sample_mvnormal(mean, cov, rng)


# ---------------------------------------------------------------------------
# latent responses
# ---------------------------------------------------------------------------

def latent_moments(X, atom: ClusterAtom, paper_form: bool = False):
    mean, var = atom.conditional_moments(X, paper_form=paper_form)
    if np.any(np.asarray(var) <= 0):
        raise ValueError(f"nonpositive latent variance {var} (paper_form={paper_form})")
    return mean, np.broadcast_to(np.sqrt(var), np.shape(mean))


def update_latent(y, X, atom: ClusterAtom, rng: np.random.Generator,
                  paper_form: bool = False) -> np.ndarray:
    """Draw y*_i on (y_i - 1, y_i] from its conditional given x_i and the atom."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean, sd = latent_moments(np.atleast_2d(X), atom, paper_form)
    return truncated_normal(mean, sd, y - 1.0, y, rng)
