"""Pitman-Yor prior machinery: cluster-count law, calibration, ICS urns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import gammaln, gammasgn

from ..errors import DomainError
from ..stochastic import sample_dirichlet
from .model import BaseMeasure, ClusterAtom, PYParams


def simulate_cluster_counts(py: PYParams, n: int, reps: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of K_n, the number of occupied tables after n seats.

    Seat m + 1 opens a table with probability (strength + discount K) / (strength + m).
    """
    k = np.ones(reps, dtype=np.int64)
    for m in range(1, n):
        p_new = (py.strength + py.discount * k) / (py.strength + m)
        k += rng.random(reps) < p_new
    return k


def cluster_count_pmf(py: PYParams, n: int) -> np.ndarray:
    """Exact law of K_n by forward recursion; index = number of clusters."""
    pmf = np.zeros(n + 1)
    pmf[1] = 1.0
    k = np.arange(n + 1)
    for m in range(1, n):
        p_new = (py.strength + py.discount * k) / (py.strength + m)
        nxt = pmf * (1.0 - p_new)
        nxt[1:] += pmf[:-1] * p_new[:-1]
        pmf = nxt
    return pmf


def _log_rising(x: float, n: int):
    return gammaln(x + n) - gammaln(x), gammasgn(x + n) * gammasgn(x)


def cluster_count_moments(py: PYParams, n: int) -> tuple[float, float]:
    """Prior mean and standard deviation of K_n in closed form.

    For discount > 0 the shifted count c + K_n with c = strength / discount
    has rising-factorial moments
    E[(c + K_n)^(r)] = c^(r) (strength + r discount)^(n) / strength^(n).
    """
    phi, th = py.discount, py.strength
    if phi == 0.0:
        i = np.arange(n)
        p = th / (th + i)
        return float(p.sum()), float(np.sqrt(np.sum(p * (1 - p))))
    if th == 0.0:
        # limit of the general formula; fall back to the exact recursion
        pmf = cluster_count_pmf(py, n)
        k = np.arange(n + 1)
        m = float(pmf @ k)
        return m, float(np.sqrt(max(pmf @ (k * k) - m * m, 0.0)))
    c = th / phi
    l0, s0 = _log_rising(th, n)
    l1, s1 = _log_rising(th + phi, n)
    l2, s2 = _log_rising(th + 2 * phi, n)
    r1 = s1 * s0 * np.exp(l1 - l0)
    r2 = s2 * s0 * np.exp(l2 - l0)
    first = c * r1                      # E[c + K]
    second = c * (c + 1) * r2           # E[(c + K)(c + K + 1)]
    mean = first - c
    var = second - first - first * first
    return float(mean), float(np.sqrt(max(var, 0.0)))


def solve_py_params(target_mean: float, target_sd: float, n: int) -> PYParams:
    """Discount and strength whose prior K_n has the requested mean and sd.

    Nested bracketing: for a given discount the strength matching the mean
    is found first, then the discount is tuned to hit the sd.
    """
    if not 1.0 < target_mean < n:
        raise DomainError(f"target mean must lie in (1, {n})")
    if target_sd <= 0:
        raise DomainError("target sd must be positive")

    def strength_for(phi: float) -> float:
        lo = -phi + 1e-10 * max(phi, 1.0)
        f = lambda th: cluster_count_moments(PYParams(phi, th), n)[0] - target_mean
        if f(lo) > 0:
            raise DomainError("mean unattainable: smallest strength already too large")
        hi = max(1.0, target_mean)
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e12:
                raise DomainError("mean unattainable")
        return optimize.brentq(f, lo, hi, xtol=1e-12, rtol=1e-14)

    def sd_gap(phi: float) -> float:
        return cluster_count_moments(PYParams(phi, strength_for(phi)), n)[1] - target_sd

    phi_lo, phi_hi = 0.0, 1.0 - 1e-6
    # large discounts may make the mean unreachable; shrink the upper end
    try:
        g_lo = sd_gap(phi_lo)
    except DomainError:
        raise DomainError("targets infeasible for any discount in [0, 1)") from None
    while True:
        try:
            g_hi = sd_gap(phi_hi)
            break
        except DomainError:
            phi_hi = 0.5 * (phi_lo + phi_hi)
            if phi_hi - phi_lo < 1e-9:
                raise DomainError("targets infeasible for any discount in [0, 1)") from None
    if g_lo > 0 or g_hi < 0:
        raise DomainError(
            f"sd {target_sd} infeasible for mean {target_mean} at n={n}: "
            f"attainable range [{g_lo + target_sd:.4g}, {g_hi + target_sd:.4g}]"
        )
    phi = optimize.brentq(sd_gap, phi_lo, phi_hi, xtol=1e-12)
    return PYParams(float(phi), float(strength_for(phi)))


def sample_mixture_weights(counts, py: PYParams, rng: np.random.Generator):
    """(pi_0, pi_1..pi_K) ~ Dir(strength + discount K, n_1 - discount, ...)."""
    counts = np.asarray(counts, dtype=float)
    alphas = np.concatenate([[py.strength + py.discount * counts.size],
                             counts - py.discount])
    w = sample_dirichlet(alphas, rng)
    return float(w[0]), w[1:]


@dataclass
class FreshAtoms:
    atoms: list[ClusterAtom]
    multiplicities: np.ndarray

    @property
    def M(self) -> int:
        return int(self.multiplicities.sum())


def urn_sequence(n_occupied: int, py: PYParams, length: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Distinct-value labels of ``length`` sequential draws from the residual PY.

    Draw h + 1 is new with probability (b + discount r) / (b + h), where
    b = strength + discount * n_occupied and r values are already seen;
    otherwise it repeats value j with probability (m_j - discount) / (b + h).
    Labels number the distinct values in order of appearance.
    """
    if length < 1:
        raise DomainError("need at least one draw")
    b = py.strength + py.discount * n_occupied
    if b <= 0:
        raise DomainError("residual strength must be positive")
    phi = py.discount
    labels: list[int] = []
    counts: list[int] = []
    u, pick, keep = rng.random((3, length)).tolist()
    for h in range(length):
        r = len(counts)
        if r == 0 or u[h] * (b + h) < b + phi * r:
            labels.append(r)
            counts.append(1)
            continue
        # pick a previous draw uniformly (mass m_j), keep it w.p. (m_j - phi) / m_j
        j = labels[int(pick[h] * h)]
        v = keep[h]
        while v * counts[j] >= counts[j] - phi:
            j = labels[int(rng.random() * h)]
            v = rng.random()
        labels.append(j)
        counts[j] += 1
    return np.asarray(labels, dtype=np.int64)


def urn_multiplicities(n_occupied: int, py: PYParams, M: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Tie pattern of M draws from the residual PY(discount, strength + discount K)."""
    if M < 1:
        raise DomainError("M must be at least 1")
    return np.bincount(urn_sequence(n_occupied, py, M, rng))


def sample_fresh_atoms(n_occupied: int, py: PYParams, base: BaseMeasure, M: int,
                       rng: np.random.Generator) -> FreshAtoms:
    """Distinct values and tie counts of M draws from the residual process."""
    mult = urn_multiplicities(n_occupied, py, M, rng)
    atoms = [base.sample_atom(rng) for _ in range(mult.size)]
    return FreshAtoms(atoms, mult)
