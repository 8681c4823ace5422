"""Importance conditional sampling (ICS) Gibbs sampler for the PY mixture."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2

from ..errors import NumericalError
from ..stochastic import truncated_normal
from .model import AtomBatch, BaseMeasure, ClusterAtom, Dataset, PYParams
from .pitman_yor import sample_fresh_atoms, sample_mixture_weights, urn_sequence
from .updates import (
    ACCEPT_REJECT,
    RANDOM_WALK,
    update_eta,
    update_mu_sigma_y,
    update_mu_x,
    update_sigma_c,
    latent_moments,
)

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    burn_in: int = 2000
    iterations: int = 20000
    thin: int = 10
    M: int = 10
    rw_switch: int | None = None
    rw_step: float = 0.1
    shared_fresh: bool = False

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations < 1 or self.thin < 1 or self.M < 1:
            raise ValueError(f"invalid schedule {self}")
        if self.rw_step <= 0:
            raise ValueError("rw_step must be positive")

    @property
    def switch_iteration(self) -> int:
        return self.burn_in // 2 if self.rw_switch is None else self.rw_switch

    @property
    def n_retained(self) -> int:
        return self.iterations // self.thin


@dataclass
class SamplerState:
    assignments: np.ndarray
    atoms: list[ClusterAtom]
    latent: np.ndarray
    iteration: int = 0
    mh_phase: str = RANDOM_WALK
    rw_step: float = 0.1
    diagnostics: dict = field(default_factory=lambda: {
        "rw_attempts": 0, "rw_accepts": 0,
        "ar_attempts": 0, "ar_accepts": 0, "ar_fallbacks": 0,
        "degenerate_assignments": 0,
    })

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=len(self.atoms))

    @property
    def n_clusters(self) -> int:
        return len(self.atoms)

    def check(self, y: np.ndarray) -> None:
        """Raise if a sampler invariant is broken."""
        counts = self.counts
        if counts.sum() != y.size or np.any(counts == 0):
            raise NumericalError("occupancy table out of sync with assignments")
        if np.any(self.latent <= y - 1) or np.any(self.latent > y):
            raise NumericalError("latent value outside its rounding interval")
        for a in self.atoms:
            if not a.sigma2_y > 0:
                raise NumericalError("nonpositive sigma2_y")
            np.linalg.cholesky(a.Sigma_c)


@dataclass
class PosteriorDraw:
    """One frozen draw of the mixing measure: occupied atoms plus M residual draws."""

    pi0: float
    weights: np.ndarray
    atoms: list[ClusterAtom]
    fresh_atoms: list[ClusterAtom]
    multiplicities: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.multiplicities = np.asarray(self.multiplicities, dtype=np.int64)
        if len(self.atoms) != self.weights.size:
            raise ValueError("one weight per occupied atom required")
        if len(self.fresh_atoms) != self.multiplicities.size:
            raise ValueError("one multiplicity per fresh atom required")
        if abs(self.pi0 + self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to one")

    @property
    def M(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def n_clusters(self) -> int:
        return len(self.atoms)

    def components(self):
        """(weight, atom) pairs with fresh atoms weighted pi0 * m_h / M."""
        out = [(self.pi0 * m / self.M, a) for m, a in zip(self.multiplicities, self.fresh_atoms)]
        out += [(float(w), a) for w, a in zip(self.weights, self.atoms)]
        return out

    def to_dict(self) -> dict:
        return {
            "iteration": int(self.iteration),
            "pi0": float(self.pi0),
            "weights": self.weights.tolist(),
            "atoms": [a.to_dict() for a in self.atoms],
            "fresh_atoms": [a.to_dict() for a in self.fresh_atoms],
            "multiplicities": self.multiplicities.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorDraw":
        return cls(
            pi0=d["pi0"],
            weights=np.array(d["weights"], dtype=float),
            atoms=[ClusterAtom.from_dict(a) for a in d["atoms"]],
            fresh_atoms=[ClusterAtom.from_dict(a) for a in d["fresh_atoms"]],
            multiplicities=np.array(d["multiplicities"], dtype=np.int64),
            iteration=d.get("iteration", 0),
        )


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _moment_atom(ystar, X, base: BaseMeasure) -> ClusterAtom:
    n = ystar.size
    var_floor = base.t0 / (base.k0 + 1.0) / 10.0
    s2 = max(float(np.var(ystar)), var_floor) if n > 1 else var_floor
    xc = X - X.mean(axis=0)
    sigma_c = (base.S0 + xc.T @ xc) / (base.n0 + n)
    return ClusterAtom(float(ystar.mean()), s2, X.mean(axis=0), sigma_c, np.zeros(X.shape[1]))


def init_state(data: Dataset, base: BaseMeasure, py: PYParams, rng: np.random.Generator,
               n_init_clusters: int = 10, rw_step: float = 0.1) -> SamplerState:
    """Latents uniform on their rounding cells, k-means partition of (y, X)."""
    y = data.y.astype(float)
    latent = y - rng.random(data.n)
    latent = np.clip(latent, np.nextafter(y - 1.0, np.inf), y)
    k = min(n_init_clusters, data.n)
    z = np.column_stack([y, data.X])
    sd = z.std(axis=0)
    z = (z - z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if k > 1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(z, k, minit="++", seed=rng)
    else:
        labels = np.zeros(data.n, dtype=int)
    _, labels = np.unique(labels, return_inverse=True)
    atoms = [_moment_atom(latent[labels == j], data.X[labels == j], base)
             for j in range(labels.max() + 1)]
    return SamplerState(labels.astype(np.int64), atoms, latent, rw_step=rw_step)


# ---------------------------------------------------------------------------
# one ICS sweep
# ---------------------------------------------------------------------------

def _mahalanobis_nearest(z: np.ndarray, atoms: list[ClusterAtom]) -> int:
    d = []
    for a in atoms:
        r = z - a.joint_mean
        d.append(float(r @ np.linalg.solve(a.joint_cov, r)))
    return int(np.argmin(d))


def fresh_blocks(n_obs: int, n_occupied: int, py: PYParams, M: int, rng: np.random.Generator,
                 shared: bool = False) -> np.ndarray:
    """``n_obs x M`` labels of residual-process draws, one block per observation.

    All blocks come from one urn sequence, so a fresh value may appear in
    several blocks.  With ``shared`` every observation sees the same block.
    """
    if shared:
        return np.tile(urn_sequence(n_occupied, py, M, rng), (n_obs, 1))
    return urn_sequence(n_occupied, py, n_obs * M, rng).reshape(n_obs, M)


def assign_clusters(ystar, X, atoms: list[ClusterAtom], log_weights, fresh: AtomBatch,
                    blocks: np.ndarray, log_pi0: float, rng: np.random.Generator,
                    prior_only: bool = False, state: SamplerState | None = None) -> np.ndarray:
    """Sample a cluster for every observation.

    Observation i chooses occupied atom k with mass ``pi_k k(z_i; atom_k)`` or
    slot m of its block with mass ``pi_0 / M * k(z_i; fresh[blocks[i, m]])``,
    so a fresh value seen m_h times in the block carries ``pi_0 m_h / M``.
    Returns indices into ``atoms + fresh``.  Masses are handled in log space;
    rows whose masses are all non-finite go to the Mahalanobis-nearest candidate.
    """
    X = np.atleast_2d(X)
    n, K = np.size(ystar), len(atoms)
    M = blocks.shape[1]
    logm = np.empty((n, K + M))
    logm[:, :K] = log_weights
    logm[:, K:] = log_pi0 - np.log(M)
    if not prior_only:
        for k, atom in enumerate(atoms):
            logm[:, k] += atom.log_kernel(ystar, X)
        rows = np.repeat(np.arange(n), M)
        logm[:, K:] += fresh.log_kernel_pairs(ystar[rows], X[rows], blocks.ravel()).reshape(n, M)
    row_max = logm.max(axis=1)
    bad = ~np.isfinite(row_max)
    row_max[bad] = 0.0
    p = np.exp(logm - row_max[:, None])
    p[~np.isfinite(p)] = 0.0
    cum = np.cumsum(p, axis=1)
    total = cum[:, -1]
    bad |= ~(total > 0)
    u = rng.random(n) * total
    choice = np.minimum((cum < u[:, None]).sum(axis=1), K + M - 1)
    for i in np.flatnonzero(bad):
        z = np.concatenate([[ystar[i]], X[i]])
        cands = list(atoms) + [fresh.atom(h) for h in blocks[i]]
        choice[i] = _mahalanobis_nearest(z, cands)
        log.warning("assignment masses degenerate for observation %d; using nearest atom", i)
        if state is not None:
            state.diagnostics["degenerate_assignments"] += 1
    labels = choice.copy()
    slot = choice >= K
    labels[slot] = K + blocks[np.flatnonzero(slot), choice[slot] - K]
    return labels


def gibbs_step(state: SamplerState, data: Dataset, base: BaseMeasure, py: PYParams,
               schedule: Schedule, rng: np.random.Generator, prior_only: bool = False,
               paper_latent: bool = False, include_x_term: bool = True) -> SamplerState:
    y = data.y.astype(float)
    X = data.X

    # steps 1-2: weights given the current partition, fresh values per observation
    pi0, weights = sample_mixture_weights(state.counts, py, rng)
    blocks = fresh_blocks(data.n, state.n_clusters, py, schedule.M, rng, schedule.shared_fresh)
    fresh = base.sample_atoms(int(blocks.max()) + 1, rng)

    # step 3: allocation, then drop empty atoms
    labels = assign_clusters(state.latent, X, state.atoms, np.log(weights), fresh, blocks,
                             float(np.log(pi0)), rng, prior_only, state)
    K = state.n_clusters
    used, labels = np.unique(labels, return_inverse=True)
    atoms = [state.atoms[j] if j < K else fresh.atom(j - K) for j in used]
    state.assignments = labels.astype(np.int64)

    phase = ACCEPT_REJECT if state.iteration >= schedule.switch_iteration else RANDOM_WALK
    state.mh_phase = phase
    diag = state.diagnostics
    new_atoms = []
    for k, atom in enumerate(atoms):
        if prior_only:
            new_atoms.append(base.sample_atom(rng))
            continue
        idx = np.flatnonzero(labels == k)
        ys, xs = state.latent[idx], X[idx]
        res = update_mu_sigma_y(ys, xs, atom, base, phase, rng, state.rw_step, include_x_term)
        if res.method == ACCEPT_REJECT:
            diag["ar_attempts"] += 1
            diag["ar_accepts"] += res.accepted
        else:
            diag["rw_attempts"] += 1
            diag["rw_accepts"] += res.accepted
            if res.method == "fallback":
                diag["ar_fallbacks"] += 1
        atom = replace(atom, mu_y=res.mu_y, sigma2_y=res.sigma2_y)
        atom = replace(atom, mu_x=update_mu_x(ys, xs, atom, base, rng))
        atom = replace(atom, Sigma_c=update_sigma_c(ys, xs, atom, base, rng))
        atom = replace(atom, eta=update_eta(ys, xs, atom, base, rng))
        new_atoms.append(atom)
    state.atoms = new_atoms

    # latent responses
    if prior_only:
        state.latent = np.clip(y - rng.random(y.size), np.nextafter(y - 1.0, np.inf), y)
    else:
        mean = np.empty(y.size)
        sd = np.empty(y.size)
        for k, atom in enumerate(new_atoms):
            idx = np.flatnonzero(labels == k)
            m, s = latent_moments(X[idx], atom, paper_latent)
            mean[idx], sd[idx] = m, s
        state.latent = truncated_normal(mean, sd, y - 1.0, y, rng)
    state.iteration += 1
    return state


def snapshot(state: SamplerState, py: PYParams, base: BaseMeasure, M: int,
             rng: np.random.Generator) -> PosteriorDraw:
    """Draw the mixing measure given the current atoms and freeze it."""
    pi0, weights = sample_mixture_weights(state.counts, py, rng)
    fresh = sample_fresh_atoms(state.n_clusters, py, base, M, rng)
    return PosteriorDraw(pi0, weights, list(state.atoms), fresh.atoms,
                         fresh.multiplicities, state.iteration)


@dataclass
class ChainResult:
    draws: list[PosteriorDraw]
    cluster_trace: np.ndarray          # K_N after every iteration
    retained_clusters: np.ndarray      # K_N at each retained draw
    diagnostics: dict
    state: SamplerState

    def acceptance_rates(self) -> dict:
        d = self.diagnostics
        rate = lambda a, n: (a / n) if n else float("nan")
        return {
            "random_walk": rate(d["rw_accepts"], d["rw_attempts"]),
            "accept_reject": rate(d["ar_accepts"], d["ar_attempts"]),
            "ar_fallbacks": d["ar_fallbacks"],
        }


def run_chain(data: Dataset, base: BaseMeasure, py: PYParams, schedule: Schedule,
              rng: np.random.Generator, prior_only: bool = False,
              paper_latent: bool = False, include_x_term: bool = True,
              state: SamplerState | None = None, check_every: int = 0) -> ChainResult:
    """Run burn-in plus ``schedule.iterations`` sweeps, keeping every ``thin``-th."""
    if state is None:
        state = init_state(data, base, py, rng, rw_step=schedule.rw_step)
    draws = []
    trace = np.empty(schedule.burn_in + schedule.iterations, dtype=np.int64)
    total = schedule.burn_in + schedule.iterations
    for t in range(total):
        try:
            gibbs_step(state, data, base, py, schedule, rng, prior_only, paper_latent,
                       include_x_term)
            if check_every and t % check_every == 0:
                state.check(data.y.astype(float))
        except NumericalError as exc:
            raise NumericalError(f"iteration {t}: {exc}") from exc
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise NumericalError(f"iteration {t}: {exc}") from exc
        trace[t] = state.n_clusters
        post = t - schedule.burn_in
        if post >= 0 and (post + 1) % schedule.thin == 0:
            draws.append(snapshot(state, py, base, schedule.M, rng))
    d = state.diagnostics
    if d["rw_attempts"]:
        log.info("random-walk acceptance %.3f over %d updates",
                 d["rw_accepts"] / d["rw_attempts"], d["rw_attempts"])
    if d["ar_attempts"]:
        log.info("accept-reject MH acceptance %.3f over %d updates (%d fallbacks)",
                 d["ar_accepts"] / d["ar_attempts"], d["ar_attempts"], d["ar_fallbacks"])
    retained = np.array([dr.n_clusters for dr in draws], dtype=np.int64)
    return ChainResult(draws, trace, retained, dict(d), state)
