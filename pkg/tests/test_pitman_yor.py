import numpy as np
import pytest

from countqr.errors import DomainError
from countqr.mixture.model import BaseMeasure, PYParams
from countqr.mixture.pitman_yor import (
    cluster_count_moments,
    cluster_count_pmf,
    sample_fresh_atoms,
    sample_mixture_weights,
    simulate_cluster_counts,
    solve_py_params,
    urn_multiplicities,
    urn_sequence,
)
from countqr.stochastic import make_rng

BASE = BaseMeasure(0.0, 1.0, 3.0, 1.0, [0.0], [[1.0]], 3.0, [[1.0]], [0.0], [[1.0]])


def brute_force_pmf(py, n):
    """K_n law by enumerating seating sequences (small n only)."""
    out = {}

    def walk(m, k, prob):
        if m == n:
            out[k] = out.get(k, 0.0) + prob
            return
        p_new = (py.strength + py.discount * k) / (py.strength + m)
        walk(m + 1, k + 1, prob * p_new)
        walk(m + 1, k, prob * (1 - p_new))

    walk(1, 1, 1.0)
    return np.array([out.get(k, 0.0) for k in range(n + 1)])


class TestClusterCountLaw:
    @pytest.mark.parametrize("d,s", [(0.0, 1.0), (0.3, 1.0), (0.5, -0.2), (0.7, 3.0)])
    def test_pmf_against_enumeration(self, d, s):
        py = PYParams(d, s)
        np.testing.assert_allclose(cluster_count_pmf(py, 9), brute_force_pmf(py, 9), atol=1e-14)

    @pytest.mark.parametrize("d,s,n", [(0.0, 2.0, 50), (0.4777, -0.2171, 300), (0.3, 0.0, 40), (0.6, 5.0, 200)])
    def test_closed_form_moments_match_pmf(self, d, s, n):
        py = PYParams(d, s)
        pmf = cluster_count_pmf(py, n)
        k = np.arange(n + 1)
        mean = pmf @ k
        sd = np.sqrt(pmf @ k ** 2 - mean ** 2)
        m, v = cluster_count_moments(py, n)
        assert m == pytest.approx(mean, rel=1e-9)
        assert v == pytest.approx(sd, rel=1e-8)

    def test_simulation_matches_pmf(self):
        py = PYParams(0.4, 0.5)
        k = simulate_cluster_counts(py, 60, 200000, make_rng(0))
        pmf = cluster_count_pmf(py, 60)
        freq = np.bincount(k, minlength=61) / k.size
        assert np.abs(freq - pmf).max() < 0.005


class TestSolvePY:
    @pytest.mark.parametrize("mean,sd,n", [(20, 20, 1000), (20, 40, 1000), (10, 20, 498), (5, 3, 100)])
    def test_targets_hit_in_closed_form(self, mean, sd, n):
        py = solve_py_params(mean, sd, n)
        m, s = cluster_count_moments(py, n)
        assert m == pytest.approx(mean, rel=1e-8)
        assert s == pytest.approx(sd, rel=1e-8)

    @pytest.mark.parametrize("mean,sd,n,phi,theta", [
        (20, 20, 1000, 0.4777, -0.2171),
        (20, 40, 1000, 0.6442, -0.5749),
        (10, 20, 498, 0.6036, -0.5322),
    ])
    def test_near_published_calibration(self, mean, sd, n, phi, theta):
        py = solve_py_params(mean, sd, n)
        assert abs(py.discount - phi) <= 0.02
        assert abs(py.strength - theta) <= 0.03

    def test_monte_carlo_within_two_percent(self):
        py = solve_py_params(20, 20, 1000)
        k = simulate_cluster_counts(py, 1000, 100000, make_rng(1))
        assert k.mean() == pytest.approx(20, rel=0.02)
        assert k.std() == pytest.approx(20, rel=0.02)

    @pytest.mark.parametrize("mean,sd,n", [(20, 1.0, 1000), (1.0, 5.0, 100), (200, 10, 100), (20, 0.0, 1000)])
    def test_infeasible(self, mean, sd, n):
        with pytest.raises(DomainError):
            solve_py_params(mean, sd, n)


class TestMixtureWeights:
    def test_single_cluster_pi0_mean(self):
        py = PYParams(0.3, 2.0)
        rng = make_rng(2)
        pi0 = np.array([sample_mixture_weights([40], py, rng)[0] for _ in range(40000)])
        expect = (py.strength + py.discount) / (py.strength + 40)
        se = pi0.std() / np.sqrt(pi0.size)
        assert abs(pi0.mean() - expect) < 4 * se

    def test_dirichlet_process_cells(self):
        py = PYParams(0.0, 1.5)
        rng = make_rng(3)
        w = np.array([np.concatenate([[p0], pk]) for p0, pk in
                      (sample_mixture_weights([3, 7], py, rng) for _ in range(40000))])
        np.testing.assert_allclose(w.mean(axis=0), np.array([1.5, 3, 7]) / 11.5, atol=0.005)

    def test_sum_to_one(self):
        rng = make_rng(4)
        for counts in ([1], [1, 1, 1], [100, 2, 1]):
            p0, pk = sample_mixture_weights(counts, PYParams(0.9, -0.5), rng)
            assert p0 + pk.sum() == pytest.approx(1.0, abs=1e-12)
            assert pk.size == len(counts)


class TestUrn:
    def test_single_draw_is_new(self):
        rng = make_rng(5)
        for _ in range(100):
            np.testing.assert_array_equal(urn_multiplicities(3, PYParams(0.5, 0.1), 1, rng), [1])

    def test_multiplicities_sum(self):
        rng = make_rng(6)
        py = PYParams(0.4777, -0.2171)
        for _ in range(10000):
            m = urn_multiplicities(int(rng.integers(1, 30)), py, 10, rng)
            assert m.sum() == 10 and np.all(m >= 1)

    def test_labels_in_order_of_appearance(self):
        lab = urn_sequence(2, PYParams(0.3, 1.0), 500, make_rng(7))
        first = [lab.tolist().index(v) for v in range(lab.max() + 1)]
        assert first == sorted(first)

    @pytest.mark.parametrize("d,s,k_occ", [(0.0, 2.0, 1), (0.0, 0.5, 4), (0.5, -0.3, 3)])
    def test_distinct_count_law(self, d, s, k_occ):
        # distinct values among M residual draws follow the K_M law of PY(d, s + d k)
        py = PYParams(d, s)
        rng = make_rng(8)
        M = 12
        r = np.array([urn_sequence(k_occ, py, M, rng).max() + 1 for _ in range(40000)])
        pmf = cluster_count_pmf(PYParams(d, s + d * k_occ), M)
        freq = np.bincount(r, minlength=M + 1) / r.size
        assert np.abs(freq - pmf).max() < 0.01

    def test_long_sequence_matches_law(self):
        py = PYParams(0.4777, -0.2171)
        rng = make_rng(9)
        r = np.array([urn_sequence(5, py, 300, rng).max() + 1 for _ in range(3000)])
        mean, sd = cluster_count_moments(PYParams(0.4777, -0.2171 + 0.4777 * 5), 300)
        assert r.mean() == pytest.approx(mean, abs=4 * sd / np.sqrt(r.size))

    def test_fresh_atoms(self):
        f = sample_fresh_atoms(4, PYParams(0.5, 1.0), BASE, 10, make_rng(10))
        assert f.M == 10 and len(f.atoms) == f.multiplicities.size

    def test_bad_sizes(self):
        with pytest.raises(DomainError):
            urn_multiplicities(1, PYParams(0.5, 1.0), 0, make_rng(0))
