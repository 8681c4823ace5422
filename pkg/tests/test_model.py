import numpy as np
import pytest
from scipy import stats

from countqr.errors import DataError, DomainError
from countqr.mixture.model import (
    AtomBatch,
    BaseMeasure,
    ClusterAtom,
    Dataset,
    PYParams,
    default_hyperparameters,
)
from countqr.stochastic import make_rng


def atom2():
    return ClusterAtom(1.5, 2.0, [0.3, -0.2], [[1.0, 0.3], [0.3, 0.8]], [0.6, -0.4])


class TestDataset:
    def test_valid_and_default_names(self):
        d = Dataset([0, 3, 1], [[0.1], [0.2], [0.3]])
        assert d.n == 3 and d.p == 1 and d.column_names == ["x1"]
        assert d.y.dtype.kind == "i"

    def test_vector_covariate_is_promoted(self):
        assert Dataset([1, 2], [0.5, 0.7]).X.shape == (2, 1)

    @pytest.mark.parametrize("y,X", [
        ([-1, 2], [[0.0], [1.0]]),
        ([1.5, 2], [[0.0], [1.0]]),
        ([1, 2], [[np.nan], [1.0]]),
        ([1], [[0.0]]),
        ([1, 2, 3], [[0.0], [1.0]]),
    ])
    def test_invalid(self, y, X):
        with pytest.raises(DataError):
            Dataset(y, X)

    def test_name_count_checked(self):
        with pytest.raises(DataError):
            Dataset([1, 2], [[0.0, 1.0], [1.0, 2.0]], ["a"])


class TestClusterAtom:
    def test_positive_variance_required(self):
        with pytest.raises(DomainError):
            ClusterAtom(0.0, 0.0, [0.0], [[1.0]], [0.0])

    def test_non_spd_sigma_c(self):
        a = ClusterAtom(0.0, 1.0, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0])
        with pytest.raises(DomainError):
            a.prec_c

    def test_implied_joint_covariance(self):
        a = atom2()
        np.testing.assert_allclose(a.Sigma_x, a.Sigma_c + np.outer(a.eta, a.eta) / a.sigma2_y)
        cov = a.joint_cov
        assert cov[0, 0] == a.sigma2_y
        np.testing.assert_allclose(cov[0, 1:], a.eta)
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_log_kernel_is_truncated_joint_normal(self):
        a = atom2()
        rng = make_rng(0)
        ys = rng.uniform(-0.9, 5, 20)
        X = rng.standard_normal((20, 2))
        mvn = stats.multivariate_normal(a.joint_mean, a.joint_cov)
        mass = stats.norm.sf(-1.0, a.mu_y, np.sqrt(a.sigma2_y))
        oracle = mvn.logpdf(np.column_stack([ys, X])) - np.log(mass)
        np.testing.assert_allclose(a.log_kernel(ys, X), oracle, rtol=0, atol=1e-10)

    def test_conditional_moments_match_gaussian_conditioning(self):
        a = atom2()
        X = make_rng(1).standard_normal((7, 2))
        sx_inv = np.linalg.inv(a.Sigma_x)
        mean = a.mu_y + (X - a.mu_x) @ sx_inv @ a.eta
        var = a.sigma2_y - a.eta @ sx_inv @ a.eta
        m, v = a.conditional_moments(X)
        np.testing.assert_allclose(m, mean, atol=1e-12)
        assert v == pytest.approx(var, abs=1e-12)

    def test_alternative_form_differs_when_eta_nonzero(self):
        a = atom2()
        X = np.array([[1.0, 1.0]])
        m0, v0 = a.conditional_moments(X)
        m1, v1 = a.conditional_moments(X, paper_form=True)
        assert v1 == pytest.approx(a.sigma2_y - a.eta_quad)
        assert abs(v1 - v0) > 0.05 and abs(m1 - m0).max() > 0.05

    def test_forms_agree_when_eta_zero(self):
        a = ClusterAtom(1.0, 2.0, [0.0], [[1.0]], [0.0])
        X = np.array([[0.5], [-2.0]])
        for form in (False, True):
            m, v = a.conditional_moments(X, paper_form=form)
            np.testing.assert_allclose(m, 1.0)
            assert v == pytest.approx(2.0)

    def test_log_marginal_x(self):
        a = atom2()
        X = make_rng(2).standard_normal((5, 2))
        oracle = stats.multivariate_normal(a.mu_x, a.Sigma_x).logpdf(X)
        np.testing.assert_allclose(a.log_marginal_x(X), oracle, atol=1e-12)

    def test_dict_round_trip(self):
        a = atom2()
        b = ClusterAtom.from_dict(a.to_dict())
        assert b.mu_y == a.mu_y and b.sigma2_y == a.sigma2_y
        np.testing.assert_array_equal(b.Sigma_c, a.Sigma_c)
        np.testing.assert_array_equal(b.eta, a.eta)


class TestAtomBatch:
    def test_pair_kernel_matches_single_atoms(self):
        rng = make_rng(3)
        atoms = [atom2(), ClusterAtom(-0.5, 0.7, [1.0, 0.0], [[0.5, 0.0], [0.0, 2.0]], [0.1, 0.2])]
        batch = AtomBatch.from_atoms(atoms)
        ys = rng.uniform(-0.9, 4, 12)
        X = rng.standard_normal((12, 2))
        h = rng.integers(0, 2, 12)
        expect = [atoms[j].log_kernel(ys[i:i + 1], X[i:i + 1])[0] for i, j in enumerate(h)]
        np.testing.assert_allclose(batch.log_kernel_pairs(ys, X, h), expect, atol=1e-12)
        assert batch.atom(1).mu_y == -0.5

    def test_batch_sampling_shapes_and_mean(self):
        base = BaseMeasure(1.0, 2.0, 3.0, 4.0, [0.0, 1.0], np.eye(2), 8.0, np.eye(2), [0.0, 0.0], np.eye(2))
        b = base.sample_atoms(20000, make_rng(4))
        assert len(b) == 20000 and b.Sigma_c.shape == (20000, 2, 2)
        assert b.mu_y.mean() == pytest.approx(1.0, abs=0.05)
        assert b.sigma2_y.mean() == pytest.approx(4.0 / 2.0, abs=0.1)
        np.testing.assert_allclose(b.Sigma_c.mean(axis=0), np.eye(2) / (8 - 2 - 1), atol=0.01)


class TestBaseMeasure:
    def test_non_spd_block(self):
        with pytest.raises(DomainError):
            BaseMeasure(0.0, 1.0, 3.0, 1.0, [0.0], [[-1.0]], 3.0, [[1.0]], [0.0], [[1.0]])

    def test_nonpositive_scalars(self):
        with pytest.raises(DomainError):
            BaseMeasure(0.0, 1.0, 0.0, 1.0, [0.0], [[1.0]], 3.0, [[1.0]], [0.0], [[1.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            BaseMeasure(0.0, 1.0, 3.0, 1.0, [0.0], [[1.0]], 3.0, np.eye(2), [0.0], [[1.0]])

    def test_dict_round_trip(self):
        base = BaseMeasure(0.5, 1.0, 3.0, 2.0, [0.0], [[1.0]], 3.0, [[1.0]], [0.2], [[10.0]])
        again = BaseMeasure.from_dict(base.to_dict())
        assert again.t0 == 2.0 and again.mu_eta0[0] == 0.2


class TestDefaultHyperparameters:
    def test_t0_from_response_variance(self):
        y = np.array([0, 4, 2])
        assert np.var(y, ddof=1) == pytest.approx(4.0)
        base = default_hyperparameters(Dataset(y, np.arange(3.0)))
        assert base.t0 == pytest.approx(8.0)
        assert base.k0 == 3.0
        assert base.sigma2_y0 == pytest.approx(8.0)
        assert base.mu_y0 == pytest.approx(y.mean())

    def test_single_covariate_with_unit_variance(self):
        x = np.array([-1.0, 1.0, -1.0, 1.0, 0.0, 0.0])
        x = x / x.std(ddof=1)
        base = default_hyperparameters(Dataset([0, 1, 2, 3, 1, 2], x))
        assert base.n0 == 3.0
        np.testing.assert_allclose(base.S0, [[1.0]])
        np.testing.assert_allclose(base.Sigma_x0, [[2.0]])
        np.testing.assert_allclose(base.Sigma_eta0, [[10.0]])

    def test_eta_center_is_scaled_covariance(self):
        rng = make_rng(5)
        X = rng.standard_normal((50, 2))
        y = rng.poisson(3, 50)
        base = default_hyperparameters(Dataset(y, X))
        cov = np.cov(np.column_stack([X, y]), rowvar=False)[:2, 2]
        np.testing.assert_allclose(base.mu_eta0, cov / np.std(y, ddof=1))
        np.testing.assert_allclose(base.mu_x0, X.mean(axis=0))

    def test_constant_response(self):
        with pytest.raises(DataError, match="'y'"):
            default_hyperparameters(Dataset([2, 2, 2], [0.0, 1.0, 2.0]))

    def test_constant_covariate_named(self):
        with pytest.raises(DataError, match="'hr'"):
            default_hyperparameters(Dataset([1, 2, 3], [[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]], ["age", "hr"]))


class TestPYParams:
    def test_valid(self):
        PYParams(0.4777, -0.2171)
        PYParams(0.0, 0.5)

    @pytest.mark.parametrize("d,s", [(1.0, 1.0), (-0.1, 1.0), (0.5, -0.5), (0.0, 0.0)])
    def test_invalid(self, d, s):
        with pytest.raises(DomainError):
            PYParams(d, s)
