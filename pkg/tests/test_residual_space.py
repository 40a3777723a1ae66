import numpy as np
import pytest

from oracles import annihilator, cycle_adjacency, restricted_information_dense, row_std
from resaple.errors import DimensionError, RankError
from resaple.residual_space import DesignMatrix, build_residual_space, contrasts, restricted_information
from resaple.weights import WeightMatrix, build_knn, build_lattice, null_information_unrestricted, row_standardize


def queen(m):
    return row_standardize(build_lattice(m, m, "queen"))


def random_design(rng, n, p):
    return np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])


class TestDesignMatrix:
    def test_rank_deficient(self):
        x = np.column_stack([np.ones(5), np.arange(5), 2 * np.arange(5)])
        with pytest.raises(RankError):
            DesignMatrix(x)

    def test_p_not_less_than_n(self):
        with pytest.raises(DimensionError):
            DesignMatrix(np.eye(3))

    def test_vector_promoted(self):
        assert DesignMatrix(np.ones(4)).p == 1

    def test_empty(self):
        assert DesignMatrix.empty(4).p == 0


class TestStructure:
    def test_orthonormal_basis(self):
        rng = np.random.default_rng(0)
        x = random_design(rng, 25, 4)
        s = build_residual_space(x, queen(5))
        np.testing.assert_allclose(s.h.T @ s.h, np.eye(21), atol=1e-10)
        np.testing.assert_allclose(s.h @ s.h.T, annihilator(x), atol=1e-10)
        np.testing.assert_allclose(s.h.T @ x, 0, atol=1e-10)
        np.testing.assert_allclose(s.k_r, s.k_r.T, atol=1e-12)
        assert s.mu_r == pytest.approx(np.trace(s.k_r) / s.r, abs=1e-14)
        assert s.nu_r == pytest.approx(np.trace(s.w_r @ s.w_r) / s.r, abs=1e-12)
        np.testing.assert_allclose(s.b_r, s.w_r.T @ s.w_r + s.nu_r * np.eye(s.r), atol=1e-12)
        assert not s.stabilized

    def test_no_covariates(self):
        w = queen(4)
        s = build_residual_space(None, w)
        assert s.r == 16
        np.testing.assert_array_equal(s.h, np.eye(16))
        np.testing.assert_array_equal(s.w_r, w.w)
        assert s.mu_r == 0

    def test_three_cycle_intercept(self):
        # dense oracle: mu = -1/2, nu = 1/4, I_r(0) = 1
        s = build_residual_space(np.ones((3, 1)), row_std(cycle_adjacency(3)))
        assert s.mu_r == pytest.approx(-0.5, abs=1e-14)
        assert s.nu_r == pytest.approx(0.25, abs=1e-14)
        assert s.i_r0 == pytest.approx(1.0, abs=1e-14)

    def test_symmetric_weights_not_stabilized(self):
        a = cycle_adjacency(6)
        s = build_residual_space(np.ones((6, 1)), WeightMatrix(a / 2))
        assert s.nu_r == pytest.approx(np.sum(s.w_r**2) / s.r)
        assert s.nu_r >= 0 and not s.stabilized

    def test_stabilization_trigger(self):
        # a directed 3-cycle has Tr(W^2) = 0, so nu_r = 0 when p = 0
        w = WeightMatrix(np.array([[0, 1.0, 0], [0, 0, 1.0], [1.0, 0, 0]]), "row")
        s = build_residual_space(None, w)
        assert s.nu_r == 0 and s.stabilized
        np.testing.assert_allclose(s.b_r, w.w.T @ w.w + np.eye(3), atol=1e-14)
        assert np.linalg.eigvalsh(s.b_r).min() > 0

    def test_weights_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            build_residual_space(np.ones((5, 1)), queen(3))

    def test_read_only(self):
        s = build_residual_space(np.ones((9, 1)), queen(3))
        with pytest.raises(ValueError):
            s.h[0, 0] = 1.0


class TestContrasts:
    def test_annihilates_design(self):
        rng = np.random.default_rng(1)
        x = random_design(rng, 16, 3)
        s = build_residual_space(x, queen(4))
        np.testing.assert_allclose(contrasts(s, x @ rng.normal(size=3)), 0, atol=1e-10)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = random_design(rng, 16, 3)
        s = build_residual_space(x, queen(4))
        z0 = rng.normal(size=16)
        np.testing.assert_allclose(contrasts(s, z0 + x @ [3, -1, 2]), contrasts(s, z0), atol=1e-10)

    def test_identity_basis(self):
        s = build_residual_space(None, queen(3))
        z = np.arange(9.0)
        np.testing.assert_array_equal(contrasts(s, z), z)

    def test_batch_and_length(self):
        s = build_residual_space(np.ones((9, 1)), queen(3))
        assert contrasts(s, np.ones((4, 9))).shape == (4, 8)
        with pytest.raises(DimensionError):
            contrasts(s, np.ones(8))


class TestInformation:
    def test_matches_unrestricted_without_covariates(self):
        w = row_standardize(build_knn(np.random.default_rng(3).uniform(size=(20, 2)), 4))
        assert restricted_information(build_residual_space(None, w)) == pytest.approx(
            null_information_unrestricted(w), abs=1e-10
        )

    def test_eight_cycle_intercept(self):
        s = build_residual_space(np.ones((8, 1)), row_std(cycle_adjacency(8)))
        assert s.i_r0 == pytest.approx(6.0, abs=1e-12)
        assert s.i_r0 < 8.0

    def test_orthogonal_unit_column(self):
        # unit 0 is isolated from the rest, so projecting it out leaves the
        # information unchanged
        a = np.zeros((6, 6))
        a[1:, 1:] = cycle_adjacency(5)
        w = WeightMatrix(a / 2)
        x = np.zeros((6, 1))
        x[0] = 1
        s = build_residual_space(x, w)
        assert s.i_r0 == pytest.approx(null_information_unrestricted(w), abs=1e-12)
        assert s.i_r0 == pytest.approx(restricted_information_dense(x, w.w), abs=1e-12)

    def test_dense_oracle_and_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(8, 30))
            p = int(rng.integers(1, 5))
            w = row_standardize(build_knn(rng.uniform(size=(n, 2)), int(rng.integers(1, 5))))
            x = random_design(rng, n, p)
            s = build_residual_space(x, w)
            assert s.i_r0 == pytest.approx(restricted_information_dense(x, w.w), abs=1e-10)
            assert s.i_r0 <= null_information_unrestricted(w) + 1e-10
            tr = np.trace(s.w_r @ s.w_r) + np.trace(s.w_r.T @ s.w_r)
            assert 2 * s.i_r0 == pytest.approx(2 * tr, abs=1e-10)


class TestInvariance:
    def test_basis_invariance(self):
        rng = np.random.default_rng(7)
        x = random_design(rng, 25, 4)
        w = queen(5)
        a = build_residual_space(x, w, basis="qr")
        b = build_residual_space(x, w, basis="eigen")
        for attr in ("mu_r", "nu_r", "i_r0"):
            assert getattr(a, attr) == pytest.approx(getattr(b, attr), abs=1e-10)
        np.testing.assert_allclose(a.h @ a.w_r @ a.h.T, b.h @ b.w_r @ b.h.T, atol=1e-10)

    def test_design_invariance(self):
        rng = np.random.default_rng(8)
        x = random_design(rng, 25, 4)
        q = rng.normal(size=(4, 4)) + 4 * np.eye(4)
        w = queen(5)
        a = build_residual_space(x, w)
        b = build_residual_space(x @ q, w)
        np.testing.assert_allclose(a.h @ a.h.T, b.h @ b.h.T, atol=1e-10)
        assert a.i_r0 == pytest.approx(b.i_r0, abs=1e-10)
