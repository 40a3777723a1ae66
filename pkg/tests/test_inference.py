import numpy as np
import pytest
from scipy import stats

from resaple.errors import DegenerateError, ValidationError
from resaple.estimators import resaple
from resaple.inference import (
    exact_test,
    local_tests,
    permutation_indices,
    permutation_pvalues,
    permutation_test,
    permutation_test_space,
    z_test,
)
from resaple.quadform import imhof_tail, test_spectrum
from resaple.residual_space import build_residual_space
from resaple.simkit import build_covariates, generate_sem
from resaple.weights import b07_like, build_lattice, row_standardize


def queen(m):
    return row_standardize(build_lattice(m, m, "queen"))


@pytest.fixture(scope="module")
def queen10():
    return build_residual_space(np.ones((100, 1)), queen(10))


@pytest.fixture(scope="module")
def null_exact_pvalues(queen10):
    rng = np.random.default_rng(100)
    e = rng.standard_normal((2000, queen10.r))
    return np.array([exact_test(queen10, v).p_value for v in e])


class TestExact:
    def test_size(self, null_exact_pvalues):
        assert abs(np.mean(null_exact_pvalues <= 0.05) - 0.05) <= 0.015

    def test_uniform(self, null_exact_pvalues):
        ks = stats.kstest(null_exact_pvalues, "uniform").statistic
        assert ks < 1.63 / np.sqrt(null_exact_pvalues.size)  # 1% critical value

    def test_median_threshold(self, queen10):
        rng = np.random.default_rng(101)
        e = rng.standard_normal((200_000, queen10.r))
        rho = np.einsum("ij,ij->i", e @ queen10.a_r, e) / np.einsum("ij,ij->i", e @ queen10.b_r, e)
        t = np.median(rho)
        assert imhof_tail(test_spectrum(queen10, t).eigenvalues, 0.0) == pytest.approx(0.5, abs=0.005)

    def test_sides(self, queen10):
        e = np.random.default_rng(102).standard_normal(queen10.r)
        g = exact_test(queen10, e, "greater").p_value
        l_ = exact_test(queen10, e, "less").p_value
        assert g + l_ == pytest.approx(1.0, abs=1e-6)
        assert exact_test(queen10, e, "two_sided").p_value == pytest.approx(min(1, 2 * min(g, l_)), abs=1e-12)

    def test_degenerate(self, queen10):
        with pytest.raises(DegenerateError):
            exact_test(queen10, np.zeros(queen10.r))

    def test_bad_side(self, queen10):
        with pytest.raises(ValidationError):
            exact_test(queen10, np.ones(queen10.r), "up")


class TestZ:
    def test_zero_statistic(self):
        s = build_residual_space(None, queen(4) if False else _four_cycle())
        r = z_test(s, np.array([1.0, 0, -1, 0]))
        assert r.statistic == 0 and r.p_value == pytest.approx(0.5)

    def test_statistic(self, queen10):
        e = np.random.default_rng(103).standard_normal(queen10.r)
        r = z_test(queen10, e, "two_sided")
        assert r.statistic == pytest.approx(np.sqrt(queen10.i_r0) * resaple(queen10, e).rho_hat)
        assert r.p_value == pytest.approx(2 * stats.norm.sf(abs(r.statistic)))

    def test_large_lattice_size(self):
        s = build_residual_space(np.ones((400, 1)), queen(20))
        e = np.random.default_rng(104).standard_normal((2000, s.r))
        p = np.array([z_test(s, v).p_value for v in e])
        assert abs(np.mean(p <= 0.05) - 0.05) <= 0.015

    def test_small_irregular_graph_conservative(self):
        g = b07_like()
        s = build_residual_space(np.ones((8, 1)), row_standardize(g))
        e = np.random.default_rng(105).standard_normal((2000, s.r))
        size = np.mean(np.array([z_test(s, v).p_value for v in e]) <= 0.05)
        assert size < 0.03


def _four_cycle():
    from resaple.weights import WeightMatrix

    a = np.zeros((4, 4))
    for i in range(4):
        a[i, (i + 1) % 4] = a[(i + 1) % 4, i] = 0.5
    return WeightMatrix(a, "row")


class TestPermutation:
    def test_indices_keyed_by_seed_and_index(self):
        a = permutation_indices(7, 30, 10)
        b = permutation_indices(7, 50, 10)
        np.testing.assert_array_equal(a, b[:30])
        assert not np.array_equal(a, permutation_indices(8, 30, 10))
        assert all(sorted(row) == list(range(10)) for row in a)

    def test_p_value_lattice(self):
        rng = np.random.default_rng(106)
        x = np.column_stack([np.ones(25), rng.normal(size=(25, 2))])
        z = rng.normal(size=25)
        for scheme in ("coordinate", "freedman_lane"):
            r = permutation_test(z, x, queen(5), scheme, 99, 3)
            k = r.p_value * 100
            assert k == pytest.approx(round(k)) and 1 <= round(k) <= 100
            assert r.min_attainable_p == pytest.approx(0.01)
            assert r.method == f"perm_{scheme}"

    def test_deterministic(self):
        rng = np.random.default_rng(107)
        z = rng.normal(size=25)
        a = permutation_test(z, np.ones((25, 1)), queen(5), L=199, seed=42)
        b = permutation_test(z, np.ones((25, 1)), queen(5), L=199, seed=42)
        assert a == b

    def test_one_sided_coherence(self):
        rng = np.random.default_rng(108)
        s = build_residual_space(np.ones((16, 1)), queen(4))
        z = rng.normal(size=16)
        L = 199
        g = permutation_test_space(s, z, "coordinate", L, 5, "greater")
        l_ = permutation_test_space(s, z, "coordinate", L, 5, "less")
        e = z @ s.h
        from resaple.estimators import ratio_batch

        null = ratio_batch(e[permutation_indices(5, L, s.r)], s.a_r, s.b_r)
        ties = np.sum(np.isclose(null, g.statistic, rtol=0, atol=1e-12))
        assert g.p_value + l_.p_value == pytest.approx(1 + (1 + ties) / (L + 1))

    def test_freedman_lane_matches_literal_reconstruction(self):
        rng = np.random.default_rng(109)
        x = np.column_stack([np.ones(16), rng.normal(size=(16, 2))])
        w = queen(4)
        s = build_residual_space(x, w)
        z = rng.normal(size=16)
        L, seed = 49, 11
        r = permutation_test_space(s, z, "freedman_lane", L, seed)
        p = x @ np.linalg.solve(x.T @ x, x.T)
        resid = z - p @ z
        count = 0
        for perm in permutation_indices(seed, L, 16):
            zs = p @ z + resid[perm]
            count += resaple(s, zs @ s.h).rho_hat >= r.statistic - 1e-12
        assert r.p_value == pytest.approx((1 + count) / (L + 1))

    def test_requires_seed_and_enough_permutations(self):
        z = np.random.default_rng(110).normal(size=9)
        with pytest.raises(ValidationError):
            permutation_test(z, None, queen(3), L=199, seed=None)
        with pytest.raises(ValidationError):
            permutation_test(z, None, queen(3), L=10, seed=1)

    def test_degenerate(self):
        x = np.column_stack([np.ones(9), np.arange(9.0)])
        with pytest.raises(DegenerateError):
            permutation_test(x @ [1.0, 1.0], x, queen(3), L=19, seed=1)

    def test_size_small_lattice(self):
        g = build_lattice(5, 5, "queen")
        w = row_standardize(g)
        x, beta = build_covariates(g.coords, 25, 5, 111)
        s = build_residual_space(x, w)
        rej = 0
        for k in range(1000):
            z = generate_sem(x, beta, w, 0.0, 1.0, [112, k])
            rej += permutation_test_space(s, z, L=199, seed=k).p_value <= 0.05
        assert abs(rej / 1000 - 0.05) <= 0.02

    def test_power_rises(self):
        w = queen(10)
        x = np.ones((100, 1))
        s = build_residual_space(x, w)
        rej = sum(
            permutation_test_space(s, generate_sem(x, [1.0], w, 0.3, 1.0, [113, k]), L=199, seed=k).p_value <= 0.05
            for k in range(300)
        )
        assert rej / 300 > 0.25

    def test_exact_and_permutation_agree(self):
        s = build_residual_space(np.ones((25, 1)), queen(5))
        rng = np.random.default_rng(114)
        pe, pp = [], []
        for k in range(500):
            z = rng.normal(size=25)
            pe.append(exact_test(s, z @ s.h).p_value)
            pp.append(permutation_test_space(s, z, "coordinate", 199, k).p_value)
        assert stats.spearmanr(pe, pp).statistic > 0.95

    def test_shared_permutations(self):
        rng = np.random.default_rng(115)
        s = build_residual_space(np.ones((16, 1)), queen(4))
        z = rng.normal(size=16)
        many = permutation_pvalues(s, z, ("resaple", "moran"), L=99, seed=3)
        assert many["moran"] == permutation_test_space(s, z, L=99, seed=3, statistic="moran")


class TestLocal:
    def test_shares_sum_to_estimate(self):
        rng = np.random.default_rng(116)
        s = build_residual_space(np.ones((25, 1)), queen(5))
        e = rng.normal(size=s.r)
        res = local_tests(s, e, 99, 1)
        assert res.s.sum() == pytest.approx(resaple(s, e).rho_hat, abs=1e-10)
        assert np.all(res.p_adjusted >= res.p_value - 1e-15)
        order = np.argsort(res.p_value)
        assert np.all(np.diff(res.p_adjusted[order]) >= -1e-15)

    def test_null_false_discoveries(self):
        s = build_residual_space(np.ones((25, 1)), queen(5))
        rng = np.random.default_rng(117)
        frac = [np.mean(local_tests(s, rng.normal(size=s.r), 99, k).p_adjusted < 0.05) for k in range(200)]
        assert np.mean(frac) <= 0.05

    def test_planted_cluster(self):
        g = build_lattice(6, 6, "queen")
        s = build_residual_space(np.ones((36, 1)), row_standardize(g))
        block = [0, 1, 6, 7]
        rng = np.random.default_rng(118)
        c_sum = np.zeros(36)
        for _ in range(200):
            u = rng.normal(size=36)
            u[block] += 2.0 * rng.normal()
            c_sum += local_tests(s, u @ s.h, 19, 1).c
        inside = c_sum[block].mean()
        assert inside > c_sum[np.setdiff1d(np.arange(36), block)].max()

    def test_validation(self):
        s = build_residual_space(np.ones((9, 1)), queen(3))
        with pytest.raises(ValidationError):
            local_tests(s, np.ones(8), 99, 1, fdr_q=1.5)
        with pytest.raises(DegenerateError):
            local_tests(s, np.zeros(8), 99, 1)
