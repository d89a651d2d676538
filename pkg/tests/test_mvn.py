import itertools

import numpy as np
import pytest

from gcpoisson.errors import DomainError, MatrixError, NearSingularError, ShapeError
from gcpoisson.mvn import (
    ConditionalGaussian,
    CorrelationMatrix,
    QmcConfig,
    conditional_partition,
    corr_from_vechs,
    mvn_cdf,
    mvn_rect,
    mvn_rect_batch,
    vechs,
    vechs_indices,
)
from gcpoisson.special import bvn_cdf, std_normal_cdf

from oracles import mvn_cdf_quad3, schur_conditional

PAPER_VARRHO = (-0.42, -0.23, 0.73, 0.21, -0.64, 0.18)


def random_corr(rng, d):
    a = rng.normal(size=(d, d + 3))
    g = a @ a.T
    s = np.sqrt(np.diag(g))
    return CorrelationMatrix(g / np.outer(s, s))


class TestCorrelationMatrix:
    def test_validation(self):
        with pytest.raises(ShapeError):
            CorrelationMatrix(np.zeros((2, 3)))
        with pytest.raises(MatrixError):
            CorrelationMatrix([[1.0, 0.5], [0.5, 2.0]])
        with pytest.raises(MatrixError):
            CorrelationMatrix([[1.0, 0.5], [0.1, 1.0]])
        with pytest.raises(MatrixError):
            CorrelationMatrix([[1.0, 1.0], [1.0, 1.0]])

    def test_near_singular_rejected(self):
        almost = 1.0 - 1e-12
        with pytest.raises(NearSingularError):
            CorrelationMatrix([[1.0, almost], [almost, 1.0]])

    def test_symmetric_to_zero_ulps(self):
        rng = np.random.default_rng(0)
        c = random_corr(rng, 5)
        assert np.array_equal(c.values, c.values.T)
        assert np.all(np.diag(c.values) == 1.0)

    def test_vechs_round_trip(self):
        c = corr_from_vechs(PAPER_VARRHO)
        assert c.dim == 4
        np.testing.assert_array_equal(vechs(c.values), PAPER_VARRHO)
        rows, cols = vechs_indices(4)
        assert list(zip(rows, cols)) == [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2)]


class TestMvnCdf:
    def test_total_mass(self):
        corr = corr_from_vechs(PAPER_VARRHO)
        p, _ = mvn_cdf(np.full(4, np.inf), corr)
        assert p == 1.0

    def test_d1_exact(self):
        p, e = mvn_cdf([0.7], CorrelationMatrix.identity(1))
        assert p == std_normal_cdf(0.7)

    def test_d2_exact_bvn(self):
        corr = CorrelationMatrix([[1.0, -0.3], [-0.3, 1.0]])
        p, _ = mvn_cdf([0.5, -1.0], corr)
        assert p == pytest.approx(bvn_cdf(0.5, -1.0, -0.3), abs=1e-15)

    def test_d3_independence(self):
        p, e = mvn_cdf([0.0, 0.0, 0.0], CorrelationMatrix.identity(3))
        assert p == pytest.approx(0.125, abs=max(e, 1e-12))

    def test_d3_equicorrelated_quadrature_oracle(self):
        corr = CorrelationMatrix(0.5 * np.ones((3, 3)) + 0.5 * np.eye(3))
        p, e = mvn_cdf([0.0, 0.0, 0.0], corr, QmcConfig(seed=3))
        # adaptive-quadrature oracle value; also the closed form 1/4
        oracle = mvn_cdf_quad3([0.0, 0.0, 0.0], corr.values)
        assert oracle == pytest.approx(0.25, abs=1e-9)
        assert p == pytest.approx(oracle, abs=max(e, 1e-9))

    def test_deterministic_bit_identical(self):
        corr = corr_from_vechs(PAPER_VARRHO)
        cfg = QmcConfig(sample_budget=512, shifts=8, seed=11)
        a = mvn_cdf([0.3, -0.2, 1.0, 0.0], corr, cfg, stream_id=77)
        b = mvn_cdf([0.3, -0.2, 1.0, 0.0], corr, cfg, stream_id=77)
        assert a == b

    @pytest.mark.slow
    def test_qmc_consistency_vs_quadrature(self):
        rng = np.random.default_rng(21)
        cfg = QmcConfig(sample_budget=2048, shifts=12, seed=9)
        hits = 0
        trials = 200
        for t in range(trials):
            corr = random_corr(rng, 3)
            upper = rng.normal(scale=1.2, size=3)
            p, e = mvn_cdf(upper, corr, cfg, stream_id=t)
            oracle = mvn_cdf_quad3(upper, corr.values, tol=1e-10)
            if abs(p - oracle) <= max(e, 1e-9):
                hits += 1
        assert hits >= 0.95 * trials

    def test_monotone_in_upper_limits(self):
        rng = np.random.default_rng(4)
        cfg = QmcConfig(sample_budget=2048, shifts=12, seed=5)
        corr = random_corr(rng, 3)
        for trial in range(20):
            upper = rng.normal(size=3)
            p0, e0 = mvn_cdf(upper, corr, cfg, stream_id=trial)
            for j in range(3):
                bumped = upper.copy()
                bumped[j] += 0.25
                p1, e1 = mvn_cdf(bumped, corr, cfg, stream_id=trial)
                assert p1 >= p0 - 2.0 * (e0 + e1)


class TestMvnRect:
    def test_degenerate_rectangle(self):
        corr = CorrelationMatrix.identity(3)
        p, _ = mvn_rect([0.0, -1.0, 0.5], [0.0, 1.0, 0.5], corr)
        assert p == 0.0

    def test_d2_cdf_specialization(self):
        corr = CorrelationMatrix([[1.0, 0.6], [0.6, 1.0]])
        p, _ = mvn_rect([-np.inf, -np.inf], [0.4, 1.2], corr)
        assert p == pytest.approx(bvn_cdf(0.4, 1.2, 0.6), abs=1e-15)

    def test_lower_above_upper_rejected(self):
        with pytest.raises(DomainError):
            mvn_rect([1.0, 0.0], [0.0, 1.0], CorrelationMatrix.identity(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            mvn_rect([0.0], [1.0, 2.0], CorrelationMatrix.identity(2))

    def test_whole_line_coordinates_marginalized(self):
        corr = corr_from_vechs(PAPER_VARRHO)
        lo = np.array([-np.inf, -np.inf, -np.inf, -np.inf])
        hi = np.array([0.5, np.inf, np.inf, np.inf])
        p, e = mvn_rect(lo, hi, corr)
        assert p == std_normal_cdf(0.5)
        assert e <= 1e-14

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_inclusion_exclusion_agreement(self, d):
        rng = np.random.default_rng(100 + d)
        corr = corr_from_vechs(PAPER_VARRHO) if d == 4 else random_corr(rng, d)
        cfg = QmcConfig(sample_budget=4096, shifts=12, seed=2)
        lo = rng.normal(size=d) - 0.8
        hi = lo + np.abs(rng.normal(size=d)) + 0.4
        p_rect, e_rect = mvn_rect(lo, hi, corr, cfg, stream_id=1)
        total = 0.0
        total_err = 0.0
        for t in itertools.product([0, 1], repeat=d):
            point = np.where(np.asarray(t) == 1, lo, hi)
            p, e = mvn_cdf(point, corr, cfg, stream_id=1)
            total += (-1) ** sum(t) * p
            total_err += e
        assert p_rect == pytest.approx(total, abs=max(e_rect + total_err, 1e-12))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(9)
        corr = corr_from_vechs(PAPER_VARRHO)
        cfg = QmcConfig(sample_budget=512, shifts=8, seed=3)
        lo = rng.normal(size=(6, 4)) - 1.0
        hi = lo + 1.0
        sids = np.arange(6)
        probs, errs = mvn_rect_batch(lo, hi, corr, cfg, sids)
        # same streams, same transform; only summation order may differ
        for b in range(6):
            p, e = mvn_rect(lo[b], hi[b], corr, cfg, stream_id=b)
            assert probs[b] == pytest.approx(p, abs=1e-15)
            assert errs[b] == pytest.approx(e, abs=1e-15)

    def test_nonnegative_within_error(self):
        rng = np.random.default_rng(12)
        corr = random_corr(rng, 4)
        cfg = QmcConfig(sample_budget=512, shifts=8, seed=6)
        for t in range(30):
            lo = rng.normal(size=4)
            hi = lo + rng.uniform(0.05, 0.4, size=4)
            p, e = mvn_rect(lo, hi, corr, cfg, stream_id=t)
            assert p >= 0.0


class TestConditionalPartition:
    def test_independence(self):
        corr = CorrelationMatrix.identity(4)
        cond = conditional_partition(corr, [1, 3], [0.5, -0.2])
        np.testing.assert_allclose(cond.mean, 0.0, atol=1e-15)
        np.testing.assert_allclose(cond.covariance, np.eye(2), atol=1e-15)

    def test_bivariate_textbook(self):
        rho = 0.6
        corr = CorrelationMatrix([[1.0, rho], [rho, 1.0]])
        cond = conditional_partition(corr, [1], [0.9])
        assert cond.mean[0] == pytest.approx(rho * 0.9, rel=1e-14)
        assert cond.covariance[0, 0] == pytest.approx(1 - rho**2, rel=1e-14)

    def test_paper_matrix_conditioning_on_pair(self):
        corr = corr_from_vechs(PAPER_VARRHO)
        values = [0.4, -1.1]
        cond = conditional_partition(corr, [0, 2], values)
        mean, cov = schur_conditional(corr.values, [0, 2], values)
        np.testing.assert_allclose(cond.mean, mean, atol=1e-12)
        np.testing.assert_allclose(cond.covariance, cov, atol=1e-12)

    def test_general_subsets_match_schur_oracle(self):
        rng = np.random.default_rng(77)
        corr = random_corr(rng, 5)
        for cond_idx in ([0], [1, 4], [0, 2, 3]):
            vals = rng.normal(size=len(cond_idx))
            cond = conditional_partition(corr, cond_idx, vals)
            mean, cov = schur_conditional(corr.values, cond_idx, vals)
            np.testing.assert_allclose(cond.mean, mean, atol=1e-12)
            np.testing.assert_allclose(cond.covariance, cov, atol=1e-12)

    def test_validation(self):
        corr = CorrelationMatrix.identity(3)
        with pytest.raises(DomainError):
            conditional_partition(corr, [], [])
        with pytest.raises(DomainError):
            conditional_partition(corr, [0, 1, 2], [0.0, 0.0, 0.0])
        with pytest.raises(ShapeError):
            conditional_partition(corr, [0], [0.0, 1.0])


class TestQmcConfig:
    def test_invariants(self):
        with pytest.raises(DomainError):
            QmcConfig(sample_budget=64)
        with pytest.raises(DomainError):
            QmcConfig(shifts=4)
