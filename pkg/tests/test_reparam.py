import numpy as np
import pytest

from gcpoisson.errors import DomainError, ShapeError
from gcpoisson.mvn import CorrelationMatrix, corr_from_vechs, vechs, vechs_indices
from gcpoisson.reparam import (
    ModelParams,
    SphericalAngles,
    UnconstrainedParams,
    from_unconstrained,
    jacobian_vechs_wrt_zeta,
    omega_from_zeta,
    scp_forward,
    scp_inverse,
    to_unconstrained,
    zeta_from_omega,
)

PAPER_VARRHO = (-0.42, -0.23, 0.73, 0.21, -0.64, 0.18)


def random_angles(rng, d):
    om = np.zeros((d, d))
    rows, cols = vechs_indices(d)
    om[rows, cols] = rng.uniform(0.15, np.pi - 0.15, size=len(rows))
    return SphericalAngles(om)


def random_corr(rng, d):
    a = rng.normal(size=(d, d + 3))
    g = a @ a.T
    s = np.sqrt(np.diag(g))
    return CorrelationMatrix(g / np.outer(s, s))


class TestScpForward:
    def test_d2_right_angle_gives_independence(self):
        om = np.zeros((2, 2))
        om[1, 0] = np.pi / 2
        _, P = scp_forward(SphericalAngles(om))
        assert P.values[1, 0] == pytest.approx(0.0, abs=1e-16)

    def test_d2_cosine(self):
        om = np.zeros((2, 2))
        om[1, 0] = np.pi / 3
        _, P = scp_forward(SphericalAngles(om))
        assert P.values[1, 0] == pytest.approx(0.5, rel=1e-15)

    def test_matches_dense_product_oracle(self):
        rng = np.random.default_rng(1)
        angles = random_angles(rng, 4)
        L, P = scp_forward(angles)
        dense = np.array([[sum(L[i, k] * L[j, k] for k in range(4)) for j in range(4)] for i in range(4)])
        np.fill_diagonal(dense, 1.0)
        np.testing.assert_allclose(P.values, dense, atol=1e-14)

    def test_unit_row_norms(self):
        rng = np.random.default_rng(2)
        for d in range(2, 7):
            for _ in range(20):
                L, _ = scp_forward(random_angles(rng, d))
                np.testing.assert_allclose(
                    np.linalg.norm(L, axis=1), np.ones(d), atol=1e-14
                )

    def test_angle_validation(self):
        om = np.zeros((2, 2))
        om[1, 0] = np.pi  # boundary excluded
        with pytest.raises(DomainError):
            SphericalAngles(om)


class TestScpInverse:
    def test_identity_gives_right_angles(self):
        angles = scp_inverse(CorrelationMatrix.identity(4))
        rows, cols = vechs_indices(4)
        np.testing.assert_allclose(angles.omega[rows, cols], np.pi / 2, atol=1e-15)

    def test_d2_arccos(self):
        P = CorrelationMatrix([[1.0, 0.5], [0.5, 1.0]])
        angles = scp_inverse(P)
        assert angles.omega[1, 0] == pytest.approx(np.pi / 3, rel=1e-14)

    def test_paper_matrix_round_trip(self):
        P = corr_from_vechs(PAPER_VARRHO)
        _, back = scp_forward(scp_inverse(P))
        assert np.max(np.abs(back.values - P.values)) <= 1e-12

    def test_random_round_trips(self):
        rng = np.random.default_rng(3)
        for d in (2, 3, 4, 6):
            for _ in range(10):
                P = random_corr(rng, d)
                _, back = scp_forward(scp_inverse(P))
                assert np.max(np.abs(back.values - P.values)) <= 1e-10


class TestLogitMaps:
    def test_right_angle_is_zero(self):
        om = np.zeros((2, 2))
        om[1, 0] = np.pi / 2
        assert zeta_from_omega(SphericalAngles(om))[0] == pytest.approx(0.0, abs=1e-15)

    def test_zero_is_right_angle(self):
        assert omega_from_zeta([0.0]).omega[1, 0] == pytest.approx(np.pi / 2, rel=1e-15)

    def test_third_pi_closed_form(self):
        om = np.zeros((2, 2))
        om[1, 0] = np.pi / 3
        assert zeta_from_omega(SphericalAngles(om))[0] == pytest.approx(-np.log(2.0), rel=1e-14)

    def test_mutual_inverses(self):
        rng = np.random.default_rng(4)
        z = rng.normal(scale=3, size=10)
        back = zeta_from_omega(omega_from_zeta(z))
        np.testing.assert_allclose(back, z, atol=1e-12)

    def test_ordering_contract(self):
        # zeta position c drives the angle at vechs_indices position c
        rows, cols = vechs_indices(4)
        z = np.zeros(6)
        z[3] = 0.7
        om = omega_from_zeta(z).omega
        assert om[rows[3], cols[3]] != pytest.approx(np.pi / 2, abs=1e-3)
        for c in range(6):
            if c != 3:
                assert om[rows[c], cols[c]] == pytest.approx(np.pi / 2, abs=1e-15)


class TestPsiMaps:
    def test_zero_vector_is_unit_independence(self):
        psi = UnconstrainedParams(eta=np.zeros(3), zeta=np.zeros(3))
        params = from_unconstrained(psi)
        np.testing.assert_allclose(params.lambdas, 1.0, atol=1e-15)
        np.testing.assert_allclose(params.corr.values, np.eye(3), atol=1e-15)

    def test_unit_independence_is_zero_vector(self):
        params = ModelParams(lambdas=np.ones(3), corr=CorrelationMatrix.identity(3))
        psi = to_unconstrained(params)
        np.testing.assert_allclose(psi.as_vector(), 0.0, atol=1e-12)

    def test_paper_setting_round_trip(self):
        params = ModelParams(lambdas=np.array([0.6, 2.0, 4.0, 0.8]), corr=corr_from_vechs(PAPER_VARRHO))
        psi = to_unconstrained(params)
        back = from_unconstrained(psi)
        np.testing.assert_allclose(back.lambdas, params.lambdas, atol=1e-10)
        np.testing.assert_allclose(back.corr.values, params.corr.values, atol=1e-10)

    def test_validation(self):
        with pytest.raises(DomainError):
            ModelParams(lambdas=np.array([1.0, -1.0]), corr=CorrelationMatrix.identity(2))
        with pytest.raises(ShapeError):
            UnconstrainedParams(eta=np.zeros(3), zeta=np.zeros(2))
        with pytest.raises(DomainError):
            UnconstrainedParams(eta=np.array([np.inf]), zeta=np.zeros(0))


class TestJacobian:
    def test_d2_closed_form(self):
        for z in (-1.2, 0.0, 0.8):
            sig = 1.0 / (1.0 + np.exp(-z))
            omega = np.pi * sig
            expected = -np.sin(omega) * np.pi * sig * (1 - sig)
            jac = jacobian_vechs_wrt_zeta([z])
            assert jac[0, 0] == pytest.approx(expected, rel=1e-13)

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_matches_finite_differences(self, d):
        rng = np.random.default_rng(40 + d)
        p = d * (d - 1) // 2
        zeta = rng.normal(scale=1.0, size=p)
        jac = jacobian_vechs_wrt_zeta(zeta)
        h = 1e-6
        for c in range(p):
            zp = zeta.copy()
            zm = zeta.copy()
            zp[c] += h
            zm[c] -= h
            _, pp = scp_forward(omega_from_zeta(zp))
            _, pm = scp_forward(omega_from_zeta(zm))
            fd = (vechs(pp.values) - vechs(pm.values)) / (2 * h)
            np.testing.assert_allclose(jac[:, c], fd, rtol=1e-5, atol=1e-9)

    def test_identity_sparsity_first_column_block(self):
        # at zeta = 0 (P = I), d rho_{ij} / d zeta_{kl} vanishes off the diagonal
        jac = jacobian_vechs_wrt_zeta(np.zeros(3))
        off = jac - np.diag(np.diag(jac))
        np.testing.assert_allclose(off, 0.0, atol=1e-12)
        assert np.all(np.abs(np.diag(jac)) > 0.1)
