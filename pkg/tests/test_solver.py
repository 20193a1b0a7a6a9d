import numpy as np
import pytest

from wstate.errors import ValidationError
from wstate.subroutines import alpha_of, gamma_in, solve_qsp_realizable

from conftest import rand_unitary


def random_normal_matrix(rng, scale=2.0):
    """QR-conjugated complex diagonal: normal with a generic spectrum."""
    u = rand_unitary(rng, 2)
    d = np.diag(scale * (rng.normal(size=2) + 1j * rng.normal(size=2)))
    return u @ d @ u.conj().T


def random_sigma(rng):
    theta = rng.uniform(0, np.pi)
    return 0.5 * np.array(
        [
            [1 + np.cos(theta), np.sin(theta)],
            [np.sin(theta), 1 - np.cos(theta)],
        ],
        dtype=np.complex128,
    )


class TestRoundTrips:
    def test_forward_generated_alphas_recovered(self):
        rng = np.random.default_rng(11)
        for trial in range(200):
            sigma = random_sigma(rng)
            m = random_normal_matrix(rng)
            alpha = alpha_of(sigma, m)
            res = solve_qsp_realizable(alpha)
            assert res.realizable, f"trial {trial} judged not realizable"
            scale = max(1.0, float(np.abs(alpha).max()))
            for sol in res.solutions:
                recon = alpha_of(sol.sigma, sol.m)
                assert np.abs(recon - alpha).max() <= 1e-8 * scale

    def test_round_trip_with_gamma(self):
        rng = np.random.default_rng(5)
        gamma = gamma_in(0.8, 0.6)
        sigma = random_sigma(rng)
        m = random_normal_matrix(rng)
        alpha = alpha_of(sigma, m, gamma)
        res = solve_qsp_realizable(alpha, gamma=gamma)
        assert res.realizable
        sol = res.solutions[0]
        assert np.abs(alpha_of(sol.sigma, sol.m, gamma) - alpha).max() < 1e-8


class TestCases:
    def test_diagonal_alpha(self):
        res = solve_qsp_realizable(np.diag([0.3, 0.7]).astype(complex))
        assert res.realizable and res.case == "diagonal"

    def test_pauli_x_alpha_is_case1(self):
        alpha = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        res = solve_qsp_realizable(alpha)
        assert res.realizable and res.case == "case1"
        sol = res.solutions[0]
        assert np.abs(alpha_of(sol.sigma, sol.m) - alpha).max() < 1e-10

    def test_case2_reports_exactly_two_solutions(self):
        rng = np.random.default_rng(23)
        found = 0
        for _ in range(50):
            sigma = random_sigma(rng)
            m = random_normal_matrix(rng)
            res = solve_qsp_realizable(alpha_of(sigma, m))
            if res.case == "case2":
                assert len(res.solutions) == 2
                # the two representatives use opposite rotation angles
                thetas = sorted(s.theta for s in res.solutions)
                assert abs(thetas[0] + thetas[1]) < 1e-9
                found += 1
        assert found > 0, "no case2 instances in 50 draws"

    def test_asymmetric_off_diagonal_not_realizable(self):
        alpha = np.array([[0.2, 0.9], [0.1, 0.4]], dtype=complex)
        res = solve_qsp_realizable(alpha)
        assert not res.realizable
        assert res.solutions == ()

    def test_incompatible_phases_not_realizable(self):
        # |a01| = |a10| but the Pauli coefficients cannot share a phase line
        alpha = np.array([[0.3, 0.5 + 0.1j], [0.5 - 0.1j, -0.2 + 0.4j]])
        res = solve_qsp_realizable(alpha)
        if res.realizable:  # if it is, the reconstruction must still hold
            sol = res.solutions[0]
            assert np.abs(alpha_of(sol.sigma, sol.m) - alpha).max() < 1e-8

    def test_zero_gamma_entry_rejected(self):
        gamma = np.array([[0.0, 1.0], [1.0, 1.0]], dtype=complex)
        with pytest.raises(ValidationError):
            solve_qsp_realizable(np.eye(2, dtype=complex), gamma=gamma)


class TestSolutionShape:
    def test_sigma_is_valid_state(self):
        rng = np.random.default_rng(31)
        sigma = random_sigma(rng)
        m = random_normal_matrix(rng)
        res = solve_qsp_realizable(alpha_of(sigma, m))
        for sol in res.solutions:
            s = sol.sigma
            assert abs(np.trace(s) - 1.0) < 1e-9
            assert np.abs(s - s.conj().T).max() < 1e-9
            assert np.linalg.eigvalsh(s).min() > -1e-9

    def test_m_is_normal(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            sigma = random_sigma(rng)
            m = random_normal_matrix(rng)
            res = solve_qsp_realizable(alpha_of(sigma, m))
            for sol in res.solutions:
                mm = sol.m
                res_norm = np.abs(mm @ mm.conj().T - mm.conj().T @ mm).max()
                assert res_norm <= 1e-9 * max(1.0, float(np.abs(mm).max()) ** 2)
