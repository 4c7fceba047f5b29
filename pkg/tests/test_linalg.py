"""Numerics tests; expected values come from closed forms, an independent
scalar-loop Riccati iteration (run to 1e-13), and a frozen 1e6-step Monte
Carlo average of the terminal-loop stage cost."""

import math

import numpy as np
import pytest

from smpckit import linalg

# Double-integrator instance used across the suite.
A_DI = np.array([[1.0, 1.0], [0.0, 1.0]])
B_DI = np.array([[0.5], [1.0]])

# Pinned by a plain-Python scalar-loop fixed-point iteration (tol 1e-13).
P_DI = np.array([[2.367101490947867, 1.1180339887498845],
                 [1.1180339887498845, 2.5874829273253166]])
K_DI = np.array([-0.43448324327595506, -1.0284659329503831])

# Pinned 1e6-step sample average of x'(Q+K'RK)x for the terminal loop with
# w ~ uniform([-0.1, 0.1]^2), Philox seed 20260808, 1e4 burn-in; standard
# error from 200 batch means.
LSS_MC_MEAN = 0.016514466826744106
LSS_MC_SE = 1.8563949829148163e-05


def test_spectral_radius_identity():
    assert linalg.spectral_radius(np.eye(2)) == pytest.approx(1.0, abs=1e-9)


def test_spectral_radius_nilpotent():
    assert linalg.spectral_radius([[0.0, 1.0], [0.0, 0.0]]) == pytest.approx(0.0, abs=1e-9)


def test_spectral_radius_scaled_rotation():
    th = math.radians(30.0)
    R = 0.9 * np.array([[math.cos(th), -math.sin(th)],
                        [math.sin(th), math.cos(th)]])
    assert linalg.spectral_radius(R) == pytest.approx(0.9, abs=1e-9)


def test_spectral_radius_rejects_nonsquare():
    with pytest.raises(ValueError):
        linalg.spectral_radius(np.ones((2, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_spectral_radius_square_consistency(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((4, 4))
    M *= 0.9 / max(linalg.spectral_radius(M), 1e-6)
    rho = linalg.spectral_radius(M)
    assert linalg.spectral_radius(M @ M) == pytest.approx(rho**2, abs=1e-8)


def test_dlyap_scalar_zero_dynamics():
    assert linalg.solve_dlyap([[0.0]], [[7.0]])[0, 0] == pytest.approx(7.0)


def test_dlyap_scalar_geometric_series():
    assert linalg.solve_dlyap([[0.5]], [[1.0]])[0, 0] == pytest.approx(4.0 / 3.0)


def test_dlyap_decoupled_diagonal():
    X = linalg.solve_dlyap(np.diag([0.5, 0.2]), np.eye(2))
    np.testing.assert_allclose(np.diag(X), [4.0 / 3.0, 25.0 / 24.0], rtol=1e-12)
    assert abs(X[0, 1]) < 1e-12


@pytest.mark.parametrize("seed", range(8))
def test_dlyap_residual_and_psd(seed):
    rng = np.random.default_rng(40 + seed)
    n = int(rng.integers(1, 7))
    Acl = rng.standard_normal((n, n))
    Acl *= 0.8 / max(linalg.spectral_radius(Acl), 1e-9)
    M = rng.standard_normal((n, n))
    S = M @ M.T
    X = linalg.solve_dlyap(Acl, S)
    res = np.linalg.norm(X - Acl.T @ X @ Acl - S)
    assert res <= 1e-10 * (1.0 + np.linalg.norm(S))
    assert np.min(np.linalg.eigvalsh(X)) >= -1e-10


def test_dlyap_rejects_unstable():
    with pytest.raises(ValueError):
        linalg.solve_dlyap([[1.5]], [[1.0]])


def test_dlyap_rejects_asymmetric():
    with pytest.raises(ValueError):
        linalg.solve_dlyap(0.5 * np.eye(2), [[1.0, 0.5], [0.0, 1.0]])


def test_dare_no_dynamics():
    sol = linalg.solve_dare([[0.0]], [[1.0]], [[3.0]], [[1.0]])
    assert sol.P[0, 0] == pytest.approx(3.0, abs=1e-10)
    assert sol.K[0, 0] == pytest.approx(0.0, abs=1e-10)


def test_dare_golden_ratio():
    # Positive root of P^2 - P - 1 = 0 and K = -P/(1+P).
    sol = linalg.solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    assert sol.P[0, 0] == pytest.approx(golden, abs=1e-7)
    assert sol.K[0, 0] == pytest.approx(-golden / (1.0 + golden), abs=1e-7)


def test_dare_double_integrator_pinned():
    sol = linalg.solve_dare(A_DI, B_DI, np.eye(2), [[1.0]])
    np.testing.assert_allclose(sol.P, P_DI, atol=1e-10)
    np.testing.assert_allclose(sol.K.ravel(), K_DI, atol=1e-10)


def test_dare_solution_invariants():
    sol = linalg.solve_dare(A_DI, B_DI, np.eye(2), [[1.0]])
    P, K = sol.P, sol.K
    assert np.max(np.abs(P - P.T)) <= 1e-10 * (1 + np.linalg.norm(P))
    assert np.min(np.linalg.eigvalsh(P)) > 0
    assert linalg.spectral_radius(A_DI + B_DI @ K) < 1.0
    assert sol.residual <= 1e-10 * (1.0 + np.linalg.norm(np.eye(2)))
    gain = -np.linalg.solve(1.0 + B_DI.T @ P @ B_DI, B_DI.T @ P @ A_DI)
    np.testing.assert_allclose(K, gain, atol=1e-10)


def test_dare_rejects_unstabilizable():
    # B = 0 with unstable A cannot be stabilized; the cap must trip.
    with pytest.raises(RuntimeError):
        linalg.solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]], max_iter=2000)


def test_dare_rejects_bad_cost():
    with pytest.raises(ValueError):
        linalg.solve_dare(A_DI, B_DI, np.eye(2), [[0.0]])


def test_stationary_covariance_scalar():
    assert linalg.stationary_covariance([[0.0]], [[1.0]], [[0.01]])[0, 0] == pytest.approx(0.01)
    assert linalg.stationary_covariance([[0.5]], [[1.0]], [[1.0]])[0, 0] == pytest.approx(4.0 / 3.0)
    assert linalg.stationary_covariance([[0.9]], [[2.0]], [[1.0]])[0, 0] == pytest.approx(400.0 / 19.0)


def test_terminal_stage_cost_zero_noise():
    val = linalg.terminal_stage_cost(A_DI + B_DI @ K_DI.reshape(1, 2), np.eye(2),
                                     np.zeros((2, 2)), np.eye(2), [[1.0]], K_DI)
    assert val == pytest.approx(0.0, abs=1e-12)


def test_terminal_stage_cost_scalar():
    # Q + K'RK = 2 with Acl = 0.5, sigma^2 = 1: 2 * 4/3.
    val = linalg.terminal_stage_cost([[0.5]], [[1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert val == pytest.approx(8.0 / 3.0)


def test_terminal_stage_cost_double_integrator_vs_mc():
    Acl = A_DI + B_DI @ K_DI.reshape(1, 2)
    val = linalg.terminal_stage_cost(Acl, np.eye(2), np.eye(2) / 300.0,
                                     np.eye(2), [[1.0]], K_DI.reshape(1, 2))
    assert abs(val - LSS_MC_MEAN) <= 3.0 * LSS_MC_SE


def test_controllable_and_detectable():
    assert linalg.controllable(A_DI, B_DI)
    assert not linalg.controllable(np.eye(2), np.zeros((2, 1)))
    assert linalg.detectable(A_DI, np.eye(2))
    # Unstable unobserved mode: C sees only the stable coordinate.
    Au = np.diag([2.0, 0.5])
    assert not linalg.detectable(Au, np.array([[0.0, 1.0]]))
    assert linalg.detectable(np.diag([0.5, 0.2]), np.zeros((1, 2)))


def test_sqrtm_psd():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((3, 3))
    Q = M @ M.T
    root = linalg.sqrtm_psd(Q)
    np.testing.assert_allclose(root @ root, Q, atol=1e-10)
