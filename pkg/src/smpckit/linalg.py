"""Dense small-matrix tools: spectral radius, discrete Lyapunov and Riccati
equations, stationary covariance and the terminal-loop stage cost.

Everything here targets the n <= 20 regime; Lyapunov equations go through
Kronecker vectorization plus a dense solve, and the Riccati equation through
fixed-point value iteration, which is simple to keep bit-stable.
"""

from dataclasses import dataclass

import numpy as np

SCHUR_MARGIN = 1e-9  # rho(A) < 1 - SCHUR_MARGIN is the programmatic test
DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000


def _square(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def spectral_radius(A):
    """Largest eigenvalue modulus of a square matrix."""
    A = _square(A)
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigenvalue iteration did not converge; "
                           "input is ill-conditioned") from exc
    return float(np.max(np.abs(eigs))) if eigs.size else 0.0


def is_schur_stable(A):
    return spectral_radius(A) < 1.0 - SCHUR_MARGIN


def solve_dlyap(Acl, S):
    """Solve X = Acl' X Acl + S for stable Acl and symmetric PSD S.

    Kronecker-vectorized dense solve, exact up to roundoff for the small
    matrices this toolkit handles.
    """
    Acl = _square(Acl, "Acl")
    S = _square(S, "S")
    n = Acl.shape[0]
    if S.shape != (n, n):
        raise ValueError("S dimension mismatch")
    s_scale = 1.0 + float(np.linalg.norm(S))
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-8 * s_scale:
        raise ValueError("S is asymmetric beyond tolerance")
    if not is_schur_stable(Acl):
        raise ValueError("Acl is not Schur stable")
    S = 0.5 * (S + S.T)
    M = np.eye(n * n) - np.kron(Acl.T, Acl.T)
    X = np.linalg.solve(M, S.flatten(order="F")).reshape((n, n), order="F")
    X = 0.5 * (X + X.T)
    residual = np.linalg.norm(X - Acl.T @ X @ Acl - S)
    if residual > 1e-10 * s_scale:
        raise RuntimeError(f"Lyapunov residual {residual:.3e} out of tolerance")
    return X


@dataclass
class RiccatiSolution:
    """Fixed point of the discrete algebraic Riccati equation.

    P is the terminal cost matrix, K the stabilizing feedback gain with
    rho(A + BK) < 1, residual the norm of the defect when P is substituted
    back into the equation.
    """

    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int


def solve_dare(A, B, Q, R, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Fixed-point iteration P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA.

    Starts from P0 = Q and stops when successive iterates agree to ``tol``
    relative; raises RuntimeError when the cap is hit, which signals
    non-stabilizable or ill-posed data.
    """
    A = _square(A, "A")
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = _square(Q, "Q")
    m = B.shape[1]
    R = np.asarray(R, dtype=float).reshape(m, m)
    if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10 * (1 + np.linalg.norm(Q)):
        raise ValueError("Q must be symmetric")
    if np.max(np.abs(R - R.T), initial=0.0) > 1e-10 * (1 + np.linalg.norm(R)):
        raise ValueError("R must be symmetric")
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ValueError("R must be positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
        raise ValueError("Q must be positive semidefinite")

    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e100:
            raise RuntimeError("Riccati iteration diverged; system may be "
                               "non-stabilizable or the data ill-posed")
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta <= tol * max(1.0, float(np.max(np.abs(P)))):
            break
    else:
        raise RuntimeError("Riccati iteration cap exceeded; system may be "
                           "non-stabilizable or the data ill-posed")

    BtP = B.T @ P
    K = -np.linalg.solve(R + BtP @ B, BtP @ A)
    residual = float(np.linalg.norm(
        P - (Q + A.T @ P @ A - K.T @ (R + BtP @ B) @ K)))
    if not is_schur_stable(A + B @ K):
        raise RuntimeError("Riccati gain does not stabilize the system")
    if residual > 1e-10 * (1.0 + float(np.linalg.norm(Q))):
        raise RuntimeError(f"Riccati residual {residual:.3e} out of tolerance")
    return RiccatiSolution(P=P, K=K, residual=residual, iterations=it)


def stationary_covariance(Acl, D, Sigma_w):
    """Stationary state covariance of x+ = Acl x + D w, Cov(w) = Sigma_w.

    Covariances propagate as Sigma+ = Acl Sigma Acl' + D Sigma_w D', so the
    fixed point is the transposed-argument Lyapunov solve; a long-run sample
    average over the loop pins this orientation (the two coincide for scalar
    and normal Acl).
    """
    Acl = _square(Acl, "Acl")
    D = np.asarray(D, dtype=float).reshape(Acl.shape[0], -1)
    Sigma_w = np.asarray(Sigma_w, dtype=float).reshape(D.shape[1], D.shape[1])
    return solve_dlyap(Acl.T, D @ Sigma_w @ D.T)


def terminal_stage_cost(Acl, D, Sigma_w, Q, R, K):
    """Stationary expectation of x'Qx + u'Ru under u = Kx in the terminal loop."""
    Acl = _square(Acl, "Acl")
    n = Acl.shape[0]
    Q = _square(Q, "Q")
    K = np.asarray(K, dtype=float).reshape(-1, n)
    R = np.asarray(R, dtype=float).reshape(K.shape[0], K.shape[0])
    Sigma = stationary_covariance(Acl, D, Sigma_w)
    return float(np.trace((Q + K.T @ R @ K) @ Sigma))


def controllable(A, B):
    """Kalman rank test of the pair (A, B)."""
    A = _square(A, "A")
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.linalg.matrix_rank(np.hstack(blocks)) == n


def detectable(A, C):
    """PBH test: every unstable mode of A is observable through C."""
    A = _square(A, "A")
    n = A.shape[0]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - SCHUR_MARGIN:
            continue
        test = np.vstack([A - lam * np.eye(n), C])
        if np.linalg.matrix_rank(test) < n:
            return False
    return True


def sqrtm_psd(Q):
    """Symmetric PSD square root via eigen-decomposition."""
    Q = _square(Q, "Q")
    vals, vecs = np.linalg.eigh(0.5 * (Q + Q.T))
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T
