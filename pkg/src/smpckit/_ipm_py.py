"""Pure NumPy Mehrotra predictor-corrector interior-point kernel.

Reference implementation of the same iteration as the compiled kernel in
``smpckit._ipm``; selected automatically when the extension is missing or
when ``SMPCKIT_BACKEND=python`` is set.  Solves

    min 1/2 x'Hx + g'x   s.t.   Gx <= h,  Ax = b

for dense H (PSD, possibly zero), returning a raw status code that the
``qp`` module turns into the public solution contract.
"""

import numpy as np

OPTIMAL = 0
MAX_ITER = 1
DIVERGED = 2
STALLED = 3

_PROX = 1e-10      # proximal shift on H; lets one path serve LP and QP
_EQ_REG = 1e-12    # regularization of the equality block of the KKT matrix
_STEP_FRAC = 0.995
_W_CLIP = 1e16


def solve(H, g, G, h, A, b, tol=1e-8, max_iter=200):
    """Run the interior-point iteration on one dense problem.

    Returns ``(x, status, iterations, kkt_residual)`` where status is one of
    the module-level codes.  All inputs must be float64 ndarrays; G/A may
    have zero rows.
    """
    d = g.shape[0]
    m = G.shape[0]
    p = A.shape[0]

    Ht = H + _PROX * np.eye(d)

    if m == 0:
        return _solve_equality_only(Ht, g, A, b, p, d)

    x = np.zeros(d)
    y = np.zeros(p)
    s = np.maximum(1.0, h - G @ x)
    z = np.ones(m)

    status = MAX_ITER
    it = 0
    pinf_snapshot = np.inf
    for it in range(1, max_iter + 1):
        r_d = Ht @ x + g + G.T @ z + (A.T @ y if p else 0.0)
        r_p = G @ x + s - h
        r_e = A @ x - b if p else np.zeros(0)
        mu = s @ z / m

        kkt = _kkt_residual(r_d, G, x, h, r_e, mu)
        if kkt <= tol:
            status = OPTIMAL
            break
        if not np.isfinite(mu) or np.max(np.abs(x)) > 1e12:
            status = DIVERGED
            break
        # Infeasible instances freeze the primal residual while mu drifts;
        # a residual that has not contracted over 25 iterations is a stall.
        pinf = float(np.max(np.abs(r_p)))
        if r_e.size:
            pinf = max(pinf, float(np.max(np.abs(r_e))))
        if it >= 50 and pinf > 100.0 * tol and pinf > 0.9 * pinf_snapshot:
            status = STALLED
            break
        if it % 25 == 0:
            pinf_snapshot = pinf

        w = np.clip(z / s, 1.0 / _W_CLIP, _W_CLIP)
        K = Ht + (G.T * w) @ G
        if p:
            kkt_mat = np.zeros((d + p, d + p))
            kkt_mat[:d, :d] = K
            kkt_mat[:d, d:] = A.T
            kkt_mat[d:, :d] = A
            kkt_mat[d:, d:] = -_EQ_REG * np.eye(p)
            try:
                lu_solve = _make_lu(kkt_mat)
            except np.linalg.LinAlgError:
                status = STALLED
                break
        else:
            try:
                lu_solve = _make_lu(K)
            except np.linalg.LinAlgError:
                status = STALLED
                break

        # Affine (predictor) direction: sigma = 0.
        rc = s * z
        dx_a, dy_a, ds_a, dz_a = _direction(
            lu_solve, r_d, r_p, r_e, rc, s, z, w, G, d, p
        )
        alpha_a = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = (s + alpha_a * ds_a) @ (z + alpha_a * dz_a) / m
        sigma = min(0.999, max(0.0, (mu_aff / mu) ** 3))

        # Corrector with Mehrotra centering term, same factorization.
        rc = s * z + ds_a * dz_a - sigma * mu
        dx, dy, ds, dz = _direction(
            lu_solve, r_d, r_p, r_e, rc, s, z, w, G, d, p
        )
        alpha = _STEP_FRAC * min(_max_step(s, ds), _max_step(z, dz))
        alpha = min(1.0, alpha)

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        if p:
            y = y + alpha * dy

    r_d = Ht @ x + g + G.T @ z + (A.T @ y if p else 0.0)
    r_e = A @ x - b if p else np.zeros(0)
    mu = s @ z / m
    kkt = _kkt_residual(r_d, G, x, h, r_e, mu)
    if status == MAX_ITER and kkt <= tol:
        status = OPTIMAL
    return x, status, it, kkt


def _solve_equality_only(Ht, g, A, b, p, d):
    """No inequalities: the KKT system is linear, solve it directly."""
    if p == 0:
        try:
            x = np.linalg.solve(Ht, -g)
        except np.linalg.LinAlgError:
            return np.zeros(d), DIVERGED, 1, np.inf
        return x, OPTIMAL, 1, float(np.max(np.abs(Ht @ x + g)))
    kkt_mat = np.zeros((d + p, d + p))
    kkt_mat[:d, :d] = Ht
    kkt_mat[:d, d:] = A.T
    kkt_mat[d:, :d] = A
    rhs = np.concatenate([-g, b])
    try:
        sol = np.linalg.solve(kkt_mat, rhs)
    except np.linalg.LinAlgError:
        return np.zeros(d), STALLED, 1, np.inf
    x = sol[:d]
    res = max(
        float(np.max(np.abs(Ht @ x + g + A.T @ sol[d:]))),
        float(np.max(np.abs(A @ x - b))),
    )
    return x, OPTIMAL if res < 1e-6 else STALLED, 1, res


def _make_lu(mat):
    import scipy.linalg

    lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)
    if not np.all(np.isfinite(lu)):
        raise np.linalg.LinAlgError("non-finite factorization")

    def solve_with(rhs):
        return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)

    return solve_with


def _direction(lu_solve, r_d, r_p, r_e, rc, s, z, w, G, d, p):
    """Back-substitute one Newton direction for a given complementarity rhs."""
    rhs_x = -r_d - G.T @ (w * r_p - rc / s)
    if p:
        rhs = np.concatenate([rhs_x, -r_e])
        sol = lu_solve(rhs)
        dx, dy = sol[:d], sol[d:]
    else:
        dx = lu_solve(rhs_x)
        dy = np.zeros(0)
    ds = -r_p - G @ dx
    dz = -(rc + z * ds) / s
    return dx, dy, ds, dz


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _kkt_residual(r_d, G, x, h, r_e, mu):
    viol = float(np.max(G @ x - h, initial=0.0))
    res = max(float(np.max(np.abs(r_d))), max(viol, 0.0), mu)
    if r_e.size:
        res = max(res, float(np.max(np.abs(r_e))))
    return res
