# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Mehrotra predictor-corrector kernel.

Same iteration as smpckit._ipm_py with the linear algebra done through
BLAS/LAPACK; one call runs the whole interior-point loop so per-solve
Python overhead stays at a single function call.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport ddot, dgemv
from scipy.linalg.cython_lapack cimport dgetrf, dgetrs, dpotrf, dpotrs

from . import _ipm_py

cnp.import_array()

OPTIMAL = 0
MAX_ITER = 1
DIVERGED = 2
STALLED = 3

cdef double PROX = 1e-10
cdef double EQ_REG = 1e-12
cdef double STEP_FRAC = 0.995
cdef double W_CLIP = 1e16


def solve(H, g, G, h, A, b, double tol=1e-8, int max_iter=200):
    """Drop-in twin of ``_ipm_py.solve``; see that module for the contract."""
    cdef cnp.ndarray[double, ndim=2, mode='c'] H_ = np.ascontiguousarray(H, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode='c'] g_ = np.ascontiguousarray(g, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode='c'] G_ = np.ascontiguousarray(G, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode='c'] h_ = np.ascontiguousarray(h, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode='c'] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode='c'] b_ = np.ascontiguousarray(b, dtype=np.float64)

    cdef int d = g_.shape[0]
    cdef int m = G_.shape[0]
    cdef int p = A_.shape[0]

    if m == 0:
        # Equality-only problems reduce to one linear solve; not a hot path.
        return _ipm_py.solve(H_, g_, G_, h_, A_, b_, tol, max_iter)

    cdef int dk = d + p
    cdef cnp.ndarray[double, ndim=1] x = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] y = np.zeros(max(p, 1))
    cdef cnp.ndarray[double, ndim=1] s = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] z = np.ones(m)
    cdef cnp.ndarray[double, ndim=1] w = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] r_d = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] r_p = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] r_e = np.empty(max(p, 1))
    cdef cnp.ndarray[double, ndim=1] rc = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] tmp_m = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] rhs = np.empty(dk)
    cdef cnp.ndarray[double, ndim=1] sol = np.empty(dk)
    cdef cnp.ndarray[double, ndim=1] dx = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] ds_a = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] dz_a = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] ds = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] dz = np.empty(m)
    cdef cnp.ndarray[double, ndim=2, mode='c'] GW = np.empty((m, d))
    cdef cnp.ndarray[double, ndim=2, mode='c'] K = np.empty((dk, dk))
    cdef cnp.ndarray[int, ndim=1] ipiv = np.empty(dk, dtype=np.intc)

    cdef double* Hp = &H_[0, 0] if H_.size else NULL
    cdef double* Gp = &G_[0, 0]
    cdef double* Ap = &A_[0, 0] if p else NULL

    cdef int it = 0, i, j, k, info, nrhs = 1, ione = 1
    cdef int status = MAX_ITER
    cdef int chol_ok
    cdef double mu, mu_aff, sigma, alpha, alpha_p, alpha_d, kkt, viol, sw
    cdef double pinf, pinf_snapshot = 1e300
    cdef double one = 1.0, zero = 0.0, mone = -1.0
    cdef char tN = b'N', tT = b'T', uL = b'L'

    for i in range(m):
        sw = h_[i]
        s[i] = sw if sw > 1.0 else 1.0

    for it in range(1, max_iter + 1):
        # Residuals: r_d = Hx + prox*x + g + G'z + A'y, r_p = Gx + s - h.
        for i in range(d):
            r_d[i] = g_[i] + PROX * x[i]
        if H_.size:
            dgemv(&tT, &d, &d, &one, Hp, &d, &x[0], &ione, &one, &r_d[0], &ione)
        dgemv(&tN, &d, &m, &one, Gp, &d, &z[0], &ione, &one, &r_d[0], &ione)
        if p:
            dgemv(&tN, &d, &p, &one, Ap, &d, &y[0], &ione, &one, &r_d[0], &ione)
        dgemv(&tT, &d, &m, &one, Gp, &d, &x[0], &ione, &zero, &r_p[0], &ione)
        for i in range(m):
            r_p[i] += s[i] - h_[i]
        if p:
            dgemv(&tT, &d, &p, &one, Ap, &d, &x[0], &ione, &zero, &r_e[0], &ione)
            for i in range(p):
                r_e[i] -= b_[i]
        mu = ddot(&m, &s[0], &ione, &z[0], &ione) / m

        kkt = mu
        for i in range(d):
            if fabs(r_d[i]) > kkt:
                kkt = fabs(r_d[i])
        viol = 0.0
        for i in range(m):
            if r_p[i] - s[i] > viol:
                viol = r_p[i] - s[i]
        if viol > kkt:
            kkt = viol
        for i in range(p):
            if fabs(r_e[i]) > kkt:
                kkt = fabs(r_e[i])

        if kkt <= tol:
            status = OPTIMAL
            break
        if not (mu == mu) or _max_abs(&x[0], d) > 1e12:
            status = DIVERGED
            break
        # Infeasible instances freeze the primal residual while mu drifts;
        # a residual that has not contracted over 25 iterations is a stall.
        pinf = _max_abs(&r_p[0], m)
        if p:
            viol = _max_abs(&r_e[0], p)
            if viol > pinf:
                pinf = viol
        if it >= 50 and pinf > 100.0 * tol and pinf > 0.9 * pinf_snapshot:
            status = STALLED
            break
        if it % 25 == 0:
            pinf_snapshot = pinf

        # Normal matrix K = H + prox*I + G'WG (+ equality border).
        for i in range(m):
            sw = z[i] / s[i]
            if sw > W_CLIP:
                sw = W_CLIP
            elif sw < 1.0 / W_CLIP:
                sw = 1.0 / W_CLIP
            w[i] = sw
            sw = sqrt(sw)
            for j in range(d):
                GW[i, j] = sw * G_[i, j]
        for i in range(d):
            for j in range(d):
                sw = PROX if i == j else 0.0
                if H_.size:
                    sw += H_[i, j]
                K[i, j] = sw
        _syrk_ct(&GW[0, 0], &K[0, 0], m, d, dk)
        if p:
            for i in range(p):
                for j in range(d):
                    K[d + i, j] = A_[i, j]
                    K[j, d + i] = A_[i, j]
                for j in range(p):
                    K[d + i, d + j] = -EQ_REG if i == j else 0.0

        chol_ok = 0
        if p == 0:
            # C-order symmetric matrix equals its Fortran view; Cholesky.
            dpotrf(&uL, &dk, &K[0, 0], &dk, &info)
            if info == 0:
                chol_ok = 1
        if not chol_ok:
            if p == 0:
                # Rebuild K, the failed dpotrf overwrote a triangle.
                for i in range(d):
                    for j in range(d):
                        sw = PROX if i == j else 0.0
                        if H_.size:
                            sw += H_[i, j]
                        K[i, j] = sw
                _syrk_ct(&GW[0, 0], &K[0, 0], m, d, dk)
            dgetrf(&dk, &dk, &K[0, 0], &dk, &ipiv[0], &info)
            if info != 0:
                status = STALLED
                break

        # Affine direction: rc = s*z.
        for i in range(m):
            rc[i] = s[i] * z[i]
        _build_rhs(&rhs[0], &r_d[0], &r_p[0], &r_e[0], &rc[0], &w[0], &s[0],
                   Gp, d, m, p)
        _kkt_solve(&K[0, 0], &ipiv[0], &rhs[0], &sol[0], dk, chol_ok)
        for i in range(d):
            dx[i] = sol[i]
        dgemv(&tT, &d, &m, &one, Gp, &d, &dx[0], &ione, &zero, &ds_a[0], &ione)
        for i in range(m):
            ds_a[i] = -r_p[i] - ds_a[i]
            dz_a[i] = -(rc[i] + z[i] * ds_a[i]) / s[i]

        alpha_p = _max_step(&s[0], &ds_a[0], m)
        alpha_d = _max_step(&z[0], &dz_a[0], m)
        alpha = alpha_p if alpha_p < alpha_d else alpha_d
        mu_aff = 0.0
        for i in range(m):
            mu_aff += (s[i] + alpha * ds_a[i]) * (z[i] + alpha * dz_a[i])
        mu_aff /= m
        sigma = (mu_aff / mu) ** 3
        if sigma > 0.999:
            sigma = 0.999
        elif sigma < 0.0:
            sigma = 0.0

        # Corrector, reusing the factorization.
        for i in range(m):
            rc[i] = s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu
        _build_rhs(&rhs[0], &r_d[0], &r_p[0], &r_e[0], &rc[0], &w[0], &s[0],
                   Gp, d, m, p)
        _kkt_solve(&K[0, 0], &ipiv[0], &rhs[0], &sol[0], dk, chol_ok)
        for i in range(d):
            dx[i] = sol[i]
        dgemv(&tT, &d, &m, &one, Gp, &d, &dx[0], &ione, &zero, &ds[0], &ione)
        for i in range(m):
            ds[i] = -r_p[i] - ds[i]
            dz[i] = -(rc[i] + z[i] * ds[i]) / s[i]

        alpha_p = _max_step(&s[0], &ds[0], m)
        alpha_d = _max_step(&z[0], &dz[0], m)
        alpha = STEP_FRAC * (alpha_p if alpha_p < alpha_d else alpha_d)
        if alpha > 1.0:
            alpha = 1.0

        for i in range(d):
            x[i] += alpha * dx[i]
        for i in range(m):
            s[i] += alpha * ds[i]
            z[i] += alpha * dz[i]
        for i in range(p):
            y[i] += alpha * sol[d + i]

    # Final residual with the returned iterate.
    for i in range(d):
        r_d[i] = g_[i] + PROX * x[i]
    if H_.size:
        dgemv(&tT, &d, &d, &one, Hp, &d, &x[0], &ione, &one, &r_d[0], &ione)
    dgemv(&tN, &d, &m, &one, Gp, &d, &z[0], &ione, &one, &r_d[0], &ione)
    if p:
        dgemv(&tN, &d, &p, &one, Ap, &d, &y[0], &ione, &one, &r_d[0], &ione)
    dgemv(&tT, &d, &m, &one, Gp, &d, &x[0], &ione, &zero, &r_p[0], &ione)
    mu = ddot(&m, &s[0], &ione, &z[0], &ione) / m
    kkt = mu
    for i in range(d):
        if fabs(r_d[i]) > kkt:
            kkt = fabs(r_d[i])
    for i in range(m):
        if r_p[i] - h_[i] > kkt:
            kkt = r_p[i] - h_[i]
    if p:
        dgemv(&tT, &d, &p, &one, Ap, &d, &x[0], &ione, &zero, &r_e[0], &ione)
        for i in range(p):
            if fabs(r_e[i] - b_[i]) > kkt:
                kkt = fabs(r_e[i] - b_[i])
    if status == MAX_ITER and kkt <= tol:
        status = OPTIMAL
    return np.asarray(x), status, it, kkt


cdef inline double _max_abs(double* v, int n) noexcept:
    cdef int i
    cdef double best = 0.0
    for i in range(n):
        if fabs(v[i]) > best:
            best = fabs(v[i])
    return best


cdef inline double _max_step(double* v, double* dv, int n) noexcept:
    cdef int i
    cdef double best = 1.0, cand
    for i in range(n):
        if dv[i] < 0.0:
            cand = -v[i] / dv[i]
            if cand < best:
                best = cand
    return best


cdef void _syrk_ct(double* GW, double* K, int m, int d, int ldk) noexcept:
    """K[:d,:d] += GW'GW for C-ordered GW (m x d), K (ldk x ldk)."""
    cdef int i, j, r
    cdef double* row
    for r in range(m):
        row = GW + r * d
        for i in range(d):
            if row[i] == 0.0:
                continue
            for j in range(i, d):
                K[i * ldk + j] += row[i] * row[j]
    # Mirror the upper triangle written above.
    for i in range(d):
        for j in range(i + 1, d):
            K[j * ldk + i] = K[i * ldk + j]


cdef void _build_rhs(double* rhs, double* r_d, double* r_p, double* r_e,
                     double* rc, double* w, double* s, double* Gp,
                     int d, int m, int p) noexcept:
    cdef int i
    for i in range(d):
        rhs[i] = -r_d[i]
    _apply_scaled(rhs, r_p, rc, w, s, Gp, d, m)
    for i in range(p):
        rhs[d + i] = -r_e[i]


cdef void _apply_scaled(double* rhs, double* r_p, double* rc, double* w,
                        double* s, double* Gp, int d, int m) noexcept:
    """rhs[:d] -= G' @ (w*r_p - rc/s), computed row-by-row without scratch."""
    cdef int i, j
    cdef double coef
    for i in range(m):
        coef = w[i] * r_p[i] - rc[i] / s[i]
        if coef == 0.0:
            continue
        for j in range(d):
            rhs[j] -= coef * Gp[i * d + j]


cdef void _kkt_solve(double* K, int* ipiv, double* rhs, double* sol,
                     int dk, int chol_ok) noexcept:
    cdef int info, nrhs = 1, i
    cdef char uL = b'L', tT = b'T'
    for i in range(dk):
        sol[i] = rhs[i]
    if chol_ok:
        dpotrs(&uL, &dk, &nrhs, K, &dk, sol, &dk, &info)
    else:
        # dgetrf factored the C-order buffer as its Fortran transpose, so
        # solve the transposed system.
        dgetrs(&tT, &dk, &nrhs, K, &dk, ipiv, sol, &dk, &info)
