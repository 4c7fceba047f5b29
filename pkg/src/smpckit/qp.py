"""Dense convex QP/LP solving for controllers, set calculus and verification.

One primal-dual interior-point path serves both LPs (zero Hessian, handled
through a fixed proximal regularization) and strictly convex QPs.  The
iteration itself lives in a backend kernel: the compiled extension
``smpckit._ipm`` when built, otherwise the NumPy twin ``smpckit._ipm_py``.
Set ``SMPCKIT_BACKEND=python`` to force the fallback.

Status is part of the public contract: callers must be able to distinguish
"this state is outside the feasible region" (status ``infeasible``) from a
solver breakdown (status ``max_iter``).
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _ipm_py

try:  # pragma: no cover - exercised only when the extension is built
    from . import _ipm as _ipm_ext
except ImportError:  # pragma: no cover
    _ipm_ext = None

if os.environ.get("SMPCKIT_BACKEND", "").lower() == "python" or _ipm_ext is None:
    _kernel = _ipm_py
    _BACKEND_NAME = "python"
else:
    _kernel = _ipm_ext
    _BACKEND_NAME = "compiled"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
INFEAS_GAP = 1e-8


def backend_name():
    """Name of the kernel selected at import: 'compiled' or 'python'."""
    return _BACKEND_NAME


def _as_matrix(a, cols=None):
    a = np.zeros((0, cols or 0)) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
    return np.ascontiguousarray(a)


def _as_vector(a):
    a = np.zeros(0) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
    return np.ascontiguousarray(a)


@dataclass
class QProblem:
    """min 1/2 x'Hx + g'x  s.t.  ineq_A x <= ineq_b,  eq_A x = eq_b."""

    hessian: np.ndarray
    gradient: np.ndarray
    ineq_A: np.ndarray = None
    ineq_b: np.ndarray = None
    eq_A: np.ndarray = None
    eq_b: np.ndarray = None

    def __post_init__(self):
        self.gradient = _as_vector(self.gradient)
        d = self.gradient.shape[0]
        if self.hessian is None:
            self.hessian = np.zeros((d, d))
        self.hessian = _as_matrix(self.hessian)
        self.ineq_A = _as_matrix(self.ineq_A, cols=d)
        self.ineq_b = _as_vector(self.ineq_b)
        self.eq_A = _as_matrix(self.eq_A, cols=d)
        self.eq_b = _as_vector(self.eq_b)
        if self.hessian.shape != (d, d):
            raise ValueError("hessian dimension mismatch")
        if np.max(np.abs(self.hessian - self.hessian.T), initial=0.0) > 1e-10:
            raise ValueError("hessian not symmetric within 1e-10")
        if self.ineq_A.shape != (self.ineq_b.shape[0], d):
            raise ValueError("inequality dimension mismatch")
        if self.eq_A.shape != (self.eq_b.shape[0], d):
            raise ValueError("equality dimension mismatch")
        for arr in (self.hessian, self.gradient, self.ineq_A, self.ineq_b,
                    self.eq_A, self.eq_b):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError("non-finite entries in problem data")


@dataclass
class QPSolution:
    x: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    iterations: int = 0
    infeasibility_gap: float = 0.0


@dataclass
class FeasibilityResult:
    feasible: bool
    witness: np.ndarray = None
    gap: float = 0.0


def solve_qp(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve a QProblem; status ``optimal`` guarantees KKT residuals <= tol."""
    return _solve(problem.hessian, problem.gradient, problem.ineq_A,
                  problem.ineq_b, problem.eq_A, problem.eq_b,
                  tol=tol, max_iter=max_iter)


def _solve(H, g, G, h, A, b, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Backend call plus status resolution; inputs are raw float64 arrays.

    Internal fast path used by the controllers and the polytope LPs so that
    per-call overhead stays small in closed-loop simulation.
    """
    x, code, iters, kkt = _kernel.solve(H, g, G, h, A, b, tol, max_iter)
    is_lp = not H.size or not np.any(H)
    if code == _ipm_py.OPTIMAL:
        # The proximal shift gives unbounded LPs a finite but enormous
        # minimizer; a recession-ray certificate settles those cases.
        if is_lp and x.size and np.max(np.abs(x)) > 1e8 \
                and _has_improving_ray(g, G, A, tol):
            return QPSolution(x, -np.inf, UNBOUNDED, kkt, iters)
        obj = float(0.5 * x @ (H @ x) + g @ x) if H.size else float(g @ x)
        return QPSolution(x, obj, OPTIMAL, kkt, iters)

    # Not solved: decide between infeasible / unbounded / max_iter using a
    # phase-1 elastic LP, which is always feasible and bounded.
    feas = solve_lp_feasibility(G, h, A, b, tol=tol)
    if not feas.feasible:
        return QPSolution(x, np.inf, INFEASIBLE, kkt, iters,
                          infeasibility_gap=feas.gap)
    if is_lp and _has_improving_ray(g, G, A, tol):
        return QPSolution(x, -np.inf, UNBOUNDED, kkt, iters)
    obj = float(0.5 * x @ (H @ x) + g @ x) if H.size else float(g @ x)
    return QPSolution(x, obj, MAX_ITER, kkt, iters)


def solve_lp_feasibility(ineq_A, ineq_b, eq_A=None, eq_b=None, tol=DEFAULT_TOL):
    """Phase-1 test of {x : ineq_A x <= ineq_b, eq_A x = eq_b}.

    Feasible: returns a witness satisfying the constraints within 1e-8.
    Infeasible: the minimal elastic violation (``gap``) is >= 1e-8.
    """
    G = _as_matrix(ineq_A)
    A = _as_matrix(eq_A)
    d = max(G.shape[1], A.shape[1])
    if d == 0:
        raise ValueError("empty constraint system")
    G = _as_matrix(ineq_A, cols=d)
    A = _as_matrix(eq_A, cols=d)
    if G.shape[1] != d or A.shape[1] != d:
        raise ValueError("constraint dimension mismatch")
    h = _as_vector(ineq_b)
    b = _as_vector(eq_b)
    m = G.shape[0]
    p = A.shape[0]

    # Variables (x, t, u, v): min 1't + 1'(u+v)
    #   Gx - t <= h, t >= 0, Ax + u - v = b, u, v >= 0.
    dim = d + m + 2 * p
    g_ext = np.concatenate([np.zeros(d), np.ones(m + 2 * p)])
    G_ext = np.zeros((2 * m + 2 * p, dim))
    h_ext = np.zeros(2 * m + 2 * p)
    if m:
        G_ext[:m, :d] = G
        G_ext[:m, d:d + m] = -np.eye(m)
        h_ext[:m] = h
        G_ext[m:2 * m, d:d + m] = -np.eye(m)
    if p:
        G_ext[2 * m:2 * m + 2 * p, d + m:] = -np.eye(2 * p)
    A_ext = np.zeros((p, dim))
    b_ext = b
    if p:
        A_ext[:, :d] = A
        A_ext[:, d + m:d + m + p] = np.eye(p)
        A_ext[:, d + m + p:] = -np.eye(p)

    H0 = np.zeros((dim, dim))
    # The feasible/infeasible decision boundary sits at 1e-8, so the
    # phase-1 LP is solved tighter than the caller's tolerance; the floor
    # stays above the proximal-regularization limit of the kernel.
    x, code, iters, kkt = _kernel.solve(H0, g_ext, G_ext, h_ext, A_ext, b_ext,
                                        max(tol * 1e-2, 1e-9), DEFAULT_MAX_ITER)
    if code != _ipm_py.OPTIMAL and kkt > tol:
        # Conservative: an unresolved phase-1 is reported as infeasible with
        # an infinite gap rather than guessing a witness.
        return FeasibilityResult(False, None, np.inf)
    gap = float(g_ext @ x)
    witness = x[:d]
    violation = 0.0
    if m:
        violation = max(violation, float(np.max(G @ witness - h, initial=0.0)))
    if p:
        violation = max(violation, float(np.max(np.abs(A @ witness - b))))
    if gap <= INFEAS_GAP or violation <= INFEAS_GAP:
        return FeasibilityResult(True, witness, max(gap, 0.0))
    return FeasibilityResult(False, None, gap)


def _has_improving_ray(g, G, A, tol):
    """Recession certificate: {Gr <= 0, Ar = 0, g'r <= -1} nonempty."""
    d = g.shape[0]
    rows = [G] if G.size else []
    rows.append(g.reshape(1, d))
    G_ray = np.vstack(rows) if rows else g.reshape(1, d)
    h_ray = np.zeros(G_ray.shape[0])
    h_ray[-1] = -1.0
    res = solve_lp_feasibility(G_ray, h_ray, A if A.size else None,
                               np.zeros(A.shape[0]) if A.size else None,
                               tol=tol)
    return res.feasible
