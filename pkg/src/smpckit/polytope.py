"""Polytope calculus in H-representation: supports, membership, Pontryagin
differences, robust invariant set computations.

Minkowski sums are never materialized as H-polytopes (vertex blowup is
exponential); membership in truncated sums is decided by LP feasibility and
supports by additivity of support functions, which keeps everything exact
for the bounded sets this toolkit handles.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg, qp

CONTAIN_TOL = 1e-9
FIXPOINT_TOL = 1e-9
MAX_RPI_CAP = 500
MRPI_S_CAP = 200


@dataclass
class HPolytope:
    """{x : H x <= h} with r facet rows."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float)).ravel()
        if self.H.shape[0] != self.h.shape[0]:
            raise ValueError("row count mismatch between H and h")
        if not (np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.h))):
            raise ValueError("non-finite polytope data")
        if self.H.shape[0] and np.any(np.all(self.H == 0.0, axis=1)):
            raise ValueError("H contains an all-zero row")
        self._axis_bounds = self._detect_axis_bounds()

    def _detect_axis_bounds(self):
        """Per-coordinate (lb, ub) when every row has one nonzero entry.

        Axis-aligned sets get exact closed-form supports, which keeps the
        disturbance-box tightenings free of LP tolerance.
        """
        if self.nrows == 0 or np.any(np.count_nonzero(self.H, axis=1) != 1):
            return None
        n = self.dim
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        for i in range(self.nrows):
            j = int(np.flatnonzero(self.H[i])[0])
            coef = self.H[i, j]
            bound = self.h[i] / coef
            if coef > 0:
                ub[j] = min(ub[j], bound)
            else:
                lb[j] = max(lb[j], bound)
        if np.any(lb > ub):
            return None  # empty; let the LP path report it
        return lb, ub

    @property
    def dim(self):
        return self.H.shape[1]

    @property
    def nrows(self):
        return self.H.shape[0]

    def contains(self, x, tol=CONTAIN_TOL):
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise ValueError("dimension mismatch")
        return bool(np.all(self.H @ x <= self.h + tol))

    def contains_all(self, X, tol=CONTAIN_TOL):
        """Vectorized membership for an (n_points, dim) array."""
        X = np.asarray(X, dtype=float)
        return np.all(X @ self.H.T <= self.h + tol, axis=1)

    def support(self, direction):
        return support(self, direction)

    def is_empty(self):
        return not qp.solve_lp_feasibility(self.H, self.h).feasible

    def is_bounded(self):
        try:
            for j in range(self.dim):
                e = np.zeros(self.dim)
                for sgn in (1.0, -1.0):
                    e[j] = sgn
                    support(self, e)
        except UnboundedSetError:
            return False
        return True

    def scaled(self, factor):
        """factor * P for factor > 0 (H-rep scales offsets only)."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return HPolytope(self.H.copy(), factor * self.h)

    def to_json(self):
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @staticmethod
    def from_json(obj):
        return HPolytope(np.asarray(obj["H"], dtype=float),
                         np.asarray(obj["h"], dtype=float))

    @staticmethod
    def box(lo, hi):
        """Axis-aligned box {lo <= x <= hi}."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("need lo < hi componentwise")
        n = lo.shape[0]
        return HPolytope(np.vstack([np.eye(n), -np.eye(n)]),
                         np.concatenate([hi, -lo]))


class UnboundedSetError(ValueError):
    """Raised when a support LP detects an unbounded direction."""


class EmptySetError(ValueError):
    """Raised when an operation needs a nonempty polytope."""


def support(P, direction, tol=1e-10):
    """max_{x in P} direction'x; closed form on axis boxes, one LP otherwise."""
    d = np.asarray(direction, dtype=float).ravel()
    if d.shape[0] != P.dim:
        raise ValueError("direction dimension mismatch")
    if not np.any(d):
        return 0.0
    bounds = getattr(P, "_axis_bounds", None)
    if bounds is not None:
        lb, ub = bounds
        val = 0.0
        for j in range(P.dim):
            if d[j] > 0:
                val += d[j] * ub[j]
            elif d[j] < 0:
                val += d[j] * lb[j]
        if not np.isfinite(val):
            raise UnboundedSetError("polytope unbounded in the given direction")
        return float(val)
    sol = qp._solve(np.zeros((P.dim, P.dim)), -d, P.H, P.h,
                    np.zeros((0, P.dim)), np.zeros(0), tol=tol)
    if sol.status == qp.MAX_ITER and tol < qp.DEFAULT_TOL:
        # The tight tolerance is opportunistic; fall back to the solver's
        # contractual accuracy before giving up.
        sol = qp._solve(np.zeros((P.dim, P.dim)), -d, P.H, P.h,
                        np.zeros((0, P.dim)), np.zeros(0), tol=qp.DEFAULT_TOL)
    if sol.status == qp.UNBOUNDED:
        raise UnboundedSetError("polytope unbounded in the given direction")
    if sol.status == qp.INFEASIBLE:
        raise EmptySetError("support of an empty polytope")
    if sol.status != qp.OPTIMAL:
        raise RuntimeError(f"support LP did not converge: {sol.status}")
    return float(-sol.objective)


def contains(P, x, tol=CONTAIN_TOL):
    return P.contains(x, tol=tol)


def pontryagin_diff(P, S):
    """P minus-Minkowski S: {x : x + s in P for all s in S}.

    The result may be empty; emptiness is a value (query ``is_empty``), not
    an error, because certificate construction must distinguish "empty" from
    "failed".
    """
    if P.dim != S.dim:
        raise ValueError("dimension mismatch")
    sigma = np.array([support(S, P.H[i]) for i in range(P.nrows)])
    return HPolytope(P.H.copy(), P.h - sigma)


def linear_image_invertible(M, P):
    """{M x : x in P} for invertible M (rows become H M^-1)."""
    M = np.asarray(M, dtype=float)
    n = P.dim
    if M.shape != (n, n):
        raise ValueError("map must be square of the polytope dimension")
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("map is singular; image has empty interior") from exc
    if np.linalg.cond(M) > 1e12:
        raise ValueError("map is singular; image has empty interior")
    return HPolytope(P.H @ Minv, P.h.copy())


def member_truncated_sum(x, A, D, W, s):
    """Is x in the s-term truncated sum of A^k D W, decided by LP feasibility."""
    if s < 1:
        raise ValueError("need s >= 1")
    A = np.asarray(A, dtype=float)
    D = np.asarray(D, dtype=float).reshape(A.shape[0], -1)
    x = np.asarray(x, dtype=float).ravel()
    n, n_w = D.shape
    if x.shape[0] != n:
        raise ValueError("dimension mismatch")
    terms = []
    Ak = np.eye(n)
    for _ in range(s):
        terms.append(Ak @ D)
        Ak = A @ Ak
    return _member_terms(terms, W, x)


def _member_terms(terms, W, x):
    s = len(terms)
    G = np.kron(np.eye(s), W.H)
    h = np.tile(W.h, s)
    A_eq = np.hstack(terms)
    return qp.solve_lp_feasibility(G, h, A_eq, x).feasible


@dataclass
class TruncatedReachSet:
    """Outer approximation of the infinite sum of A^k D W.

    Holds the s leading terms A^k D, the base disturbance polytope, and the
    scale 1/(1-alpha) that turns the truncation into an invariant outer set.
    """

    terms: list
    base: HPolytope
    scale: float
    epsilon: float
    alpha: float
    s: int
    _lp_G: np.ndarray = field(default=None, repr=False)
    _lp_h: np.ndarray = field(default=None, repr=False)
    _lp_A: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.scale < 1.0:
            raise ValueError("scale must be >= 1")
        self._lp_G = np.kron(np.eye(self.s), self.base.H)
        self._lp_h = np.tile(self.base.h, self.s)
        self._lp_A = np.hstack(self.terms)

    @property
    def dim(self):
        return self.terms[0].shape[0]

    def member(self, x):
        """x in scale * (truncated sum), one feasibility LP."""
        x = np.asarray(x, dtype=float).ravel()
        return qp.solve_lp_feasibility(self._lp_G, self._lp_h,
                                       self._lp_A, x / self.scale).feasible

    def support(self, direction):
        d = np.asarray(direction, dtype=float).ravel()
        return self.scale * sum(support(self.base, T.T @ d) for T in self.terms)

    def circumradius(self, n_directions=64):
        """Directional estimate of max ||x||_2 over the set."""
        if self.dim == 1:
            dirs = [np.array([1.0]), np.array([-1.0])]
        else:
            angles = np.linspace(0.0, 2.0 * np.pi, n_directions, endpoint=False)
            dirs = [np.array([np.cos(a), np.sin(a)]) for a in angles]
            if self.dim > 2:
                rng = np.random.default_rng(0)
                extra = rng.standard_normal((n_directions, self.dim))
                extra /= np.linalg.norm(extra, axis=1, keepdims=True)
                dirs = [np.eye(self.dim)[j] * sgn for j in range(self.dim)
                        for sgn in (1, -1)] + list(extra)
        return max(self.support(d) for d in dirs)

    def to_json(self):
        return {
            "terms": [T.tolist() for T in self.terms],
            "base": self.base.to_json(),
            "scale": self.scale,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "s": self.s,
        }

    @staticmethod
    def from_json(obj):
        return TruncatedReachSet(
            terms=[np.asarray(T, dtype=float) for T in obj["terms"]],
            base=HPolytope.from_json(obj["base"]),
            scale=float(obj["scale"]), epsilon=float(obj["epsilon"]),
            alpha=float(obj["alpha"]), s=int(obj["s"]))


def mrpi_outer(A, D, W, eps, s_force=None):
    """Invariant outer approximation of the infinite reach set of A^k D W.

    Finds the smallest s with A^s(DW) inside alpha * DW for alpha small
    enough that scaling the s-term truncation by 1/(1-alpha) stays within
    eps (infinity-norm ball) of the true set.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    D = np.asarray(D, dtype=float).reshape(n, -1)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not linalg.is_schur_stable(A):
        raise ValueError("A must be Schur stable")
    if not W.contains(np.zeros(W.dim)) or np.min(W.h) <= 0:
        raise ValueError("W must contain the origin in its interior")
    if not W.is_bounded():
        raise UnboundedSetError("W must be bounded")
    DW = linear_image_invertible(D, W) if D.shape[1] == n else None
    if DW is None:
        raise ValueError("D must be square nonsingular for the contraction test")

    coord_dirs = [sgn * np.eye(n)[j] for j in range(n) for sgn in (1.0, -1.0)]
    s = s_force if s_force is not None else 0
    while True:
        if s_force is None:
            s += 1
        As = np.linalg.matrix_power(A, s)
        alpha = max(
            support(W, D.T @ As.T @ DW.H[i]) / DW.h[i]
            for i in range(DW.nrows)
        )
        radius = max(
            sum(support(W, D.T @ np.linalg.matrix_power(A, k).T @ e)
                for k in range(s))
            for e in coord_dirs
        )
        if s_force is not None or alpha <= eps / (eps + radius):
            break
        if s >= MRPI_S_CAP:
            raise RuntimeError("contraction index cap exceeded; A contracts "
                               "too slowly for the requested accuracy")
    if alpha >= 1.0:
        raise RuntimeError("no contraction at the requested index")

    terms = [np.linalg.matrix_power(A, k) @ D for k in range(s)]
    out = TruncatedReachSet(terms=terms, base=W, scale=1.0 / (1.0 - alpha),
                            epsilon=eps, alpha=float(alpha), s=s)
    if s_force is None:
        # Outer-approximation guarantee, checked via support functions:
        # (scale - 1) * support(truncation, d) <= eps in every tested direction.
        for d in coord_dirs:
            truncated = sum(support(W, T.T @ d) for T in terms)
            if (out.scale - 1.0) * truncated > eps + 1e-12:
                raise RuntimeError("outer approximation accuracy check failed")
    return out


def default_reach_set(Acl, D, W, eps_frac=0.01):
    """Reach-set outer approximation at accuracy eps_frac * circumradius.

    Two passes: a coarse set fixes the size scale, then the accuracy target
    is re-expressed as an absolute eps.
    """
    coarse = mrpi_outer(Acl, D, W, eps=1.0)
    eps = max(eps_frac * coarse.circumradius(), 1e-12)
    return mrpi_outer(Acl, D, W, eps=eps)


def max_rpi(Acl, D, W, Xc):
    """Maximal robust positively invariant subset of Xc for x+ = Acl x + D w.

    Gilbert-Tan style unrolling: horizon-k rows are Xc rows mapped through
    Acl^k with offsets tightened by the accumulated disturbance supports;
    stops when every next-horizon row is redundant (offset slack below
    1e-9).  Returns the fixed point, which may be empty (flagged, not an
    error).
    """
    Acl = np.asarray(Acl, dtype=float)
    n = Acl.shape[0]
    D = np.asarray(D, dtype=float).reshape(n, -1)
    if not linalg.is_schur_stable(Acl):
        raise ValueError("Acl must be Schur stable")
    if Xc.dim != n or W.dim != D.shape[1]:
        raise ValueError("dimension mismatch")

    rows_H = [Xc.H.copy()]
    rows_h = [Xc.h.copy()]
    # Accumulated tightening per base row: sum_j support(W, D' Acl'^j f).
    tight = np.zeros(Xc.nrows)
    normals = Xc.H.copy()

    for _ in range(MAX_RPI_CAP):
        cur = HPolytope(np.vstack(rows_H), np.concatenate(rows_h))
        if cur.is_empty():
            return cur
        tight = tight + np.array([support(W, D.T @ normals[i])
                                  for i in range(Xc.nrows)])
        normals = normals @ Acl
        offsets = Xc.h - tight
        # Candidate rows redundant w.r.t. the current set => fixed point.
        all_redundant = True
        keep = []
        for i in range(Xc.nrows):
            if np.max(np.abs(normals[i])) < 1e-14:
                continue
            val = support(cur, normals[i])
            if val > offsets[i] + FIXPOINT_TOL:
                all_redundant = False
                keep.append(i)
        if all_redundant:
            result = cur
            break
        rows_H.append(normals[keep])
        rows_h.append(offsets[keep])
    else:
        raise RuntimeError("invariant set iteration cap exceeded")

    if not result.is_empty():
        _check_robust_invariance(result, Acl, D, W)
    return result


def _check_robust_invariance(Omega, Acl, D, W, tol=1e-8):
    for i in range(Omega.nrows):
        f = Omega.H[i]
        lhs = support(Omega, Acl.T @ f) + support(W, D.T @ f)
        if lhs > Omega.h[i] + tol:
            raise RuntimeError("robust invariance check failed on a facet")


def dumps(obj):
    """Canonical JSON for polytope-like objects (stable key order)."""
    return json.dumps(obj.to_json(), sort_keys=True)
