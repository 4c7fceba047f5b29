"""Stochastic MPC with offline striped disturbance-feedback gains and
chance-constraint tightenings.

Offline products: the Riccati pair, stripe gains L_j from one small
tightening-minimizing QP per stripe (overridable, fallback zero), the pair
(P_x, P_c) from the block Lyapunov equation of the extended shift dynamics,
and a frozen tightening table.  Online, the controller solves a strictly
convex QP in the stacked perturbation sequence c and applies u = Kx + c*_0;
near the origin every tightened constraint is slack at c = 0 and the law
reduces exactly to u = Kx.

Tightening construction: the one-step-ahead constraint value carries one
new disturbance (covered by a conservative empirical quantile at level p)
while previously realized disturbances have already propagated through the
closed loop; their contributions are covered by exact support-function
increments of the unstriped closed-loop response.  That makes the shifted
sequence (c_1, ..., c_{N-1}, 0) feasible at the successor state for every
disturbance realization, which is what recursive feasibility consumes.
"""

from dataclasses import dataclass, field

import numpy as np

from . import disturbance, linalg, polytope, qp
from .dafmpc import SynthesisError
from .model import LinearSystem
from .polytope import HPolytope

QUANTILE_SAMPLES = 10**5
LYAP_RESIDUAL_TOL = 1e-8
STRIPE_RIDGE = 1e-9
FAST_PATH_SLACK = 0.0


@dataclass
class ChanceConstraint:
    """P{f'x_{k+1} + g'u_k <= 1} >= p."""

    f: np.ndarray
    g: np.ndarray
    p: float

    def __post_init__(self):
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if not 0.0 < self.p <= 1.0:
            raise ValueError("constraint level p must be in (0, 1]")


@dataclass
class StripedConfig:
    system: LinearSystem
    horizon: int
    Q: np.ndarray
    R: np.ndarray
    constraints: list
    W: disturbance.DisturbanceModel
    domain_box: HPolytope
    tail_horizon: int = None      # N2; defaults to the reach-set index s
    quantile_seed: int = None     # defaults to the disturbance seed

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        self.Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        self.R = np.asarray(self.R, dtype=float).reshape(m, m)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) <= 0:
            raise SynthesisError("cost_not_pd: Q must be positive definite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise SynthesisError("cost_not_pd: R must be positive definite")
        self.constraints = [c if isinstance(c, ChanceConstraint)
                            else ChanceConstraint(*c) for c in self.constraints]
        for c in self.constraints:
            if c.f.shape[0] != n or c.g.shape[0] != m:
                raise ValueError("constraint row dimension mismatch")
        if self.domain_box.dim != n or np.min(self.domain_box.h) <= 0:
            raise ValueError("domain_box must contain the origin in its interior")
        if not self.domain_box.is_bounded():
            raise ValueError("domain_box must be bounded")
        if self.W.dim != self.system.n_w:
            raise ValueError("disturbance dimension mismatch")


@dataclass
class StripedSolution:
    u: np.ndarray
    feasible: bool
    c0: np.ndarray
    objective: float
    status: str
    c: np.ndarray = field(default=None, repr=False)


@dataclass
class StripedController:
    config: StripedConfig
    riccati: linalg.RiccatiSolution
    L: list                      # stripe gains L_1 .. L_{N-1}
    Px: np.ndarray
    Pc: np.ndarray
    tightenings: np.ndarray      # (n_constraints, N + N2)
    N2: int
    lyap_residual: float
    # Online QP template: rows G c <= rhs0 - rhs_x x.
    tmpl_G: np.ndarray = field(repr=False, default=None)
    tmpl_rhs0: np.ndarray = field(repr=False, default=None)
    tmpl_rhs_x: np.ndarray = field(repr=False, default=None)
    hessian: np.ndarray = field(repr=False, default=None)

    @property
    def K(self):
        return self.riccati.K

    @property
    def N(self):
        return self.config.horizon

    def value(self, x, tol=1e-8):
        """Optimal cost x'Px x + c*'Pc c*; infinite off the feasible set."""
        sol = solve_striped(self, x, tol=tol)
        if not sol.feasible:
            return np.inf
        return sol.objective

    def control(self, x):
        """Closed-loop law u(x) = Kx + c*_0; None where infeasible."""
        sol = solve_striped(self, x)
        return sol.u if sol.feasible else None

    def to_json(self):
        return {
            "K": self.K.tolist(),
            "L": [Lj.tolist() for Lj in self.L],
            "Px": self.Px.tolist(),
            "Pc": self.Pc.tolist(),
            "tightenings": self.tightenings.tolist(),
            "N": self.N,
            "N2": self.N2,
            "system": self.config.system.to_json(),
        }


def synthesize_striped(cfg):
    """Offline synthesis: gains, Lyapunov pair, frozen tightening table."""
    sysm = cfg.system
    n, m, N = sysm.n, sysm.m, cfg.horizon

    riccati = linalg.solve_dare(sysm.A, sysm.B, cfg.Q, cfg.R)
    K = riccati.K
    Phi = sysm.A + sysm.B @ K

    L = _stripe_gains(cfg, Phi, K)
    Px, Pc, residual = _lyapunov_pair(cfg, riccati, Phi)

    N2 = cfg.tail_horizon
    if N2 is None:
        N2 = _default_tail_horizon(Phi, sysm.D, cfg.W.support)

    tight = _tightening_table(cfg, Phi, K, N + N2)
    if np.any(tight >= 1.0):
        raise SynthesisError("tightening_exceeds_one: a chance constraint is "
                             "impossible at the requested level")

    tmpl = _online_template(cfg, Phi, K, tight, N2)
    return StripedController(config=cfg, riccati=riccati, L=L, Px=Px, Pc=Pc,
                             tightenings=tight, N2=N2, lyap_residual=residual,
                             tmpl_G=tmpl[0], tmpl_rhs0=tmpl[1],
                             tmpl_rhs_x=tmpl[2], hessian=2.0 * Pc)


def _stripe_gains(cfg, Phi, K):
    """One tightening-minimizing QP per stripe; zero on degenerate data.

    Minimizes the summed worst-case age-j contribution
    |f'(Phi^j D) + g'(K Phi^{j-1} D + L_j)| over the constraint rows, with a
    small ridge so the minimizer is unique; rows with g = 0 cannot be
    compensated and leave L_j at zero.
    """
    sysm = cfg.system
    m, n_w, N = sysm.m, sysm.n_w, cfg.horizon
    W = cfg.W.support
    gains = []
    Phi_j = Phi.copy()           # Phi^j, starting at j = 1
    for j in range(1, N):
        Phi_jm1 = np.linalg.matrix_power(Phi, j - 1)
        rows = []
        for c in cfg.constraints:
            base = c.f @ Phi_j @ sysm.D + c.g @ K @ Phi_jm1 @ sysm.D
            rows.append((base, c.g))
        Lj = _solve_stripe_qp(rows, W, m, n_w)
        gains.append(Lj)
        Phi_j = Phi @ Phi_j
    return gains


def _solve_stripe_qp(rows, W, m, n_w):
    """min sum_c w_support(base_c + g_c' L) + ridge ||L||^2 over L (m x n_w)."""
    wbar = np.array([polytope.support(W, e) for e in np.eye(n_w)])
    n_L = m * n_w
    n_c = len(rows)
    dim = n_L + n_c * n_w        # L entries plus |coefficient| bounds
    H = np.zeros((dim, dim))
    H[:n_L, :n_L] = 2.0 * STRIPE_RIDGE * np.eye(n_L)
    g_vec = np.zeros(dim)
    g_vec[n_L:] = np.tile(wbar, n_c)
    G_rows, h_rows = [], []
    for ci, (base, g_c) in enumerate(rows):
        for k in range(n_w):
            # coefficient_k = base_k + sum_r g_c[r] L[r, k]
            lin = np.zeros(dim)
            for r in range(m):
                lin[r * n_w + k] = g_c[r]
            for sgn in (1.0, -1.0):
                row = sgn * lin
                row[n_L + ci * n_w + k] = -1.0
                G_rows.append(row)
                h_rows.append(-sgn * base[k])
    sol = qp._solve(H, g_vec, np.ascontiguousarray(np.asarray(G_rows)),
                    np.asarray(h_rows), np.zeros((0, dim)), np.zeros(0))
    if sol.status != qp.OPTIMAL:
        return np.zeros((m, n_w))
    return sol.x[:n_L].reshape(m, n_w)


def _lyapunov_pair(cfg, riccati, Phi):
    """Solve the block Lyapunov equation of the extended (x, c) dynamics.

    Psi = [[Phi, B E], [0, M]] with E c = c_0 and M the one-block up-shift;
    the solution is block diagonal (the Riccati identity kills the coupling
    term), giving P_x and P_c.
    """
    sysm = cfg.system
    n, m, N = sysm.n, sysm.m, cfg.horizon
    K = riccati.K
    E = np.zeros((m, N * m))
    E[:, :m] = np.eye(m)
    M = np.zeros((N * m, N * m))
    for i in range(N - 1):
        M[i * m:(i + 1) * m, (i + 1) * m:(i + 2) * m] = np.eye(m)
    Psi = np.zeros((n + N * m, n + N * m))
    Psi[:n, :n] = Phi
    Psi[:n, n:] = sysm.B @ E
    Psi[n:, n:] = M
    Qt = cfg.Q + K.T @ cfg.R @ K
    rhs = np.zeros_like(Psi)
    rhs[:n, :n] = Qt
    rhs[:n, n:] = K.T @ cfg.R @ E
    rhs[n:, :n] = E.T @ cfg.R @ K
    rhs[n:, n:] = E.T @ cfg.R @ E
    X = linalg.solve_dlyap(Psi, rhs)
    Px, Pc = X[:n, :n], X[n:, n:]
    coupling = float(np.max(np.abs(X[:n, n:])))
    residual = float(np.linalg.norm(
        np.block([[Px, np.zeros((n, N * m))], [np.zeros((N * m, n)), Pc]])
        - Psi.T @ np.block([[Px, np.zeros((n, N * m))],
                            [np.zeros((N * m, n)), Pc]]) @ Psi - rhs))
    residual = max(residual, coupling)
    if residual > LYAP_RESIDUAL_TOL:
        raise SynthesisError(f"lyapunov residual {residual:.2e} above tolerance")
    if np.min(np.linalg.eigvalsh(0.5 * (Pc + Pc.T))) <= 0:
        raise SynthesisError("Pc is not positive definite")
    return Px, Pc, residual


def _default_tail_horizon(Phi, D, W_poly):
    """Reach-set truncation index for the terminal loop, at 1% accuracy."""
    n = Phi.shape[0]
    radius = 0.0
    for j in range(n):
        for sgn in (1.0, -1.0):
            e = sgn * np.eye(n)[j]
            total, k = 0.0, 0
            while k < 400:
                term = polytope.support(W_poly, D.T @ np.linalg.matrix_power(Phi, k).T @ e)
                total += term
                k += 1
                if term < 1e-12:
                    break
            radius = max(radius, total)
    out = polytope.mrpi_outer(Phi, D, W_poly, eps=0.01 * radius)
    return out.s


def _tightening_table(cfg, Phi, K, steps):
    """Frozen offsets: quantile of the newest disturbance plus exact support
    increments of the aged closed-loop response."""
    sysm = cfg.system
    W_poly = cfg.W.support
    seed = cfg.quantile_seed if cfg.quantile_seed is not None else cfg.W.seed
    table = np.zeros((len(cfg.constraints), steps))
    for ci, c in enumerate(cfg.constraints):
        row0 = (c.f @ sysm.D).reshape(1, -1)
        base = disturbance.tail_quantile(cfg.W, [1.0], row0, c.p,
                                         n_samples=QUANTILE_SAMPLES,
                                         seed=seed + ci)
        acc = base
        fK = c.f @ Phi + c.g @ K
        Phi_pow = np.eye(sysm.n)
        for i in range(steps):
            if i > 0:
                acc += polytope.support(W_poly, sysm.D.T @ Phi_pow.T @ fK)
                Phi_pow = Phi_pow @ Phi  # now Phi^i for the next increment
            table[ci, i] = acc
    return table


def _online_template(cfg, Phi, K, tight, N2):
    """Rows over c: chance rows for i < N+N2 and domain rows on the nominal
    predictions (the artificial boundedness constraints)."""
    sysm = cfg.system
    n, m, N = sysm.n, sysm.m, cfg.horizon
    steps = N + N2
    n_c = N * m

    Phi_pows = [np.eye(n)]
    for _ in range(steps + 1):
        Phi_pows.append(Phi @ Phi_pows[-1])

    # Nominal prediction maps: xbar_i = Phi^i x + sum_{t<i} Phi^{i-1-t} B c_t.
    def state_coeffs(i):
        C = np.zeros((n, n_c))
        for t in range(min(i, N)):
            C[:, t * m:(t + 1) * m] = Phi_pows[i - 1 - t] @ sysm.B
        return C

    G_rows, rhs0, rhs_x = [], [], []
    for i in range(steps):
        Ci = state_coeffs(i)
        Ci1 = state_coeffs(i + 1)
        for ci, c in enumerate(cfg.constraints):
            row = c.f @ Ci1 + c.g @ K @ Ci
            if i < N:
                row = row.copy()
                row[i * m:(i + 1) * m] += c.g
            G_rows.append(row)
            rhs0.append(1.0 - tight[ci, i])
            rhs_x.append(c.f @ Phi_pows[i + 1] + c.g @ K @ Phi_pows[i])
    Hd, hd = cfg.domain_box.H, cfg.domain_box.h
    for i in range(steps + 1):
        Ci = state_coeffs(i)
        for r in range(Hd.shape[0]):
            G_rows.append(Hd[r] @ Ci)
            rhs0.append(hd[r])
            rhs_x.append(Hd[r] @ Phi_pows[i])
    # Pure-x rows (all-zero c coefficients) stay: they bound the domain X.
    G = np.asarray(G_rows)
    return (np.ascontiguousarray(G), np.asarray(rhs0), np.asarray(rhs_x))


def domain_bounding_box(ctrl):
    """Axis bounds of X = {x : tightened QP feasible}, one LP per side."""
    n = ctrl.config.system.n
    dim = ctrl.hessian.shape[0]
    G_joint = np.hstack([ctrl.tmpl_rhs_x, ctrl.tmpl_G])
    lo, hi = np.empty(n), np.empty(n)
    for j in range(n):
        for sgn, target in ((1.0, hi), (-1.0, lo)):
            g = np.zeros(n + dim)
            g[j] = -sgn
            sol = qp._solve(np.zeros((n + dim, n + dim)), g,
                            np.ascontiguousarray(G_joint), ctrl.tmpl_rhs0,
                            np.zeros((0, n + dim)), np.zeros(0))
            if sol.status != qp.OPTIMAL:
                raise RuntimeError(f"domain probe failed: {sol.status}")
            target[j] = sgn * (-sol.objective)
    return lo, hi


def solve_striped(ctrl, x, terminal_shortcut=True, tol=1e-8):
    """u = Kx + c*_0 from the tightened QP; c* = 0 exactly when feasible.

    The objective x'Px x is constant in c, so the QP minimizes c'Pc c; when
    c = 0 satisfies every tightened row it is optimal and the law is the
    terminal feedback, which the shortcut returns without a solver call.
    """
    x = np.asarray(x, dtype=float).ravel()
    rhs = ctrl.tmpl_rhs0 - ctrl.tmpl_rhs_x @ x
    if terminal_shortcut and np.all(rhs >= -FAST_PATH_SLACK):
        u = ctrl.K @ x
        c0 = np.zeros(ctrl.config.system.m)
        return StripedSolution(u=u, feasible=True, c0=c0,
                               objective=float(x @ ctrl.Px @ x),
                               status=qp.OPTIMAL,
                               c=np.zeros(ctrl.hessian.shape[0]))
    sol = qp._solve(ctrl.hessian, np.zeros(ctrl.hessian.shape[0]),
                    ctrl.tmpl_G, rhs, np.zeros((0, ctrl.hessian.shape[0])),
                    np.zeros(0), tol=tol)
    if sol.status != qp.OPTIMAL:
        return StripedSolution(u=None, feasible=False, c0=None,
                               objective=np.inf, status=sol.status)
    c = sol.x
    m = ctrl.config.system.m
    c0 = c[:m]
    objective = float(x @ ctrl.Px @ x + c @ ctrl.Pc @ c)
    return StripedSolution(u=ctrl.K @ x + c0, feasible=True, c0=c0,
                           objective=objective, status=sol.status, c=c)
