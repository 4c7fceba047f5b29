"""Stochastic MPC with control policies affine in the disturbance.

Synthesis produces a frozen QP template: open-loop moves v, strictly
lower-triangular disturbance feedback gains M, and a robustification layer
that enforces the mixed constraints and the terminal-set constraint for
every disturbance sequence in the stacked support.  The objective is the
exact expectation of the finite-horizon quadratic cost: the disturbance
enters only through trace terms against its covariance because it has zero
mean, and correctness of the symbolic expansion is enforced by a Monte
Carlo oracle in the test suite rather than trusted by derivation.

Robustification is LP duality over the stacked disturbance polytope (never
vertex enumeration).  For symmetric axis-box supports the dual multipliers
have the closed form lambda+/- = (t +/- c)/2, which eliminates them in
favour of per-coefficient magnitude bounds t >= |c|; general polytopic
supports keep explicit multipliers.  Both encodings are built here and
cross-checked in the tests.
"""

from dataclasses import dataclass, field

import numpy as np

from . import disturbance, linalg, polytope, qp
from .model import LinearSystem
from .polytope import HPolytope


class SynthesisError(RuntimeError):
    """Configuration admits no controller (empty terminal set, bad costs...)."""


@dataclass
class DAConfig:
    system: LinearSystem
    horizon: int
    Q: np.ndarray
    R: np.ndarray
    Z: HPolytope            # joint (x, u) constraint set
    W: disturbance.DisturbanceModel

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        self.Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        self.R = np.asarray(self.R, dtype=float).reshape(m, m)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.Z.dim != n + m:
            raise ValueError("Z must live in the joint (x, u) space")
        if self.W.dim != self.system.n_w:
            raise ValueError("disturbance dimension mismatch")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise SynthesisError("cost_not_pd: R must be positive definite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise SynthesisError("cost_not_psd: Q must be positive semidefinite")
        if not linalg.detectable(self.system.A, linalg.sqrtm_psd(self.Q)):
            raise SynthesisError("cost_not_detectable: (A, Q^(1/2)) undetectable")


@dataclass
class DASolution:
    u: np.ndarray
    feasible: bool
    objective: float
    v0: np.ndarray
    status: str
    z: np.ndarray = field(default=None, repr=False)


@dataclass
class DAController:
    """Frozen synthesis product; immutable after construction."""

    config: DAConfig
    riccati: linalg.RiccatiSolution
    Xf: HPolytope
    layout: dict
    # Template data, parameterized by the measured state x:
    #   gradient = grad0 + grad_x @ x, rhs = rhs0 - rhs_x @ x,
    #   constant = x' const_xx x + const0.
    hessian: np.ndarray = field(repr=False, default=None)
    grad0: np.ndarray = field(repr=False, default=None)
    grad_x: np.ndarray = field(repr=False, default=None)
    ineq_G: np.ndarray = field(repr=False, default=None)
    rhs0: np.ndarray = field(repr=False, default=None)
    rhs_x: np.ndarray = field(repr=False, default=None)
    eq_A: np.ndarray = field(repr=False, default=None)
    eq_b: np.ndarray = field(repr=False, default=None)
    const_xx: np.ndarray = field(repr=False, default=None)
    const0: float = 0.0
    pred: dict = field(repr=False, default=None)

    @property
    def K(self):
        return self.riccati.K

    @property
    def P(self):
        return self.riccati.P

    def terminal_objective(self, x):
        """Exact optimal cost on the terminal set: x'Px plus the noise floor."""
        x = np.asarray(x, dtype=float).ravel()
        return float(x @ self.P @ x) + self.layout["noise_floor"]

    def control(self, x):
        """Closed-loop law u(x); None where the template is infeasible."""
        sol = solve_da(self, x)
        return sol.u if sol.feasible else None

    def to_json(self):
        robust = self.layout.get("robust_rows")
        offsets = self.rhs0[robust] if robust is not None else self.rhs0
        return {
            "P": self.P.tolist(),
            "K": self.K.tolist(),
            "Xf": self.Xf.to_json(),
            "tightened_offsets": np.asarray(offsets).tolist(),
            "layout": {k: v for k, v in self.layout.items()
                       if k != "robust_rows"},
            "system": self.config.system.to_json(),
        }


def synthesize_da(cfg, encoding="auto"):
    """Build the disturbance-affine controller for one configuration.

    ``encoding`` picks the robustification layer: "box-dual" (closed-form
    multipliers, symmetric axis-box supports only), "lp-dual" (explicit
    multipliers, any polytopic support), or "auto".
    """
    sysm = cfg.system
    n = sysm.n

    riccati = linalg.solve_dare(sysm.A, sysm.B, cfg.Q, cfg.R)
    K = riccati.K
    Acl = sysm.A + sysm.B @ K
    if not linalg.controllable(Acl, sysm.D):
        raise SynthesisError("terminal pair (A+BK, D) is not controllable")

    Xf = _terminal_set(sysm, K, cfg.Z, cfg.W.support)
    if Xf.is_empty():
        raise SynthesisError("empty terminal set: disturbance too large for "
                             "the constraints")

    tpl = _build_template(cfg, riccati, Xf, encoding)
    ctrl = DAController(config=cfg, riccati=riccati, Xf=Xf, **tpl)

    probe = solve_da(ctrl, np.zeros(n), terminal_shortcut=False)
    if not probe.feasible:
        raise SynthesisError("template infeasible at the origin: inconsistent "
                             "configuration")
    return ctrl


def _terminal_set(sysm, K, Z, W_poly):
    """Maximal robust invariant subset of {x : (x, Kx) in Z} under u = Kx."""
    n = sysm.n
    Hx = Z.H[:, :n]
    Hu = Z.H[:, n:]
    rows = Hx + Hu @ K
    keep = np.max(np.abs(rows), axis=1) > 1e-14
    if np.any(~keep & (Z.h < 0)):
        raise SynthesisError("constraint set excludes the origin under u = Kx")
    Xc = HPolytope(rows[keep], Z.h[keep])
    return polytope.max_rpi(sysm.A + sysm.B @ K, sysm.D, W_poly, Xc)


def _prediction_matrices(sysm, N):
    """Stacked maps for x_0..x_N: X = T x + S_u U + S_w Wvec."""
    n, m, n_w = sysm.n, sysm.m, sysm.n_w
    T = np.zeros(((N + 1) * n, n))
    S_u = np.zeros(((N + 1) * n, N * m))
    S_w = np.zeros(((N + 1) * n, N * n_w))
    Ak = [np.eye(n)]
    for _ in range(N):
        Ak.append(sysm.A @ Ak[-1])
    for i in range(N + 1):
        T[i * n:(i + 1) * n] = Ak[i]
        for t in range(i):
            S_u[i * n:(i + 1) * n, t * m:(t + 1) * m] = Ak[i - 1 - t] @ sysm.B
            S_w[i * n:(i + 1) * n, t * n_w:(t + 1) * n_w] = Ak[i - 1 - t] @ sysm.D
    return T, S_u, S_w


def _m_entry_index(N, m, n_w):
    """Scalar layout of the strictly lower block-triangular gain matrix."""
    entries = []
    for i in range(1, N):
        for j in range(i):
            for r in range(m):
                for c in range(n_w):
                    entries.append((i, j, r, c))
    return entries


def _assemble_mtilde(entries, coeffs, N, m, n_w):
    Mt = np.zeros((N * m, N * n_w))
    for val, (i, j, r, c) in zip(coeffs, entries):
        Mt[i * m + r, j * n_w + c] = val
    return Mt


def _build_template(cfg, riccati, Xf, encoding="auto"):
    sysm = cfg.system
    n, m, n_w, N = sysm.n, sysm.m, sysm.n_w, cfg.horizon
    T, S_u, S_w = _prediction_matrices(sysm, N)
    Qt = np.kron(np.eye(N + 1), cfg.Q)
    Qt[N * n:, N * n:] = riccati.P
    Rt = np.kron(np.eye(N), cfg.R)
    Sigma_w = disturbance.covariance(cfg.W)
    Sigma_W = np.kron(np.eye(N), Sigma_w)

    entries = _m_entry_index(N, m, n_w)
    n_v = N * m
    n_M = len(entries)

    # Exact expected cost: nominal quadratic in v plus trace terms in M.
    Hhat = S_u.T @ Qt @ S_u + Rt              # shared v/M curvature
    H_vv = 2.0 * Hhat
    H_MM = np.zeros((n_M, n_M))
    for a, (ia, ja, ra, ca) in enumerate(entries):
        rowa, cola = ia * m + ra, ja * n_w + ca
        for b, (ib, jb, rb, cb) in enumerate(entries):
            H_MM[a, b] = 2.0 * Hhat[rowa, ib * m + rb] * Sigma_W[jb * n_w + cb, cola]
    Clin = S_u.T @ Qt @ S_w @ Sigma_W          # from the M-S_w cross term
    g_M = np.array([2.0 * Clin[ia * m + ra, ja * n_w + ca]
                    for (ia, ja, ra, ca) in entries])

    # Constraint rows: (x_i, u_i) in Z for i < N, x_N in Xf, robust in w.
    Hx_z, Hu_z, h_z = cfg.Z.H[:, :n], cfg.Z.H[:, n:], cfg.Z.h
    box = _symmetric_box_halfwidths(cfg.W.support)
    rows = []   # each: dict(normal_v, normal_x, coef_const, coef_lin, rhs, steps)
    for i in range(N + 1):
        blk = slice(i * n, (i + 1) * n)
        if i < N:
            normals_x = Hx_z
            normals_u = Hu_z
            rhs_vec = h_z
        else:
            normals_x = Xf.H
            normals_u = np.zeros((Xf.nrows, m))
            rhs_vec = Xf.h
        for r in range(normals_x.shape[0]):
            fx, fu = normals_x[r], normals_u[r]
            nominal_x = fx @ T[blk]
            nominal_v = fx @ S_u[blk]
            if i < N:
                nominal_v = nominal_v.copy()
                nominal_v[i * m:(i + 1) * m] += fu
            # Disturbance coefficient: fx' (S_u Mt + S_w)_i + fu' Mt_i,
            # affine in the M entries; only blocks t < i are live.
            coef_const = fx @ S_w[blk]
            coef_lin = np.zeros((n_M, N * n_w))
            fxSu = fx @ S_u[blk]
            for a, (ia, ja, ra, ca) in enumerate(entries):
                val = fxSu[ia * m + ra]
                if i < N and ia == i:
                    val += fu[ra]
                if val != 0.0:
                    coef_lin[a, ja * n_w + ca] = val
            rows.append({
                "nominal_x": nominal_x, "nominal_v": nominal_v,
                "coef_const": coef_const, "coef_lin": coef_lin,
                "rhs": rhs_vec[r], "step": i,
            })

    if encoding == "lp-dual" or (encoding == "auto" and box is None):
        built = _encode_dual(rows, cfg.W.support, n_v, n_M, N, n_w)
    elif box is not None:
        built = _encode_box(rows, box, n_v, n_M, N, n_w)
    else:
        raise SynthesisError("box-dual encoding needs a symmetric axis-box "
                             "disturbance support")
    G, rhs0, rhs_x, A_eq, b_eq, n_aux, encoding, robust_rows = built

    dim = n_v + n_M + n_aux
    H = np.zeros((dim, dim))
    H[:n_v, :n_v] = H_vv
    H[n_v:n_v + n_M, n_v:n_v + n_M] = H_MM
    H = 0.5 * (H + H.T)
    grad0 = np.zeros(dim)
    grad0[n_v:n_v + n_M] = g_M
    grad_x = np.zeros((dim, n))
    grad_x[:n_v] = 2.0 * S_u.T @ Qt @ T
    const_xx = T.T @ Qt @ T
    const0 = float(np.trace(S_w.T @ Qt @ S_w @ Sigma_W))

    noise_floor = N * float(np.trace(riccati.P @ sysm.D @ Sigma_w @ sysm.D.T))
    layout = {
        "N": N, "n": n, "m": m, "n_w": n_w, "n_v": n_v, "n_M": n_M,
        "n_aux": n_aux, "encoding": encoding, "noise_floor": noise_floor,
        "n_rows": len(rows), "robust_rows": robust_rows,
    }
    return {
        "layout": layout, "hessian": H, "grad0": grad0, "grad_x": grad_x,
        "ineq_G": G, "rhs0": rhs0, "rhs_x": rhs_x, "eq_A": A_eq, "eq_b": b_eq,
        "const_xx": const_xx, "const0": const0,
        "pred": {"T": T, "S_u": S_u, "S_w": S_w, "entries": entries,
                 "Qt": Qt, "Rt": Rt, "Sigma_W": Sigma_W},
    }


def _symmetric_box_halfwidths(W_poly):
    bounds = getattr(W_poly, "_axis_bounds", None)
    if bounds is None:
        return None
    lb, ub = bounds
    if not np.all(np.isfinite(lb)) or np.max(np.abs(lb + ub)) > 1e-12:
        return None
    return ub


def _encode_box(rows, halfwidths, n_v, n_M, N, n_w):
    """Closed-form dual for symmetric boxes: t >= |coefficient| per scalar.

    One aux variable per live (row, block, coordinate); robust row offsets
    are reduced by halfwidth' t.
    """
    aux_of = []     # (row_index, flat w index) per aux variable
    for ri, row in enumerate(rows):
        live = row["step"] * n_w
        for qf in range(live):
            aux_of.append((ri, qf))
    n_aux = len(aux_of)
    dim = n_v + n_M + n_aux

    G_rows, rhs0_rows, rhsx_rows = [], [], []
    # Magnitude-bound rows: +/- c_q(z) - t_q <= 0.
    for ai, (ri, qf) in enumerate(aux_of):
        row = rows[ri]
        base = np.zeros(dim)
        base[n_v:n_v + n_M] = row["coef_lin"][:, qf]
        const = row["coef_const"][qf]
        for sgn in (1.0, -1.0):
            g = sgn * base
            g[n_v + n_M + ai] = -1.0
            G_rows.append(g)
            rhs0_rows.append(-sgn * const)
            rhsx_rows.append(np.zeros(rows[0]["nominal_x"].shape[0]))
    # Robust constraint rows: nominal + w_bar' t <= rhs.
    wbar_flat = np.tile(halfwidths, N)
    robust_rows = []
    for ri, row in enumerate(rows):
        g = np.zeros(dim)
        g[:n_v] = row["nominal_v"]
        for ai, (rj, qf) in enumerate(aux_of):
            if rj == ri:
                g[n_v + n_M + ai] = wbar_flat[qf]
        robust_rows.append(len(G_rows))
        G_rows.append(g)
        rhs0_rows.append(row["rhs"])
        rhsx_rows.append(row["nominal_x"])
    G = np.asarray(G_rows)
    rhs0 = np.asarray(rhs0_rows)
    rhs_x = np.asarray(rhsx_rows)
    return (np.ascontiguousarray(G), rhs0, rhs_x,
            np.zeros((0, G.shape[1])), np.zeros(0), n_aux, "box-dual",
            robust_rows)


def _encode_dual(rows, W_poly, n_v, n_M, N, n_w):
    """General LP-dual robustification with explicit multipliers.

    Per robust row r with live horizon q_r: multipliers Lambda_r >= 0 over
    the stacked support facets with Lambda_r' S_blk = disturbance
    coefficients (blockwise) and offsets reduced by Lambda_r' s.
    """
    S, s_off = W_poly.H, W_poly.h
    r_S = S.shape[0]
    lam_of = []     # (row index, block) -> slice start in aux
    n_aux = 0
    for ri, row in enumerate(rows):
        lam_of.append(n_aux)
        n_aux += row["step"] * r_S
    dim = n_v + n_M + n_aux

    G_rows, rhs0_rows, rhsx_rows = [], [], []
    eq_rows, eq_b = [], []
    robust_rows = []
    n_x = rows[0]["nominal_x"].shape[0]
    for ri, row in enumerate(rows):
        live = row["step"]
        start = n_v + n_M + lam_of[ri]
        # lambda >= 0
        for k in range(live * r_S):
            g = np.zeros(dim)
            g[start + k] = -1.0
            G_rows.append(g)
            rhs0_rows.append(0.0)
            rhsx_rows.append(np.zeros(n_x))
        # S' lambda_block = coefficient block (as functions of M)
        for t in range(live):
            for c in range(n_w):
                e = np.zeros(dim)
                e[start + t * r_S:start + (t + 1) * r_S] = S[:, c]
                e[n_v:n_v + n_M] = -row["coef_lin"][:, t * n_w + c]
                eq_rows.append(e)
                eq_b.append(row["coef_const"][t * n_w + c])
        # Robust row: nominal + s' lambda <= rhs.
        g = np.zeros(dim)
        g[:n_v] = row["nominal_v"]
        for t in range(live):
            g[start + t * r_S:start + (t + 1) * r_S] = s_off
        robust_rows.append(len(G_rows))
        G_rows.append(g)
        rhs0_rows.append(row["rhs"])
        rhsx_rows.append(row["nominal_x"])
    G = np.asarray(G_rows)
    A = np.asarray(eq_rows) if eq_rows else np.zeros((0, dim))
    return (np.ascontiguousarray(G), np.asarray(rhs0_rows),
            np.asarray(rhsx_rows), np.ascontiguousarray(A),
            np.asarray(eq_b), n_aux, "lp-dual", robust_rows)


def solve_da(ctrl, x, terminal_shortcut=True, tol=1e-8):
    """Receding-horizon control: u = v*_0 from the template QP at x.

    On the terminal set the law coincides with u = Kx (the unconstrained
    optimum is feasible there), so the shortcut returns that exactly;
    disable it to exercise the full QP path.
    """
    x = np.asarray(x, dtype=float).ravel()
    if terminal_shortcut and ctrl.Xf.contains(x, tol=0.0):
        u = ctrl.K @ x
        return DASolution(u=u, feasible=True,
                          objective=ctrl.terminal_objective(x),
                          v0=u.copy(), status=qp.OPTIMAL)
    sol = _solve_template(ctrl, x, tol=tol)
    m = ctrl.config.system.m
    if sol.status != qp.OPTIMAL:
        return DASolution(u=None, feasible=False, objective=np.inf,
                          v0=None, status=sol.status)
    v0 = sol.x[:m]
    objective = sol.objective + float(x @ ctrl.const_xx @ x) + ctrl.const0
    return DASolution(u=v0.copy(), feasible=True, objective=objective,
                      v0=v0, status=sol.status, z=sol.x)


def _solve_template(ctrl, x, extra_gradient=None, tol=1e-8):
    g = ctrl.grad0 + ctrl.grad_x @ x
    if extra_gradient is not None:
        g = g + extra_gradient
    h = ctrl.rhs0 - ctrl.rhs_x @ x
    return qp._solve(ctrl.hessian, g, ctrl.ineq_G, h, ctrl.eq_A, ctrl.eq_b,
                     tol=tol)


def template_objective(ctrl, x, z):
    """Exact expected cost of the decision vector z at state x."""
    x = np.asarray(x, dtype=float).ravel()
    g = ctrl.grad0 + ctrl.grad_x @ x
    return float(0.5 * z @ ctrl.hessian @ z + g @ z
                 + x @ ctrl.const_xx @ x + ctrl.const0)


def domain_bounding_box(ctrl):
    """Axis bounds of the feasibility domain X = {x : template feasible}.

    One LP per signed coordinate over the joint (x, z) polytope.
    """
    n = ctrl.config.system.n
    dim = ctrl.hessian.shape[0]
    G_joint = np.hstack([ctrl.rhs_x, ctrl.ineq_G])
    A_joint = (np.hstack([np.zeros((ctrl.eq_A.shape[0], n)), ctrl.eq_A])
               if ctrl.eq_A.size else np.zeros((0, n + dim)))
    lo, hi = np.empty(n), np.empty(n)
    for j in range(n):
        for sgn, target in ((1.0, hi), (-1.0, lo)):
            g = np.zeros(n + dim)
            g[j] = -sgn
            sol = qp._solve(np.zeros((n + dim, n + dim)), g,
                            np.ascontiguousarray(G_joint), ctrl.rhs0,
                            A_joint, ctrl.eq_b)
            if sol.status != qp.OPTIMAL:
                raise RuntimeError(f"domain probe failed: {sol.status}")
            target[j] = sgn * (-sol.objective)
    return lo, hi


def rollout(ctrl, x, z, w_seq):
    """Realized states/inputs for decision z under one disturbance sequence."""
    sysm = ctrl.config.system
    N, m, n_w = ctrl.layout["N"], sysm.m, sysm.n_w
    entries = ctrl.pred["entries"]
    v = z[:ctrl.layout["n_v"]]
    Mt = _assemble_mtilde(entries, z[ctrl.layout["n_v"]:ctrl.layout["n_v"] + ctrl.layout["n_M"]],
                          N, m, n_w)
    w_flat = np.asarray(w_seq, dtype=float).reshape(N * n_w)
    u_flat = v + Mt @ w_flat
    xs = [np.asarray(x, dtype=float).ravel()]
    for i in range(N):
        u_i = u_flat[i * m:(i + 1) * m]
        w_i = w_flat[i * n_w:(i + 1) * n_w]
        xs.append(sysm.A @ xs[-1] + sysm.B @ u_i + sysm.D @ w_i)
    return np.asarray(xs), u_flat.reshape(N, m)


def realized_cost(ctrl, xs, us):
    """Finite-horizon cost of one realization (terminal weight included)."""
    Q, R, P = ctrl.config.Q, ctrl.config.R, ctrl.P
    val = float(xs[-1] @ P @ xs[-1])
    for i in range(us.shape[0]):
        val += float(xs[i] @ Q @ xs[i] + us[i] @ R @ us[i])
    return val
