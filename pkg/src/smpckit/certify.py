"""Empirical certificates for the closed-loop Markov chain.

certify_drift checks the geometric drift inequality
E{V(x+)} - V(x) <= -1 + b 1_C(x) (after scaling V) on a state grid at
3-sigma confidence; certify_small_set constructs the region C and the
minorizing disturbance-image set Omega that rule out periodic behaviour;
check_iss_decrease verifies the nominal Lyapunov decrease; and
detect_terminal_entry finds the first time a recorded trajectory commits to
the terminal feedback law.

Drift is certified statistically on a grid, not symbolically: the
comparison-function machinery behind the construction is an existence
device, so the certificate estimates the drift directly and records seeds,
margins and witnesses sufficient for exact replay.
"""

from dataclasses import dataclass, field

import numpy as np

from . import disturbance, polytope, qp
from .polytope import HPolytope

DEFAULT_GRID_POINTS = 31
DEFAULT_MC_N = 2000
ENTRY_TOL = 1e-6
NU_MASS_SAMPLES = 10**6


class NoCertificateError(RuntimeError):
    """No finite (C, b) covers the observed drift violations."""


@dataclass
class GridSpec:
    lo: np.ndarray
    hi: np.ndarray
    points_per_axis: int = DEFAULT_GRID_POINTS

    def states(self):
        axes = [np.linspace(l, h, self.points_per_axis)
                for l, h in zip(np.atleast_1d(self.lo), np.atleast_1d(self.hi))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class QuadraticValue:
    """V(x) = x'Px with a vectorized batch path."""

    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return float(x @ self.P @ x)

    def batch(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("ij,jk,ik->i", X, self.P, X)


def closed_loop_fn(system, controller):
    """Vectorized one-step map of the closed loop x+ = Ax + B u(x) + Dw.

    Returns None at states where the control law is undefined (outside the
    feasibility domain), which excludes them from the chain's state space.
    """
    def step(x, w_batch):
        u = controller.control(x)
        if u is None:
            return None
        base = system.A @ np.asarray(x, dtype=float) + system.B @ u
        return base[None, :] + np.asarray(w_batch) @ system.D.T
    return step


@dataclass
class DriftCertificate:
    C: HPolytope
    b: float
    scale: float
    grid: np.ndarray
    worst_violation: float
    mc_samples_per_state: int
    d_hat: float
    d_prime: float
    sublevel: float
    seed: int
    drift: np.ndarray = field(repr=False, default=None)
    stderr: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {
            "C": self.C.to_json(), "b": self.b, "scale": self.scale,
            "d_hat": self.d_hat, "d_prime": self.d_prime,
            "sublevel": self.sublevel, "worst_violation": self.worst_violation,
            "mc_samples_per_state": self.mc_samples_per_state,
            "seed": self.seed, "grid": self.grid.tolist(),
            "drift": self.drift.tolist(), "stderr": self.stderr.tolist(),
        }


def certify_drift(closed_loop, V, W, grid_spec, mc_n=DEFAULT_MC_N, seed=0):
    """Geometric drift certificate on a grid, at 3-sigma confidence.

    Estimates the drift at every grid state inside the feasibility domain,
    sets d_hat to the worst positive estimate, and searches the divisor
    d' - d_hat over a doubling schedule: states whose decrease is too weak
    must be swallowed by the sublevel set C of V, and the certificate is
    valid as soon as some grid state remains outside C with every outside
    state passing at 3 standard errors.
    """
    states = grid_spec.states()
    kept, drift, stderr, values = [], [], [], []
    for idx, x in enumerate(states):
        draws = disturbance.sample_batch(W, disturbance.make_stream(seed, idx), mc_n)
        succ = closed_loop(x, draws)
        if succ is None:
            continue
        vals = V.batch(succ)
        kept.append(x)
        values.append(V(x))
        drift.append(float(vals.mean()) - values[-1])
        stderr.append(float(vals.std(ddof=1)) / np.sqrt(mc_n))
    if not kept:
        raise NoCertificateError("no grid state lies in the feasibility domain")
    kept = np.asarray(kept)
    drift = np.asarray(drift)
    stderr = np.asarray(stderr)
    values = np.asarray(values)

    d_hat = max(0.0, float(np.max(drift)))
    base = max(d_hat, float(np.median(3.0 * stderr)), 1e-12)
    for k in range(40):
        scale = base * (2.0 ** k)
        d_prime = d_hat + scale
        weak = drift > -scale + 3.0 * stderr
        if not np.any(weak):
            sublevel = float(np.min(values))
        else:
            sublevel = float(np.max(values[weak]))
        outside = values > sublevel
        if not np.any(outside):
            continue
        # All outside states already pass by construction of the sublevel.
        worst = float(np.max(drift[outside] + scale - 3.0 * stderr[outside]))
        C = _sublevel_box(kept, values, sublevel, grid_spec)
        b = 1.0 + d_hat / scale
        return DriftCertificate(C=C, b=b, scale=scale, grid=kept,
                                worst_violation=worst,
                                mc_samples_per_state=mc_n, d_hat=d_hat,
                                d_prime=d_prime, sublevel=sublevel, seed=seed,
                                drift=drift, stderr=stderr)
    raise NoCertificateError("positive drift outside every candidate C; the "
                             "loop is not geometrically stable or the grid "
                             "is undersized")


def _sublevel_box(states, values, sublevel, grid_spec):
    """Axis box covering the grid portion of {V <= sublevel}.

    A box containing the sublevel set is itself a valid (larger) small-set
    candidate; one grid spacing of inflation covers off-grid points.
    """
    inside = values <= sublevel
    if not np.any(inside):
        inside = values <= float(np.min(values))
    pts = states[inside]
    spacing = (np.atleast_1d(grid_spec.hi) - np.atleast_1d(grid_spec.lo)) \
        / max(grid_spec.points_per_axis - 1, 1)
    lo = pts.min(axis=0) - spacing
    hi = pts.max(axis=0) + spacing
    return HPolytope.box(lo, hi)


def revalidate_drift(cert, closed_loop, V, W, n_states=100, seed=1):
    """Re-test the certified inequality at fresh off-grid states."""
    rng = disturbance.make_stream(seed, 0xF2E5)
    lo = cert.grid.min(axis=0)
    hi = cert.grid.max(axis=0)
    checked = 0
    worst = -np.inf
    attempts = 0
    while checked < n_states and attempts < 50 * n_states:
        attempts += 1
        x = rng.uniform(lo, hi)
        draws = disturbance.sample_batch(
            W, disturbance.make_stream(seed, 0xBEEF + attempts), cert.mc_samples_per_state)
        succ = closed_loop(x, draws)
        if succ is None:
            continue
        vals = V.batch(succ)
        delta = float(vals.mean()) - V(x)
        se = float(vals.std(ddof=1)) / np.sqrt(cert.mc_samples_per_state)
        bound = (cert.b - 1.0) * cert.scale if cert.C.contains(x) else -cert.scale
        worst = max(worst, delta - bound - 3.0 * se)
        checked += 1
    return {"checked": checked, "worst_margin": worst, "passed": worst <= 0.0}


@dataclass
class SmallSetCertificate:
    r: float
    C: HPolytope
    Omega: HPolytope
    nu_mass: float
    witness: np.ndarray
    seed: int

    def to_json(self):
        return {"r": self.r, "C": self.C.to_json(), "Omega": self.Omega.to_json(),
                "nu_mass": self.nu_mass, "witness": self.witness.tolist(),
                "seed": self.seed}


def certify_small_set(Acl, D, W, g_is_linear_near_origin=True, r_init=1.0,
                      seed=0):
    """Minorization region for the terminal loop: a ball C = {||x|| <= r}
    (inscribed as a box) small enough that Omega, the common part of the
    disturbance image shifted by every point of Acl C, is nonempty with
    positive sampled disturbance mass.

    W is the disturbance model; its support must have full dimension
    through D (D square nonsingular), otherwise the image has empty
    interior and no radius works.
    """
    if not g_is_linear_near_origin:
        raise NotImplementedError("only loops that are linear near the origin "
                                  "are supported")
    Acl = np.asarray(Acl, dtype=float)
    n = Acl.shape[0]
    DW = polytope.linear_image_invertible(D, W.support)
    draws = disturbance.sample_batch(W, disturbance.make_stream(seed, 0x5E7),
                                     NU_MASS_SAMPLES)
    images = draws @ np.asarray(D, dtype=float).reshape(n, -1).T

    r = float(r_init)
    while r >= 1e-12:
        C = HPolytope.box(-np.full(n, r / np.sqrt(n)), np.full(n, r / np.sqrt(n)))
        sigma = np.array([polytope.support(C, Acl.T @ DW.H[i])
                          for i in range(DW.nrows)])
        Omega = HPolytope(DW.H.copy(), DW.h - sigma)
        feas = qp.solve_lp_feasibility(Omega.H, Omega.h)
        if feas.feasible:
            mass = float(np.mean(Omega.contains_all(images)))
            if mass > 0.0:
                return SmallSetCertificate(r=r, C=C, Omega=Omega, nu_mass=mass,
                                           witness=np.asarray(feas.witness),
                                           seed=seed)
        r *= 0.5
    raise ValueError("radius underflow: the disturbance image has empty "
                     "interior")


@dataclass
class ISSReport:
    worst_margin: float
    passed: bool
    checked: int
    skipped: int


def check_iss_decrease(V, closed_loop_nominal, alpha3_coeff, sample_states,
                       tol=1e-7):
    """Report max over samples of V(f(x,0)) - V(x) + alpha3 ||x||^2."""
    worst = -np.inf
    checked = skipped = 0
    for x in np.atleast_2d(np.asarray(sample_states, dtype=float)):
        vx = V(x)
        if not np.isfinite(vx):
            skipped += 1
            continue
        x_next = closed_loop_nominal(x)
        if x_next is None:
            skipped += 1
            continue
        vn = V(x_next)
        if not np.isfinite(vn):
            skipped += 1
            continue
        worst = max(worst, vn - vx + alpha3_coeff * float(x @ x))
        checked += 1
    return ISSReport(worst_margin=worst, passed=bool(worst <= tol),
                     checked=checked, skipped=skipped)


def detect_terminal_entry(traj, K, tol=ENTRY_TOL):
    """Smallest k with ||u_j - K x_j|| <= tol for every j >= k; None if none."""
    K = np.asarray(K, dtype=float)
    states = np.asarray(traj.states, dtype=float)
    inputs = np.asarray(traj.inputs, dtype=float)
    if inputs.shape[0] == 0:
        return 0
    resid = np.linalg.norm(inputs - states[:-1] @ K.T, axis=1)
    bad = np.flatnonzero(resid > tol)
    if bad.size == 0:
        return 0
    entry = int(bad[-1]) + 1
    return entry if entry < inputs.shape[0] else None
