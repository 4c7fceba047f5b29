"""Seeded closed-loop Monte Carlo: trajectories, ensembles, LLN reports.

Each trajectory owns one counter-based stream identified by (master seed,
trajectory index), so ensembles are reproducible number-for-number
regardless of scheduling; aggregation is an ordered reduction over the
trajectory index.  Infeasible mid-trajectory solves truncate the record
(flagged) rather than aborting, so ensembles remain analyzable; on the two
controllers built here that path never triggers, and the acceptance suite
fails if it does.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import certify, disturbance


@dataclass
class Trajectory:
    states: np.ndarray        # (T+1, n); one more row than inputs
    inputs: np.ndarray        # (T, m)
    disturbances: np.ndarray  # (T, n_w)
    stage_costs: np.ndarray   # (T,), x'Qx + u'Ru
    feasible_throughout: bool
    entry_index: int = None
    seed_path: tuple = ()

    @property
    def steps(self):
        return self.inputs.shape[0]

    def time_average_costs(self):
        """Running averages (1/k) sum_{j<k} stage_j for k = 1..T."""
        return np.cumsum(self.stage_costs) / np.arange(1, self.steps + 1)


def transition_residual(traj, system):
    """Worst recorded defect against x+ = Ax + Bu + Dw."""
    X, U, W = traj.states, traj.inputs, traj.disturbances
    pred = X[:-1] @ system.A.T + U @ system.B.T + W @ system.D.T
    if traj.steps == 0:
        return 0.0
    return float(np.max(np.linalg.norm(X[1:] - pred, axis=1)))


def run_trajectory(system, ctrl, W, Q, R, x0, T, stream, detect_entry=True):
    """Simulate T closed-loop steps from x0 with one disturbance stream.

    On an infeasible solve the record is truncated with
    feasible_throughout=False; the caller decides whether that is fatal.
    """
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    x0 = np.asarray(x0, dtype=float).ravel()
    draws = disturbance.sample_batch(W, stream, T)
    n, m = system.n, system.m
    states = np.empty((T + 1, n))
    inputs = np.empty((T, m))
    costs = np.empty(T)
    states[0] = x0
    A, B, D = system.A, system.B, system.D
    feasible = True
    k = 0
    x = x0
    for k in range(T):
        u = ctrl.control(x)
        if u is None:
            feasible = False
            break
        inputs[k] = u
        costs[k] = x @ Q @ x + u @ R @ u
        x = A @ x + B @ u + D @ draws[k]
        states[k + 1] = x
    steps = k + 1 if feasible else k
    traj = Trajectory(states=states[:steps + 1], inputs=inputs[:steps],
                      disturbances=draws[:steps], stage_costs=costs[:steps],
                      feasible_throughout=feasible)
    if detect_entry and hasattr(ctrl, "K") and traj.steps:
        traj.entry_index = certify.detect_terminal_entry(traj, ctrl.K)
    return traj


@dataclass
class Ensemble:
    trajectories: list
    membership_curve: np.ndarray   # None when no reach set was supplied
    time_avg_finals: np.ndarray
    l_ss_ref: float
    master_seed: int
    n_traj: int
    T: int

    @property
    def all_feasible(self):
        return all(t.feasible_throughout for t in self.trajectories)

    def summary(self, extra=None):
        entry = [t.entry_index for t in self.trajectories]
        out = {
            "master_seed": self.master_seed,
            "n_traj": self.n_traj,
            "T": self.T,
            "l_ss_ref": self.l_ss_ref,
            "feasible_throughout": self.all_feasible,
            "membership_curve": (None if self.membership_curve is None
                                 else self.membership_curve.tolist()),
            "time_avg_finals": self.time_avg_finals.tolist(),
            "entry_indices": entry,
        }
        if extra:
            out.update(extra)
        return out


def run_ensemble(system, ctrl, W, Q, R, x0, T, n_traj, master_seed,
                 Xinf=None, l_ss_ref=0.0, threads=1):
    """n_traj independent trajectories on substreams (master_seed, index).

    membership_curve[k] is the fraction of trajectories whose state lies in
    the supplied truncated reach set at step k (one feasibility LP per
    test); omitted when Xinf is None.
    """
    def one(j):
        return run_trajectory(system, ctrl, W, Q, R, x0, T,
                              disturbance.make_stream(master_seed, j))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajectories = list(pool.map(one, range(n_traj)))
    else:
        trajectories = [one(j) for j in range(n_traj)]
    for j, t in enumerate(trajectories):
        t.seed_path = (master_seed, j)

    curve = None
    if Xinf is not None:
        counts = np.zeros(T + 1)
        denom = np.zeros(T + 1)
        for t in trajectories:
            for k in range(t.states.shape[0]):
                denom[k] += 1
                counts[k] += float(Xinf.member(t.states[k]))
        curve = counts / np.maximum(denom, 1)

    finals = np.array([t.time_average_costs()[-1] if t.steps else np.nan
                       for t in trajectories])
    return Ensemble(trajectories=trajectories, membership_curve=curve,
                    time_avg_finals=finals, l_ss_ref=l_ss_ref,
                    master_seed=master_seed, n_traj=n_traj, T=T)


@dataclass
class LLNReport:
    deviations: np.ndarray
    median_deviation: float
    threshold: float
    passed: bool
    relative: bool


def lln_report(ens, l_ss, threshold=0.05):
    """Per-trajectory |time-average - l_ss| / l_ss and the ensemble median.

    With zero stationary cost (no disturbance) the comparison falls back to
    absolute deviations; a nonpositive l_ss with noisy trajectories signals
    a broken reference computation and is rejected.
    """
    if not ens.trajectories:
        raise ValueError("empty ensemble")
    finals = ens.time_avg_finals
    noisy = any(t.steps and np.max(np.abs(t.disturbances)) > 1e-10
                for t in ens.trajectories)
    if l_ss <= 0.0 and noisy:
        raise ValueError("nonpositive stationary cost reference with nonzero "
                         "noise")
    if l_ss > 0.0:
        dev = np.abs(finals - l_ss) / l_ss
        relative = True
    else:
        dev = np.abs(finals)
        relative = False
    med = float(np.median(dev))
    return LLNReport(deviations=dev, median_deviation=med, threshold=threshold,
                     passed=bool(med <= threshold), relative=relative)


def export_csv(ens, path, Xinf=None, header_meta=""):
    """One row per executed step: traj, k, x..., u..., w..., stage, in_Xinf.

    Full-precision decimal floats (17 significant digits) so downstream
    diffs are exact.
    """
    def fmt(v):
        return f"{v:.17g}"

    with open(path, "w", newline="") as fh:
        if header_meta:
            fh.write(f"# {header_meta}\n")
        writer = csv.writer(fh)
        t0 = ens.trajectories[0]
        n = t0.states.shape[1]
        m = t0.inputs.shape[1] if t0.steps else 1
        n_w = t0.disturbances.shape[1] if t0.steps else 1
        writer.writerow(["traj", "k"] + [f"x{i}" for i in range(n)]
                        + [f"u{i}" for i in range(m)]
                        + [f"w{i}" for i in range(n_w)]
                        + ["stage_cost", "in_xinf"])
        for j, t in enumerate(ens.trajectories):
            for k in range(t.steps):
                member = ""
                if Xinf is not None:
                    member = int(Xinf.member(t.states[k]))
                writer.writerow(
                    [j, k] + [fmt(v) for v in t.states[k]]
                    + [fmt(v) for v in t.inputs[k]]
                    + [fmt(v) for v in t.disturbances[k]]
                    + [fmt(t.stage_costs[k]), member])


def export_summary(ens, path, extra=None):
    with open(path, "w") as fh:
        json.dump(ens.summary(extra=extra), fh, indent=2, sort_keys=True)
        fh.write("\n")
