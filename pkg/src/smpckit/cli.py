"""Batch front end: synth / verify / simulate / report over JSON configs.

All numerics live in the config file so every run is replayable; each
output embeds the config hash and master seed.  Exit codes are a stable
contract: 0 ok, 2 synthesis failure, 3 verification failure, 4 simulation
failure; schema violations (unknown keys, inconsistent dimensions) are
synthesis failures.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import certify, dafmpc, disturbance, linalg, polytope, simulate, stripedmpc
from .model import LinearFeedback, LinearSystem
from .polytope import HPolytope


class SchemaError(ValueError):
    pass


_TOP_KEYS = {"system", "controller", "disturbance", "verification",
             "simulation", "output_dir"}
_SYSTEM_KEYS = {"A", "B", "D"}
_CTRL_KEYS = {"kind", "horizon", "Q", "R", "Z", "constraints", "domain_box",
              "tail_horizon", "K"}
_DIST_KEYS = {"kind", "params", "seed"}
_VERIFY_KEYS = {"grid_points", "mc_n", "drift_seed", "smallset_seed",
                "smallset_r_init", "iss_samples", "iss_tol", "iss_seed"}
_SIM_KEYS = {"x0", "T", "n_traj", "master_seed", "lln_threshold",
             "xinf_eps_frac", "threads"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"unknown key(s) {sorted(unknown)} in {where}")


def load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    _check_keys(cfg, _TOP_KEYS, "config")
    for key in ("system", "controller", "disturbance", "simulation"):
        if key not in cfg:
            raise SchemaError(f"missing config section {key!r}")
    _check_keys(cfg["system"], _SYSTEM_KEYS, "system")
    _check_keys(cfg["controller"], _CTRL_KEYS, "controller")
    _check_keys(cfg["disturbance"], _DIST_KEYS, "disturbance")
    _check_keys(cfg.get("verification", {}), _VERIFY_KEYS, "verification")
    _check_keys(cfg["simulation"], _SIM_KEYS, "simulation")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def build_system(cfg):
    try:
        return LinearSystem(cfg["system"]["A"], cfg["system"]["B"],
                            cfg["system"]["D"])
    except (ValueError, KeyError) as exc:
        raise SchemaError(f"bad system block: {exc}") from exc


def build_disturbance(cfg):
    block = cfg["disturbance"]
    try:
        return disturbance.from_json({"kind": block["kind"],
                                      "params": block["params"],
                                      "seed": block.get("seed", 0)})
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad disturbance block: {exc}") from exc


def build_controller(cfg):
    sysm = build_system(cfg)
    W = build_disturbance(cfg)
    block = cfg["controller"]
    kind = block.get("kind")
    Q = np.asarray(block.get("Q", np.eye(sysm.n).tolist()), dtype=float)
    R = np.asarray(block.get("R", np.eye(sysm.m).tolist()), dtype=float)
    if kind == "da":
        if "Z" not in block:
            raise SchemaError("da controller needs the Z polytope")
        da_cfg = dafmpc.DAConfig(sysm, int(block.get("horizon", 5)), Q, R,
                                 HPolytope.from_json(block["Z"]), W)
        return sysm, W, Q, R, dafmpc.synthesize_da(da_cfg)
    if kind == "striped":
        if "constraints" not in block or "domain_box" not in block:
            raise SchemaError("striped controller needs constraints and "
                              "domain_box")
        cons = [(c["f"], c["g"], c["p"]) for c in block["constraints"]]
        st_cfg = stripedmpc.StripedConfig(
            sysm, int(block.get("horizon", 5)), Q, R, cons, W,
            HPolytope.from_json(block["domain_box"]),
            tail_horizon=block.get("tail_horizon"))
        return sysm, W, Q, R, stripedmpc.synthesize_striped(st_cfg)
    if kind == "linear":
        K = block.get("K", "riccati")
        if K == "riccati":
            K = linalg.solve_dare(sysm.A, sysm.B, Q, R).K
        elif K == "zero":
            K = np.zeros((sysm.m, sysm.n))
        else:
            K = np.asarray(K, dtype=float).reshape(sysm.m, sysm.n)
        return sysm, W, Q, R, LinearFeedback(K)
    raise SchemaError(f"unknown controller kind {kind!r}")


def _terminal_gain(ctrl, sysm):
    return np.asarray(ctrl.K, dtype=float).reshape(sysm.m, sysm.n)


def _closed_loop_matrix(ctrl, sysm):
    return sysm.A + sysm.B @ _terminal_gain(ctrl, sysm)


def _reach_set(ctrl, sysm, W, eps_frac):
    return polytope.default_reach_set(_closed_loop_matrix(ctrl, sysm), sysm.D,
                                      W.support, eps_frac=eps_frac)


def _grid_box(ctrl, sysm):
    if isinstance(ctrl, dafmpc.DAController):
        return dafmpc.domain_bounding_box(ctrl)
    if isinstance(ctrl, stripedmpc.StripedController):
        return stripedmpc.domain_bounding_box(ctrl)
    lo = -2.0 * np.ones(sysm.n)
    return lo, -lo


def _drift_value(ctrl, sysm, Q, R):
    if isinstance(ctrl, dafmpc.DAController):
        return certify.QuadraticValue(ctrl.P)
    if isinstance(ctrl, stripedmpc.StripedController):
        return certify.QuadraticValue(ctrl.Px)
    Acl = _closed_loop_matrix(ctrl, sysm)
    K = _terminal_gain(ctrl, sysm)
    Qt = Q + K.T @ R @ K
    if linalg.is_schur_stable(Acl):
        return certify.QuadraticValue(linalg.solve_dlyap(Acl, Qt))
    # Unstable loop: any norm-like V lets the certificate fail honestly.
    return certify.QuadraticValue(np.eye(sysm.n))


def _write_json(path, obj, meta):
    out = dict(obj)
    out.update(meta)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(cfg, out_dir, meta):
    sysm, W, Q, R, ctrl = build_controller(cfg)
    riccati = getattr(ctrl, "riccati", None)
    if riccati is not None:
        _write_json(os.path.join(out_dir, "riccati.json"),
                    {"residual": riccati.residual,
                     "iterations": riccati.iterations,
                     "P": riccati.P.tolist(), "K": riccati.K.tolist()}, meta)
    if isinstance(ctrl, dafmpc.DAController):
        _write_json(os.path.join(out_dir, "controller.json"), ctrl.to_json(), meta)
        _write_json(os.path.join(out_dir, "xf.json"), ctrl.Xf.to_json(), meta)
    elif isinstance(ctrl, stripedmpc.StripedController):
        _write_json(os.path.join(out_dir, "controller.json"), ctrl.to_json(), meta)
        _write_json(os.path.join(out_dir, "lyapunov.json"),
                    {"residual": ctrl.lyap_residual}, meta)
    else:
        _write_json(os.path.join(out_dir, "controller.json"),
                    {"kind": "linear",
                     "K": _terminal_gain(ctrl, sysm).tolist()}, meta)
    eps_frac = cfg["simulation"].get("xinf_eps_frac", 0.01)
    xinf = _reach_set(ctrl, sysm, W, eps_frac)
    _write_json(os.path.join(out_dir, "xinf.json"), xinf.to_json(), meta)
    return 0


def cmd_verify(cfg, out_dir, meta):
    sysm, W, Q, R, ctrl = build_controller(cfg)
    vcfg = cfg.get("verification", {})
    grid_points = int(vcfg.get("grid_points", certify.DEFAULT_GRID_POINTS))
    mc_n = int(vcfg.get("mc_n", certify.DEFAULT_MC_N))
    all_pass = True

    lo, hi = _grid_box(ctrl, sysm)
    loop = certify.closed_loop_fn(sysm, ctrl)
    V = _drift_value(ctrl, sysm, Q, R)
    try:
        cert = certify.certify_drift(loop, V, W,
                                     certify.GridSpec(lo, hi, grid_points),
                                     mc_n=mc_n,
                                     seed=int(vcfg.get("drift_seed", 1000)))
        drift_obj = cert.to_json()
        drift_obj["pass"] = bool(cert.worst_violation <= 0.0)
    except certify.NoCertificateError as exc:
        drift_obj = {"pass": False, "error": str(exc)}
    all_pass &= drift_obj["pass"]
    _write_json(os.path.join(out_dir, "drift.json"), drift_obj, meta)

    try:
        ss = certify.certify_small_set(
            _closed_loop_matrix(ctrl, sysm), sysm.D, W,
            r_init=float(vcfg.get("smallset_r_init", 1.0)),
            seed=int(vcfg.get("smallset_seed", 2000)))
        ss_obj = ss.to_json()
        ss_obj["pass"] = bool(ss.nu_mass > 0.0)
    except ValueError as exc:
        ss_obj = {"pass": False, "error": str(exc)}
    all_pass &= ss_obj["pass"]
    _write_json(os.path.join(out_dir, "smallset.json"), ss_obj, meta)

    iss_obj = _run_iss(ctrl, sysm, Q, R, vcfg, lo, hi)
    all_pass &= iss_obj["pass"]
    _write_json(os.path.join(out_dir, "iss.json"), iss_obj, meta)
    return 0 if all_pass else 3


def _run_iss(ctrl, sysm, Q, R, vcfg, lo, hi):
    rng = disturbance.make_stream(int(vcfg.get("iss_seed", 3000)), 0)
    n_samples = int(vcfg.get("iss_samples", 2000))
    tol = float(vcfg.get("iss_tol", 1e-7))
    states = rng.uniform(lo, hi, size=(n_samples, sysm.n))
    if isinstance(ctrl, stripedmpc.StripedController):
        value = ctrl.value
    elif isinstance(ctrl, dafmpc.DAController):
        def value(x):
            sol = dafmpc.solve_da(ctrl, x)
            return sol.objective if sol.feasible else np.inf
    else:
        value = _drift_value(ctrl, sysm, Q, R)

    def nominal(x):
        u = ctrl.control(x)
        if u is None:
            return None
        return sysm.A @ np.asarray(x, dtype=float) + sysm.B @ u

    coeff = 0.5 * float(np.min(np.linalg.eigvalsh(np.asarray(Q, dtype=float))))
    rep = certify.check_iss_decrease(value, nominal, coeff, states, tol=tol)
    return {"pass": bool(rep.passed), "worst_margin": rep.worst_margin,
            "checked": rep.checked, "skipped": rep.skipped, "tol": tol,
            "alpha3_coeff": coeff}


def cmd_simulate(cfg, out_dir, meta, master_seed, threads):
    sysm, W, Q, R, ctrl = build_controller(cfg)
    sim = cfg["simulation"]
    eps_frac = sim.get("xinf_eps_frac", 0.01)
    xinf = _reach_set(ctrl, sysm, W, eps_frac)
    K = _terminal_gain(ctrl, sysm)
    l_ss = linalg.terminal_stage_cost(_closed_loop_matrix(ctrl, sysm), sysm.D,
                                      disturbance.covariance(W), Q, R, K)
    ens = simulate.run_ensemble(sysm, ctrl, W, Q, R,
                                np.asarray(sim["x0"], dtype=float),
                                int(sim["T"]), int(sim["n_traj"]),
                                master_seed, Xinf=xinf, l_ss_ref=l_ss,
                                threads=threads)
    header = f"config_hash={meta['config_hash']} master_seed={master_seed}"
    simulate.export_csv(ens, os.path.join(out_dir, "ensemble.csv"),
                        Xinf=xinf, header_meta=header)
    rep = None
    if l_ss > 0:
        rep = simulate.lln_report(ens, l_ss,
                                  threshold=float(sim.get("lln_threshold", 0.05)))
    extra = dict(meta)
    extra["lln"] = (None if rep is None else {
        "median_deviation": rep.median_deviation,
        "threshold": rep.threshold, "passed": rep.passed,
        "relative": rep.relative,
        "deviations": rep.deviations.tolist()})
    simulate.export_summary(ens, os.path.join(out_dir, "summary.json"),
                            extra=extra)
    return 0 if ens.all_feasible else 4


def cmd_report(out_dir):
    pieces = {}
    for name in ("drift", "smallset", "iss", "summary"):
        path = os.path.join(out_dir, f"{name}.json")
        if os.path.exists(path):
            with open(path) as fh:
                pieces[name] = json.load(fh)
    ok = True
    report = {"components": {}}
    for name, obj in pieces.items():
        if name == "summary":
            good = bool(obj.get("feasible_throughout", False))
            lln = obj.get("lln")
            if lln is not None:
                good &= bool(lln.get("passed", False))
        else:
            good = bool(obj.get("pass", False))
        report["components"][name] = good
        ok &= good
        if "config_hash" in obj:
            report["config_hash"] = obj["config_hash"]
            report["master_seed"] = obj.get("master_seed")
    report["pass"] = ok
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, sort_keys=True))
    return 0 if ok else 3


def main(argv=None):
    parser = argparse.ArgumentParser(prog="smpckit")
    parser.add_argument("command",
                        choices=["synth", "verify", "simulate", "report"])
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed-override", type=int, default=None)
    args = parser.parse_args(argv)

    os.makedirs(args.out, exist_ok=True)
    if args.command == "report":
        return cmd_report(args.out)
    if not args.config:
        print(json.dumps({"error": "schema", "detail": "--config is required"}))
        return 2

    try:
        cfg = load_config(args.config)
        master_seed = int(cfg["simulation"].get("master_seed", 0))
        if args.seed_override is not None:
            master_seed = args.seed_override
        meta = {"config_hash": config_hash(cfg), "master_seed": master_seed}
        if args.command == "synth":
            return cmd_synth(cfg, args.out, meta)
        if args.command == "verify":
            return cmd_verify(cfg, args.out, meta)
        return cmd_simulate(cfg, args.out, meta, master_seed, args.threads)
    except SchemaError as exc:
        _emit_error(args.out, "schema", str(exc))
        return 2
    except (dafmpc.SynthesisError, RuntimeError, ValueError) as exc:
        code = str(exc).split(":")[0].strip() if ":" in str(exc) else "synthesis"
        _emit_error(args.out, code, str(exc))
        return 2


def _emit_error(out_dir, code, detail):
    obj = {"error": code, "detail": detail}
    print(json.dumps(obj, sort_keys=True))
    try:
        with open(os.path.join(out_dir, "error.json"), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
