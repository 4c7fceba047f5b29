"""CLI tests: schema gating, exit codes, artifact determinism."""

import json

import numpy as np

from smpckit import cli
from smpckit.polytope import HPolytope, TruncatedReachSet


def da_config(**overrides):
    cfg = {
        "system": {"A": [[1.0, 1.0], [0.0, 1.0]], "B": [[0.5], [1.0]],
                   "D": [[1.0, 0.0], [0.0, 1.0]]},
        "controller": {"kind": "da", "horizon": 3,
                       "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]],
                       "Z": HPolytope.box([-2.5, -2.5, -1.0],
                                          [2.5, 2.5, 1.0]).to_json()},
        "disturbance": {"kind": "uniform-on-box",
                        "params": {"lo": [-0.1, -0.1], "hi": [0.1, 0.1]},
                        "seed": 77},
        "verification": {"grid_points": 7, "mc_n": 200, "iss_samples": 60},
        "simulation": {"x0": [1.5, 0.3], "T": 10, "n_traj": 1,
                       "master_seed": 4242},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def test_synth_writes_artifacts(tmp_path):
    path = write_config(tmp_path, da_config())
    out = tmp_path / "out"
    assert cli.main(["synth", "--config", path, "--out", str(out)]) == 0
    ctrl_obj = json.loads((out / "controller.json").read_text())
    assert {"P", "K", "Xf", "tightened_offsets"} <= set(ctrl_obj)
    xf = HPolytope.from_json(json.loads((out / "xf.json").read_text()))
    assert xf.contains([0.0, 0.0])
    xinf = TruncatedReachSet.from_json(json.loads((out / "xinf.json").read_text()))
    assert xinf.member([0.0, 0.0])
    ricc = json.loads((out / "riccati.json").read_text())
    assert ricc["residual"] <= 1e-10 * 2
    assert ctrl_obj["config_hash"] == ricc["config_hash"]


def test_synth_rejects_non_pd_cost(tmp_path, capsys):
    cfg = da_config()
    cfg["controller"]["R"] = [[0.0]]
    path = write_config(tmp_path, cfg)
    assert cli.main(["synth", "--config", path, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert err["error"] == "cost_not_pd"


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = da_config()
    cfg["extra_section"] = {}
    path = write_config(tmp_path, cfg)
    assert cli.main(["synth", "--config", path, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert err["error"] == "schema"


def test_nested_unknown_key_rejected(tmp_path, capsys):
    cfg = da_config()
    cfg["simulation"]["typo_field"] = 1
    path = write_config(tmp_path, cfg)
    assert cli.main(["synth", "--config", path, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert err["error"] == "schema"


def test_verify_passes_on_da_instance(tmp_path):
    path = write_config(tmp_path, da_config())
    out = tmp_path / "v"
    assert cli.main(["verify", "--config", path, "--out", str(out)]) == 0
    for name in ("drift", "smallset", "iss"):
        obj = json.loads((out / f"{name}.json").read_text())
        assert obj["pass"], name


def test_verify_fails_on_unstable_uncontrolled_loop(tmp_path):
    cfg = da_config()
    cfg["controller"] = {"kind": "linear", "K": "zero"}
    cfg["system"]["A"] = [[2.0, 0.0], [0.0, 0.5]]
    cfg["verification"] = {"grid_points": 7, "mc_n": 100, "iss_samples": 20}
    path = write_config(tmp_path, cfg)
    out = tmp_path / "vu"
    assert cli.main(["verify", "--config", path, "--out", str(out)]) == 3
    drift = json.loads((out / "drift.json").read_text())
    assert not drift["pass"]


def test_verify_fails_on_degenerate_disturbance_image(tmp_path):
    cfg = da_config()
    cfg["system"]["D"] = [[0.0, 0.0], [0.0, 0.0]]
    cfg["controller"] = {"kind": "linear", "K": "riccati",
                         "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]]}
    cfg["verification"] = {"grid_points": 5, "mc_n": 100, "iss_samples": 20}
    path = write_config(tmp_path, cfg)
    out = tmp_path / "vd"
    assert cli.main(["verify", "--config", path, "--out", str(out)]) == 3
    ss = json.loads((out / "smallset.json").read_text())
    assert not ss["pass"]


def test_simulate_row_count_and_determinism(tmp_path):
    path = write_config(tmp_path, da_config())
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["simulate", "--config", path, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", path, "--out", str(out2)]) == 0
    csv1 = (out1 / "ensemble.csv").read_bytes()
    assert csv1 == (out2 / "ensemble.csv").read_bytes()
    lines = csv1.decode().strip().splitlines()
    assert len(lines) == 2 + 10  # meta comment, header, T=10 rows
    s1 = json.loads((out1 / "summary.json").read_text())
    s2 = json.loads((out2 / "summary.json").read_text())
    assert s1 == s2
    assert s1["feasible_throughout"]
    assert len(s1["membership_curve"]) == 11
    assert s1["master_seed"] == 4242


def test_seed_override_changes_outputs(tmp_path):
    path = write_config(tmp_path, da_config())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", path, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", path, "--out", str(out2),
                     "--seed-override", "999"]) == 0
    assert (out1 / "ensemble.csv").read_bytes() != (out2 / "ensemble.csv").read_bytes()
    s2 = json.loads((out2 / "summary.json").read_text())
    assert s2["master_seed"] == 999


def test_simulate_infeasible_start_exit_code(tmp_path):
    cfg = da_config()
    cfg["simulation"]["x0"] = [50.0, 0.0]
    path = write_config(tmp_path, cfg)
    assert cli.main(["simulate", "--config", path,
                     "--out", str(tmp_path / "bad")]) == 4


def test_report_aggregates(tmp_path):
    cfg = da_config()
    # Long enough for the time average to settle near the stationary cost.
    cfg["simulation"].update({"T": 3000, "n_traj": 2, "lln_threshold": 0.5})
    path = write_config(tmp_path, cfg)
    out = tmp_path / "full"
    assert cli.main(["verify", "--config", path, "--out", str(out)]) == 0
    assert cli.main(["simulate", "--config", path, "--out", str(out)]) == 0
    assert cli.main(["report", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["pass"]
    assert set(rep["components"]) == {"drift", "smallset", "iss", "summary"}


def striped_config():
    cfg = da_config()
    cfg["controller"] = {
        "kind": "striped", "horizon": 4,
        "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]],
        "constraints": [
            {"f": [0.5556, 0.0], "g": [0.0], "p": 0.9},
            {"f": [-0.5556, 0.0], "g": [0.0], "p": 0.9},
            {"f": [0.0, 0.0], "g": [0.5556], "p": 0.9},
            {"f": [0.0, 0.0], "g": [-0.5556], "p": 0.9},
        ],
        "domain_box": HPolytope.box([-6.0, -6.0], [6.0, 6.0]).to_json(),
    }
    cfg["simulation"]["x0"] = [1.5, 0.3]
    return cfg


def test_striped_synth_and_simulate(tmp_path):
    path = write_config(tmp_path, striped_config())
    out = tmp_path / "st"
    assert cli.main(["synth", "--config", path, "--out", str(out)]) == 0
    ctrl_obj = json.loads((out / "controller.json").read_text())
    assert {"K", "L", "Px", "Pc", "tightenings", "N", "N2"} <= set(ctrl_obj)
    lyap = json.loads((out / "lyapunov.json").read_text())
    assert lyap["residual"] <= 1e-8
    assert (out / "xinf.json").exists()
    assert cli.main(["simulate", "--config", path, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["feasible_throughout"]


def test_linear_kind_riccati_gain(tmp_path):
    cfg = da_config()
    cfg["controller"] = {"kind": "linear", "K": "riccati",
                         "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]]}
    cfg["simulation"]["x0"] = [0.5, 0.1]
    path = write_config(tmp_path, cfg)
    out = tmp_path / "lin"
    assert cli.main(["synth", "--config", path, "--out", str(out)]) == 0
    ctrl_obj = json.loads((out / "controller.json").read_text())
    K = np.asarray(ctrl_obj["K"])
    np.testing.assert_allclose(
        K.ravel(), [-0.43448324327595506, -1.0284659329503831], atol=1e-9)
    assert cli.main(["simulate", "--config", path, "--out", str(out)]) == 0


def test_threads_flag_deterministic(tmp_path):
    cfg = da_config()
    cfg["simulation"]["n_traj"] = 4
    path = write_config(tmp_path, cfg)
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    assert cli.main(["simulate", "--config", path, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", path, "--out", str(out2),
                     "--threads", "3"]) == 0
    assert (out1 / "ensemble.csv").read_bytes() == (out2 / "ensemble.csv").read_bytes()
