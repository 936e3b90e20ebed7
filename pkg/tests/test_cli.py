"""Runner behavior: exit codes, artifact layout, and reproducibility."""

import copy
import json
import math
import os

import pytest

from rspde.cli import main

BASE = {
    "domain": {"kind": "ball", "center": [0.0], "radius": 0.25},
    "gamma": {"rule": "normal"},
    "coefficients": {
        "d": 1, "m": 1,
        "b": {"name": "constant", "value": [4.0]},
        "sigma": {"name": "constant", "matrix": [[1.0]]},
    },
    "u0": {"kind": "zero"},
    "grid": {"J": 15, "dt": 1e-3, "T": 0.12},
    "penalty": {"n_event": 64.0,
                "sweep": {"n_start": 8.0, "n_max": 64.0, "tol_cauchy": 0.0}},
    "replicas": {"base_seed": 3, "count": 12},
    "epsilons": [0.5],
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def run(tmp_path, sub, payload=None, extra=(), name="out"):
    cfg = write_config(tmp_path, BASE if payload is None else payload,
                       name=f"cfg_{name}.json")
    out = str(tmp_path / name)
    code = main([sub, "--config", cfg, "--out", out, "--quiet", *extra])
    return code, out


def read_json(out, name):
    with open(os.path.join(out, name)) as fh:
        return json.load(fh)


def read_bytes(out, name):
    with open(os.path.join(out, name), "rb") as fh:
        return fh.read()


def test_validate_domain_unit_ball_normal(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["domain"] = {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0}
    payload["coefficients"]["d"] = 2
    payload["coefficients"]["sigma"] = {"name": "constant",
                                        "matrix": [[1.0], [0.0]]}
    code, out = run(tmp_path, "validate-domain", payload)
    assert code == 0
    rep = read_json(out, "report.json")
    assert rep["rho_hat"] == pytest.approx(1.0, rel=1e-12)
    assert rep["passed"] is True
    assert rep["theta_hat"] == pytest.approx(1.0)
    man = read_json(out, "manifest.json")
    assert man["status"] == "ok" and man["outputs"] == ["report.json"]
    assert man["config_hash"]


def test_unknown_subcommand_exits_2(tmp_path, capsys):
    assert main(["frobnicate", "--config", "x", "--out", "y"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_config_flag_exits_2(tmp_path):
    assert main(["skeleton", "--out", str(tmp_path / "o")]) == 2


def test_malformed_config_exits_1_with_reports(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{broken")
    out = str(tmp_path / "out")
    assert main(["skeleton", "--config", str(cfg), "--out", out,
                 "--quiet"]) == 1
    err = read_json(out, "error.json")
    assert err["error"] == "ConfigError"
    man = read_json(out, "manifest.json")
    assert man["status"] == "error" and "error" in man


def test_unknown_config_key_reports_field(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["grid"]["Jay"] = 3
    code, out = run(tmp_path, "skeleton", payload)
    assert code == 1
    assert "grid" in read_json(out, "error.json")["detail"]


def test_skeleton_writes_trajectory_and_report(tmp_path):
    code, out = run(tmp_path, "skeleton")
    assert code == 0
    rep = read_json(out, "report.json")
    for key in ("sup_H4", "sup_pen_H", "eta_total_variation"):
        assert key in rep
    idx = read_json(out, os.path.join("trajectory", "index.json"))
    assert idx["n_pen"] == 64.0
    assert os.path.exists(os.path.join(out, "trajectory", "series.csv"))


def test_penalty_sweep_csv_columns(tmp_path):
    code, out = run(tmp_path, "penalty-sweep")
    assert code == 0
    lines = read_bytes(out, "sweep.csv").decode().splitlines()
    header = lines[0].split(",")
    assert header[:4] == ["n_pen", "sup_pen_H", "n_l1_integral",
                          "n2_h2_integral"]
    rows = [line.split(",") for line in lines[1:]]
    ns = [float(r[0]) for r in rows]
    assert ns == [8.0, 16.0, 32.0, 64.0]
    sup = [float(r[1]) for r in rows]
    assert all(a > b for a, b in zip(sup, sup[1:]))
    assert lines[-1].split(",")[7] == "nan"


def test_cauchy_pairs_match_sweep_members(tmp_path):
    code, out = run(tmp_path, "cauchy")
    assert code == 0
    lines = read_bytes(out, "cauchy.csv").decode().splitlines()
    assert lines[0] == "n_pen,n_next,cauchy_H,cauchy_V,cauchy_total"
    pairs = [tuple(map(float, l.split(",")[:2])) for l in lines[1:]]
    assert pairs == [(8.0, 16.0), (16.0, 32.0), (32.0, 64.0)]
    totals = [float(l.split(",")[4]) for l in lines[1:]]
    assert all(math.isfinite(t) and t >= 0 for t in totals)


def test_mc_outputs_and_worker_invariance(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["event"] = {"kind": "terminal_ball", "radius": 0.05,
                        "complement": True}
    code, out1 = run(tmp_path, "mc", payload, extra=("--workers", "1"),
                     name="w1")
    assert code == 0
    code, out3 = run(tmp_path, "mc", payload, extra=("--workers", "3"),
                     name="w3")
    assert code == 0
    assert read_bytes(out1, "mc.csv") == read_bytes(out3, "mc.csv")
    assert read_bytes(out1, "report.json") == read_bytes(out3, "report.json")
    rep = read_json(out1, "report.json")
    assert rep["replicas"] == 12 and 0.0 <= rep["p_hat"] <= 1.0
    lines = read_bytes(out1, "mc.csv").decode().splitlines()
    assert lines[0] == "replica,seed,sup_pen_H,terminal_H_norm,event"
    assert len(lines) == 13


def test_seed_flag_overrides_config(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["event"] = {"kind": "terminal_ball", "radius": 0.05,
                        "complement": True}
    _, out_a = run(tmp_path, "mc", payload, extra=("--seed", "101"), name="a")
    _, out_b = run(tmp_path, "mc", payload, extra=("--seed", "101"), name="b")
    _, out_c = run(tmp_path, "mc", payload, extra=("--seed", "102"), name="c")
    assert read_bytes(out_a, "mc.csv") == read_bytes(out_b, "mc.csv")
    assert read_bytes(out_a, "mc.csv") != read_bytes(out_c, "mc.csv")
    assert read_json(out_a, "manifest.json")["seed"] == 101


def test_repeat_runs_byte_identical_outside_wall_time(tmp_path):
    code, out1 = run(tmp_path, "penalty-sweep", name="r1")
    code2, out2 = run(tmp_path, "penalty-sweep", name="r2")
    assert code == code2 == 0
    assert read_bytes(out1, "sweep.csv") == read_bytes(out2, "sweep.csv")
    assert read_bytes(out1, "report.json") == read_bytes(out2, "report.json")
    m1, m2 = read_json(out1, "manifest.json"), read_json(out2, "manifest.json")
    for key in ("started_unix", "wall_time_seconds"):
        m1.pop(key), m2.pop(key)
    assert m1 == m2


def test_continuity_requires_family(tmp_path):
    code, out = run(tmp_path, "continuity")
    assert code == 1
    assert "control_family" in read_json(out, "error.json")["detail"]


def test_continuity_writes_table(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["domain"]["radius"] = 2.0
    payload["control_family"] = {"kind": "sine_rates", "rates": [1, 2],
                                 "K": 10, "amplitude": 1.0}
    payload["control"] = {"kind": "zero", "K": 10}
    payload["penalty"]["sweep"] = {"n_start": 8.0, "n_max": 32.0,
                                   "tol_cauchy": 1e-8}
    code, out = run(tmp_path, "continuity", payload)
    assert code == 0
    lines = read_bytes(out, "continuity.csv").decode().splitlines()
    assert lines[0] == "label,cm_gap_sq,gap_H,gap_V,rho_sq,converged"
    assert [l.split(",")[0] for l in lines[1:]] == ["r1", "r2"]


def test_rate_subcommand_writes_result(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["domain"]["radius"] = 5.0
    payload["event"] = {"kind": "terminal_ball", "radius": 0.02,
                        "complement": True}
    payload["rate"] = {"K": 2, "max_iters": 25, "stag_window": 8}
    payload["penalty"]["n_event"] = 32.0
    code, out = run(tmp_path, "rate", payload)
    assert code == 0
    rate = read_json(out, "rate.json")
    assert rate["I_star"] >= 0.0
    assert isinstance(rate["feasible"], bool)
    assert rate["event"]["kind"] == "terminal_ball"
    assert len(rate["control_values"][0]) == 2


def test_all_merges_stage_reports(tmp_path):
    payload = copy.deepcopy(BASE)
    payload["event"] = {"kind": "terminal_ball", "radius": 0.05,
                        "complement": True}
    code, out = run(tmp_path, "all", payload)
    assert code == 0
    rep = read_json(out, "report.json")
    assert set(rep) == {"validate_domain", "penalty_sweep", "cauchy", "mc"}
    assert rep["validate_domain"]["passed"] is True
    man = read_json(out, "manifest.json")
    assert "sweep.csv" in man["outputs"] and "mc.csv" in man["outputs"]
    assert os.path.exists(os.path.join(out, "cauchy.csv"))
