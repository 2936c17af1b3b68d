import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from flowsplit import __version__, cli
from flowsplit.errors import NumericalError
from flowsplit.optimize import brute_force_optimize
from flowsplit.scenarios import load_scenario


def run(tmp_path, *argv):
    return cli.main([*argv, "--out-dir", str(tmp_path)])


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


CYCLE = {
    "queues": [{"id": "a", "mu_max": 3}, {"id": "b", "mu_max": 3}, {"id": "c", "mu_max": 3}],
    "junctions": [{"from": "a", "to": "b"}, {"from": "b", "to": "c"}, {"from": "c", "to": "a"}],
    "flows": [{"id": "f", "ingress": "a", "egress": "c", "rate": 1, "omega": 2}],
}

OVERLOADED = {
    "queues": [{"id": "a", "mu_max": 1.0}, {"id": "b", "mu_max": 3.0}],
    "junctions": [{"from": "a", "to": "b"}],
    "flows": [{"id": "f", "ingress": "a", "egress": "b", "rate": 2.0, "omega": 2}],
}

SINGLE = {
    "queues": [{"id": "a", "mu_max": 3.0}, {"id": "b", "mu_max": 3.0}],
    "junctions": [{"from": "a", "to": "b"}],
    "flows": [{"id": "f", "ingress": "a", "egress": "b", "rate": 1.0, "omega": 2}],
}


@pytest.mark.parametrize("name, counts", [("small", (5, 2, 3)), ("medium", (None, 3, 35)),
                                          ("large", (49, 5, 15))])
def test_validate_bundled(tmp_path, name, counts):
    assert run(tmp_path, "validate", "--scenario", name) == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    q, k, w = counts
    if q is not None:
        assert rep["queues"] == q
    assert (rep["flows"], rep["paths"]) == (k, w)


def test_validate_cycle_exit_2(tmp_path, capsys):
    assert run(tmp_path, "validate", "--scenario", write(tmp_path, "c.json", CYCLE)) == 2
    err = capsys.readouterr().err
    assert "cycle" in err and "a" in err


def test_bad_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(tmp_path, "validate", "--scenario", str(p)) == 2
    assert run(tmp_path, "validate", "--scenario", str(tmp_path / "missing.json")) == 2


def test_unstable_exit_3(tmp_path):
    assert run(tmp_path, "evaluate", "--scenario", write(tmp_path, "o.json", OVERLOADED)) == 3
    assert run(tmp_path, "optimize", "--scenario", write(tmp_path, "o.json", OVERLOADED)) == 3


def test_numerical_failure_exit_4(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("forced")
    monkeypatch.setattr(cli, "evaluate_objective", boom)
    assert run(tmp_path, "evaluate", "--scenario", "small") == 4


def test_optimize_small_matches_brute_force(tmp_path, small):
    assert run(tmp_path, "optimize", "--scenario", "small", "--algorithm", "bh") == 0
    pol = json.loads((tmp_path / "policy.json").read_text())
    _, best, _ = brute_force_optimize(small, grid_step=1e-3)
    assert abs(pol["objective"] - best) <= 1e-4
    trace = json.loads((tmp_path / "trace_bh.json").read_text())
    assert trace["evaluations"] <= trace["evaluation_bound"]
    header, rows = read_csv(tmp_path / "trace_bh.csv")
    assert header[0] == "iteration" and rows


def test_optimize_single_path_scenario(tmp_path):
    assert run(tmp_path, "optimize", "--scenario", write(tmp_path, "s.json", SINGLE)) == 0
    info = json.loads((tmp_path / "trace_bh.json").read_text())
    assert info["evaluations"] == 1
    assert info["trace"]["iterations"] == 0 and info["trace"]["steps"] == []


def test_sweep_degenerate_range(tmp_path):
    assert run(tmp_path, "sweep", "--scenario", "small", "--start", "0.4", "--stop", "0.4") == 0
    header, rows = read_csv(tmp_path / "sweep.csv")
    assert header == ["p", "objective_mm1", "objective_md1"]
    assert len(rows) == 1 and float(rows[0][0]) == 0.4


def test_sweep_minimum_matches_brute_force(tmp_path, small):
    assert run(tmp_path, "sweep", "--scenario", "small") == 0
    _, rows = read_csv(tmp_path / "sweep.csv")
    arr = np.array(rows, float)
    assert len(arr) == 99
    pol, _, _ = brute_force_optimize(small, grid_step=1e-3)
    assert abs(arr[np.argmin(arr[:, 1]), 0] - pol.p("f2:late")) <= 0.01 + 1e-12


def test_sweep_refuses_multi_dimensional(tmp_path):
    assert run(tmp_path, "sweep", "--scenario", "medium") == 2


def test_compare_self_identical_rows(tmp_path):
    pol = tmp_path / "p.json"
    assert run(tmp_path, "optimize", "--scenario", "small") == 0
    pol.write_text((tmp_path / "policy.json").read_text())
    assert run(tmp_path, "compare", "--scenario", "small", "--policies", f"x={pol},y={pol}",
               "--horizon", "2000") == 0
    header, rows = read_csv(tmp_path / "summary.csv")
    assert rows[0][1:] == rows[1][1:]
    assert (tmp_path / "ecdf_x.csv").exists()


def test_simulate_and_metadata_everywhere(tmp_path, capsys):
    cmds = [["validate"], ["optimize"], ["evaluate"], ["sweep", "--step", "0.1"],
            ["simulate", "--horizon", "500"], ["compare", "--horizon", "300", "--policies", "uniform,distributed"]]
    for c in cmds:
        assert run(tmp_path, *c, "--scenario", "small", "--seed", "17") == 0
    bundle = load_scenario("small")
    files = list(tmp_path.iterdir())
    assert len(files) >= 10
    for f in files:
        text = f.read_text()
        if f.suffix == ".json":
            meta = json.loads(text)
        else:
            meta = dict(l[2:].split("=", 1) for l in text.splitlines() if l.startswith("# "))
        assert str(meta["seed"]) == "17", f.name
        assert meta["scenario_hash"] == bundle.hash, f.name
        assert meta["version"] == __version__, f.name


def test_csv_stdout_format(tmp_path, capsys):
    assert run(tmp_path, "validate", "--scenario", "small", "--format", "csv") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("# seed=")
    assert "flow,paths" in out


def test_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["simulate", "--scenario", "medium", "--mode", "distributed", "--horizon", "300",
                         "--seed", "5", "--replications", "2", "--out-dir", str(d)]) == 0
    assert (a / "sim_report.json").read_text() == (b / "sim_report.json").read_text()
    assert (a / "trip_time_ecdf.csv").read_text() == (b / "trip_time_ecdf.csv").read_text()


def test_global_flags_before_subcommand(tmp_path):
    assert cli.main(["--scenario", "large", "--out-dir", str(tmp_path), "validate"]) == 0
    assert json.loads((tmp_path / "validate.json").read_text())["paths"] == 15


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "flowsplit", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
    r = subprocess.run([sys.executable, "-m", "flowsplit", "validate", "--scenario",
                        write(tmp_path, "c.json", CYCLE), "--out-dir", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2
