import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from robsens.cli import main, schema

jsonschema = pytest.importorskip("jsonschema")


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["simulate", "--n", "60", "--seed", "3", "--out", str(d)]) == 0
    return d / "simulated.csv"


def run(argv, env=None):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, stdout=out, stderr=err, env=env or {})
    return code, out.getvalue(), err.getvalue()


def valid(report):
    jsonschema.validate(report, schema())
    return report


def test_single_point_grid(sim_csv):
    code, out, _ = run(["bounds", "--input", str(sim_csv), "--lambda", "1", "--delta", "0"])
    assert code == 0
    rep = valid(json.loads(out))
    assert len(rep["results"]) == 1
    b = rep["results"][0]["bounds"]
    assert b["tau_min"] == pytest.approx(rep["point_estimate"], abs=1e-6)
    assert b["tau_max"] == pytest.approx(rep["point_estimate"], abs=1e-6)
    assert rep["seed"] == 0 and rep["config"]["input"] == str(sim_csv)


def test_sixteen_point_grid_nested(sim_csv, tmp_path):
    code, _, _ = run(["bounds", "--input", str(sim_csv), "--lambda", "1", "1.5", "2", "3",
                      "--delta", "0", "0.05", "0.1", "0.2", "--out", str(tmp_path)])
    assert code == 0
    rep = valid(json.loads((tmp_path / "bounds.json").read_text()))
    pts = {(r["params"]["lambda1"], r["params"]["delta1"]): r["bounds"] for r in rep["results"]}
    assert len(pts) == 16
    for (l, d), b in pts.items():
        for (l2, d2), b2 in pts.items():
            if l2 >= l and d2 >= d:
                assert b2["tau_min"] <= b["tau_min"] + 1e-9 and b2["tau_max"] >= b["tau_max"] - 1e-9
    rows = list(csv.DictReader((tmp_path / "bounds.csv").open()))
    assert len(rows) == 16


def test_ci_smoke_and_collapse(sim_csv):
    code, out, _ = run(["ci", "--input", str(sim_csv), "--bootstrap", "10", "--lambda", "1.5",
                        "--delta", "0.1", "--threads", "1"])
    assert code == 0
    rep = valid(json.loads(out))
    ci = rep["results"][0]["ci"]
    assert ci["L_alpha"] <= ci["point_bounds"]["tau_min"] or ci["L_alpha"] == "-inf"
    assert rep["bootstrap"]["B"] == 10
    code, out, _ = run(["ci", "--input", str(sim_csv), "--bootstrap", "10", "--zeta", "0", "--threads", "1"])
    rep = valid(json.loads(out))
    assert rep["results"][0]["ci"]["delta_inflated"] == [0.0, 0.0]


def test_ci_whole_model(sim_csv):
    code, out, _ = run(["ci", "--input", str(sim_csv), "--bootstrap", "6", "--model", "whole",
                        "--lambda", "2", "--delta", "0.1", "--threads", "1"])
    assert code == 0
    rep = valid(json.loads(out))
    diag = rep["results"][0]["ci"]["diagnostics"]
    assert "pooled" in diag and "cell_quantiles" in diag


def test_curve_rows_follow_flag(sim_csv):
    code, out, _ = run(["curve", "--input", str(sim_csv), "--bootstrap", "10", "--q-points", "3",
                        "--q-min", "0.8", "--log-lambda-max", "2", "--format", "csv", "--threads", "1"])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["q", "lambda_lower"] and len(rows) == 4
    assert [float(r[0]) for r in rows[1:]] == pytest.approx([0.8, 0.9, 1.0])
    code, out, _ = run(["curve", "--input", str(sim_csv), "--bootstrap", "10", "--q-points", "2",
                        "--log-lambda-max", "2", "--threads", "1"])
    rep = valid(json.loads(out))
    assert len(rep["results"]["q"]) == 2


def test_fit_report(sim_csv):
    code, out, _ = run(["fit", "--input", str(sim_csv)])
    rep = valid(json.loads(out))
    assert code == 0 and rep["results"]["score_norm"] <= 1e-8
    assert set(rep["results"]["coefficients"]) == {"(intercept)", "x"}


def test_simulate_stdout_deterministic():
    a = run(["simulate", "--n", "20", "--seed", "5"])[1]
    b = run(["simulate", "--n", "20", "--seed", "5"])[1]
    assert a == b and a.splitlines()[0] == "y,z,x" and len(a.splitlines()) == 21
    hidden = run(["simulate", "--n", "20", "--seed", "5", "--with-hidden"])[1]
    assert hidden.splitlines()[0] == "y,z,x,u"


def test_exit_codes(tmp_path, sim_csv):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,z,x\n1,1,0.5\nabc,0,0.2\n")
    code, _, err = run(["bounds", "--input", str(bad)])
    assert code == 2 and "abc" in err
    assert run(["bounds", "--input", str(tmp_path / "missing.csv")])[0] == 2
    assert run(["bounds", "--input", str(sim_csv), "--lambda", "0.5"])[0] == 4
    assert run(["bounds", "--input", str(sim_csv), "--bogus"])[0] == 4
    assert run(["bounds"])[0] == 4
    assert run(["ci", "--input", str(sim_csv), "--alpha", "0.7"])[0] == 4
    sep = tmp_path / "sep.csv"
    sep.write_text("y,z,x\n" + "".join(f"{i},{int(i > 3)},{i}\n" for i in range(8)))
    assert run(["bounds", "--input", str(sep)])[0] == 2


def test_precedence(tmp_path, sim_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(sim_csv), "lambda": [2.0], "delta": [0.1], "seed": 4}))
    rep = json.loads(run(["bounds", "--config", str(cfg)])[1])
    assert rep["config"]["lambda"] == [2.0] and rep["seed"] == 4
    rep = json.loads(run(["bounds", "--config", str(cfg)], env={"ROBSENS_LAMBDA": "3,4"})[1])
    assert rep["config"]["lambda"] == [3.0, 4.0] and len(rep["results"]) == 2
    rep = json.loads(run(["bounds", "--config", str(cfg), "--lambda", "1.5"],
                         env={"ROBSENS_LAMBDA": "3"})[1])
    assert rep["config"]["lambda"] == [1.5]
    cfg.write_text("{not json")
    assert run(["bounds", "--config", str(cfg)])[0] == 4


def test_config_transforms(tmp_path, sim_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(sim_csv), "s": ["x", "x*x"], "g": ["x"]}))
    rep = json.loads(run(["fit", "--config", str(cfg)])[1])
    assert set(rep["results"]["coefficients"]) == {"(intercept)", "x", "x*x"}


def test_console_script(sim_csv):
    res = subprocess.run([sys.executable, "-m", "robsens", "bounds", "--input", str(sim_csv), "--format", "csv"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert res.stdout.splitlines()[0].startswith("lambda1")
