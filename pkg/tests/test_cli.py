import csv
import json
import os

import pytest

from routescout.cli import main

SCEN_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "routescout", "scenarios")
SHIFT = os.path.join(SCEN_DIR, "shift.yaml")


def scenarios():
    return sorted(os.path.join(SCEN_DIR, f) for f in os.listdir(SCEN_DIR) if f.endswith(".yaml"))


def test_validate_shipped(capsys):
    assert main(["validate", *sum((["--scenario", s] for s in scenarios()), [])]) == 0
    assert capsys.readouterr().out.count(": ok") == len(scenarios())


def test_validate_reports_problems(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("prefixes: []\nnext_hops: [{id: a}]\npaths: []\nflows: []\n")
    assert main(["validate", "--scenario", str(bad)]) == 1
    out = capsys.readouterr().out
    assert "INVALID" in out and "prefixes: expected a non-empty list" in out
    notyaml = tmp_path / "x.yaml"
    notyaml.write_text("a: [1,\n")
    assert main(["validate", "--scenario", str(notyaml)]) == 1


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["run-scenario", "--scenario", SHIFT, "--bogus"],
        ["bench-delay", "--k", "0"],
        ["bench-delay", "--noise", "1.5"],
        ["bench-solver", "--objective", "fastest"],
        ["bench-loss", "--loss-rates", "x"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_missing_file_exits_1(tmp_path):
    assert main(["run-scenario", "--scenario", str(tmp_path / "nope.yaml"), "--out-dir", str(tmp_path)]) == 1


def test_run_scenario_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run-scenario", "--scenario", SHIFT, "--seed", "5", "--out-dir", str(out)]) == 0
    for f in ("ports.csv", "pairs.csv", "events.jsonl", "summary.json"):
        assert (out / f).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 5 and summary["scenario"]["name"]
    capsys.readouterr()

    assert main(["report", "--out-dir", str(out), "--from-s", "2", "--to-s", "6"]) == 0
    text = capsys.readouterr().out.splitlines()
    assert text[0] == "prefix,next_hop,mean_delay_ms,loss_rate,delay_count,expected,unexpected"
    with open(out / "pairs.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if 2 <= float(r["t_s"]) <= 6]
    want = {(r["prefix"], r["next_hop"]) for r in rows}
    assert {tuple(line.split(",")[:2]) for line in text[1:]} == want

    # rerun from the summary reproduces the same counters
    again = tmp_path / "again"
    assert main(["run-scenario", "--scenario", str(out / "summary.json"), "--seed", "5", "--out-dir", str(again)]) == 0
    assert json.loads((again / "summary.json").read_text())["counters"] == summary["counters"]


def test_run_scenario_outputs_are_seed_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["run-scenario", "--scenario", SHIFT, "--out-dir", str(tmp_path / d)]) == 0
    for f in ("ports.csv", "pairs.csv", "events.jsonl"):
        assert (tmp_path / "a" / f).read_text() == (tmp_path / "b" / f).read_text()


def test_solve(tmp_path, capsys):
    doc = {
        "demands": {"C": 10, "D": 20},
        "capacities": {"A": 25, "B": 25},
        "measurements": [
            {"prefix": "C", "next_hop": "A", "delay_ms": 100},
            {"prefix": "C", "next_hop": "B", "delay_ms": 10},
            {"prefix": "D", "next_hop": "A", "delay_ms": 22},
            {"prefix": "D", "next_hop": "B", "delay_ms": 20},
        ],
        "objectives": [{"kind": "delay", "tol": 0.1}, "balance"],
    }
    inp = tmp_path / "in.json"
    inp.write_text(json.dumps(doc))
    outp = tmp_path / "alloc.json"
    assert main(["solve", "--input", str(inp), "--out", str(outp)]) == 0
    res = json.loads(outp.read_text())
    got = {(r["prefix"], r["next_hop"]): r["slots"] for r in res["allocation"]}
    assert got == {("C", "B"): 10, ("D", "A"): 15, ("D", "B"): 5}
    assert res["proven_optimal"] and len(res["objectives"]) == 2


def test_solve_infeasible_and_malformed(tmp_path):
    bad = tmp_path / "inf.json"
    bad.write_text(json.dumps({"demands": {"p": 9}, "capacities": {"a": 4}}))
    assert main(["solve", "--input", str(bad)]) == 2
    bad.write_text(json.dumps({"demands": {"p": 0}, "capacities": {"a": 4}}))
    assert main(["solve", "--input", str(bad)]) == 1


def test_small_benches(tmp_path, capsys):
    d = tmp_path / "d"
    assert main(["bench-delay", "--m-list", "2048", "--rate", "50", "--duration", "2", "--repetitions", "2", "--out-dir", str(d)]) == 0
    assert (d / "delay_invertibility.csv").exists()
    assert json.loads((d / "summary.json").read_text())["config"]["m_list"] == [2048]
    l = tmp_path / "l"
    assert main(["bench-loss", "--m-list", "8192", "--loss-rates", "0.01", "--flows-per-s", "100", "--duration", "2", "--out-dir", str(l)]) == 0
    assert (l / "loss_error.csv").exists()
    s = tmp_path / "s"
    assert main(["bench-solver", "--prefixes", "10", "--slots", "8", "--instances", "2", "--objective", "moves", "--out-dir", str(s)]) == 0
    rows = list(csv.DictReader(open(s / "solver_runtime.csv")))
    assert len(rows) == 2 and rows[0]["objective_set"] == "moves"
