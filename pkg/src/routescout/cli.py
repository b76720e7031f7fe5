"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (options, scenario or solver documents), 2 runtime failure.
Every command that writes results also writes a summary.json embedding the full
configuration and seed, from which the run can be repeated.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Sequence

from . import __version__

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
DESK_SCALE = 0.1


class UsageFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageFailure(f"{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one number")
    return vals


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in vals]


def _positive(cast):
    def conv(text: str):
        try:
            v = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return conv


def _add_scale(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scale", type=_positive(float), default=DESK_SCALE, help="workload scale relative to full size (default 0.1)")
    g.add_argument("--full-scale", action="store_true", help="run at full size (same as --scale 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="routescout", description="Data-plane performance monitors, egress solver and closed-loop simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check scenario documents")
    p.add_argument("--scenario", action="append", required=True, help="scenario file (repeatable)")

    p = sub.add_parser("run-scenario", help="run a closed-loop scenario")
    p.add_argument("--scenario", required=True, help="scenario file, or a summary.json from an earlier run")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out-dir", default="out", help="directory for CSV/JSON outputs")

    p = sub.add_parser("report", help="aggregate pair statistics of a finished run")
    p.add_argument("--out-dir", required=True, help="directory written by run-scenario")
    p.add_argument("--from-s", type=float, default=None, help="first snapshot time to include")
    p.add_argument("--to-s", type=float, default=None, help="last snapshot time to include")

    p = sub.add_parser("solve", help="solve one allocation problem document")
    p.add_argument("--input", required=True, help="solver input (JSON or YAML)")
    p.add_argument("--time-limit", type=_positive(float), default=None)
    p.add_argument("--out", default=None, help="write the allocation here instead of stdout")

    p = sub.add_parser("bench-delay", help="delay-monitor invertibility over time")
    p.add_argument("--m-list", type=_ints, default=None, help="memory sizes in elements (default: scaled 160K,320K,640K)")
    p.add_argument("--k", type=_positive(int), default=2)
    p.add_argument("--noise", type=float, default=0.6, help="share of SYNs never answered")
    p.add_argument("--rate", type=_positive(float), default=None, help="SYNs per second (default: scaled 3800)")
    p.add_argument("--duration", type=_positive(float), default=30.0)
    p.add_argument("--reset-period", type=_positive(float), default=None)
    p.add_argument("--repetitions", type=_positive(int), default=10)
    p.add_argument("--ideal", action="store_true", help="use the unconstrained variant instead of the staged one")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    _add_scale(p)

    p = sub.add_parser("bench-loss", help="loss-monitor per-flow accuracy over time")
    p.add_argument("--m-list", type=_ints, default=None, help="memory sizes in elements (default: scaled 640K)")
    p.add_argument("--k", type=_positive(int), default=2)
    p.add_argument("--loss-rates", type=_floats, default=[0.001, 0.01, 0.05])
    p.add_argument("--flows-per-s", type=_positive(float), default=None, help="default: scaled 37000")
    p.add_argument("--duration", type=_positive(float), default=30.0)
    p.add_argument("--reset-period", type=_positive(float), default=None)
    p.add_argument("--ideal", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    _add_scale(p)

    p = sub.add_parser("bench-solver", help="solver runtime percentiles")
    p.add_argument("--prefixes", type=_positive(int), default=800)
    p.add_argument("--next-hops", type=_positive(int), default=3)
    p.add_argument("--slots", type=_positive(int), default=200)
    p.add_argument("--objective", default="all", help="moves, balance, performance, combined or all")
    p.add_argument("--instances", type=_positive(int), default=30)
    p.add_argument("--time-limit", type=_positive(float), default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    return ap


def _scale(args) -> float:
    return 1.0 if args.full_scale else args.scale


def _write_summary(out_dir: str, doc: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return path


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# -- commands ------------------------------------------------------------------


def cmd_validate(args) -> int:
    from .netsim.scenario import ScenarioError, load_document, validate_scenario

    bad = 0
    for path in args.scenario:
        try:
            problems = validate_scenario(load_document(path))
        except ScenarioError as exc:
            problems = exc.problems
        except OSError as exc:
            problems = [f"cannot read: {exc.strerror}"]
        if problems:
            bad += 1
            print(f"{path}: INVALID")
            for msg in problems:
                print(f"  - {msg}")
        else:
            print(f"{path}: ok")
    return EXIT_INVALID if bad else EXIT_OK


def cmd_run_scenario(args) -> int:
    from .netsim import build_scenario, load_document, run, summary, write_outputs

    doc = load_document(args.scenario)
    if isinstance(doc, dict) and "scenario" in doc and "counters" in doc:
        doc = doc["scenario"]  # rerun from an earlier summary
    sc = build_scenario(doc)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    result = run(sc)
    paths = write_outputs(result, args.out_dir)
    doc = {**summary(result), "scenario": sc.document, "command": "run-scenario"}
    _write_summary(args.out_dir, doc)
    final = {f"{p}|{n}": c for (p, n), c in sorted(result.final_allocation.items()) if c}
    print(f"{sc.name}: seed {result.seed}, {len(result.intervals)} intervals, {doc['moves']} slot moves")
    print(f"final allocation: {json.dumps(final)}")
    print(f"outputs: {', '.join(sorted(paths.values()))}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .aggregator import PairStats, format_report, merge_stats

    path = os.path.join(args.out_dir, "pairs.csv")
    merged: dict[tuple[str, str], PairStats] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t = float(row["t_s"])
            if (args.from_s is not None and t < args.from_s) or (args.to_s is not None and t > args.to_s):
                continue
            count = int(row["delay_count"])
            mean = float(row["mean_delay_ms"]) if row["mean_delay_ms"] else 0.0
            st = PairStats(row["prefix"], row["next_hop"], round(mean * count), count, int(row["expected"]), int(row["unexpected"]))
            key = (st.prefix_id, st.next_hop)
            merged[key] = merge_stats(merged[key], st) if key in merged else st
    sys.stdout.write(format_report(merged.values()))
    return EXIT_OK


def cmd_solve(args) -> int:
    from .solver import load_input, solve

    inp = load_input(args.input)
    res = solve(inp, time_limit=args.time_limit)
    text = json.dumps(res.to_document(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_bench_delay(args) -> int:
    from .bench import DELAY_FULL, bench_delay

    scale = _scale(args)
    m_list = args.m_list or [round(m * scale) for m in DELAY_FULL["m_list"]]
    rate = args.rate or DELAY_FULL["rate"] * scale
    if not 0 <= args.noise < 1:
        raise UsageFailure(f"--noise must be in [0, 1), got {args.noise}")
    if any(m <= 0 for m in m_list):
        raise UsageFailure("--m-list entries must be positive")
    seeds = [args.seed * 1000 + i for i in range(args.repetitions)]
    os.makedirs(args.out_dir, exist_ok=True)
    per_m = {}
    with open(os.path.join(args.out_dir, "delay_invertibility.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, ["m", "t_s", "median", "min", "max"])
        w.writeheader()
        for m in m_list:
            res = bench_delay(m, args.k, args.noise, rate, args.duration, args.reset_period, seeds, staged=not args.ideal)
            w.writerows(res.rows())
            per_m[str(m)] = {"median": res.median, "min": min(res.overall), "max": max(res.overall), "runtime_s": res.runtime_s}
            print(f"m={m}: invertibility median {res.median:.4f} (min {min(res.overall):.4f}, max {max(res.overall):.4f}) over {len(seeds)} runs")
    _write_summary(args.out_dir, {"command": "bench-delay", "config": {**_config(args), "m_list": m_list, "rate": rate, "seeds": seeds}, "results": per_m})
    return EXIT_OK


def cmd_bench_loss(args) -> int:
    from .bench import LOSS_FULL, bench_loss

    scale = _scale(args)
    m_list = args.m_list or [round(m * scale) for m in LOSS_FULL["m_list"]]
    fps = args.flows_per_s or LOSS_FULL["flows_per_s"] * scale
    if any(not 0 <= r < 1 for r in args.loss_rates):
        raise UsageFailure("--loss-rates entries must be in [0, 1)")
    if any(m <= 0 for m in m_list):
        raise UsageFailure("--m-list entries must be positive")
    os.makedirs(args.out_dir, exist_ok=True)
    results = []
    with open(os.path.join(args.out_dir, "loss_error.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "loss", "t_s", "p70_error", "mean_error", "flows"])
        for m in m_list:
            for loss in args.loss_rates:
                res = bench_loss(m, loss, args.k, fps, args.duration, args.seed, staged=not args.ideal, reset_s=args.reset_period)
                for t, p70, mean, n in res.series():
                    w.writerow([m, loss, t, p70, mean, n])
                results.append({"m": m, "loss": loss, "p70_error": res.p70(), "flows": len(res.finished), "runtime_s": res.runtime_s})
                print(f"m={m} loss={loss}: 70th-percentile per-flow error {res.p70():.5f} over {len(res.finished)} flows")
    _write_summary(args.out_dir, {"command": "bench-loss", "config": {**_config(args), "m_list": m_list, "flows_per_s": fps}, "results": results})
    return EXIT_OK


def cmd_bench_solver(args) -> int:
    from .bench import OBJECTIVE_SETS, bench_solver

    names = list(OBJECTIVE_SETS) if args.objective == "all" else [args.objective]
    if any(n not in OBJECTIVE_SETS for n in names):
        raise UsageFailure(f"--objective must be one of {', '.join(OBJECTIVE_SETS)} or all")
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    with open(os.path.join(args.out_dir, "solver_runtime.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["objective_set", "instance", "runtime_s", "proven_optimal"])
        for name in names:
            res = bench_solver(name, args.instances, args.prefixes, args.next_hops, args.slots, args.seed, args.time_limit)
            for i, (rt, ok) in enumerate(zip(res.runtimes_s, res.proven)):
                w.writerow([name, i, rt, ok])
            s = res.summary()
            rows.append(s)
            print(f"{name:12s} p50 {s['p50_s']:.3f}s  p70 {s['p70_s']:.3f}s  p95 {s['p95_s']:.3f}s  ({s['instances']} instances)")
    _write_summary(args.out_dir, {"command": "bench-solver", "config": _config(args), "results": rows})
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run-scenario": cmd_run_scenario,
    "report": cmd_report,
    "solve": cmd_solve,
    "bench-delay": cmd_bench_delay,
    "bench-loss": cmd_bench_loss,
    "bench-solver": cmd_bench_solver,
}


def main(argv: Sequence[str] | None = None) -> int:
    from .netsim.scenario import ScenarioError
    from .solver import InputError, SolverError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageFailure as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, InputError) as exc:
        print("invalid input:", file=sys.stderr)
        for msg in getattr(exc, "problems", None) or [str(exc)]:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
