"""Write a run's time series, event log and summary to a directory."""
from __future__ import annotations

import csv
import json
import os

from .sim import RunResult

PORT_FIELDS = ["t_s", "next_hop", "slots", "flows", "throughput_bps", "delivered_pkts"]
PAIR_FIELDS = ["t_s", "prefix", "next_hop", "slots", "installed", "target", "mean_delay_ms", "loss_rate", "delay_count", "expected", "unexpected"]


def summary(result: RunResult) -> dict:
    shifts = [e for e in result.events if e["kind"] in ("shift_start", "shift_done")]
    return {
        "name": result.scenario.name,
        "seed": result.seed,
        "duration_s": result.scenario.duration_s,
        "counters": result.counters,
        "final_allocation": {f"{p}|{n}": c for (p, n), c in result.final_allocation.items()},
        "moves": sum(1 for e in result.events if e["kind"] == "move"),
        "shifts": shifts,
        "intervals": len(result.intervals),
    }


def write_outputs(result: RunResult, out_dir: str) -> dict[str, str]:
    """Returns the written file paths by role. Contents depend only on the scenario and seed."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "ports": os.path.join(out_dir, "ports.csv"),
        "pairs": os.path.join(out_dir, "pairs.csv"),
        "events": os.path.join(out_dir, "events.jsonl"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    with open(paths["ports"], "w", newline="") as fh:
        w = csv.DictWriter(fh, PORT_FIELDS)
        w.writeheader()
        for iv in result.intervals:
            for hop, row in iv["ports"].items():
                w.writerow({"t_s": iv["t_s"], "next_hop": hop, **row})
    with open(paths["pairs"], "w", newline="") as fh:
        w = csv.DictWriter(fh, PAIR_FIELDS)
        w.writeheader()
        for iv in result.intervals:
            for st in iv["stats"]:
                key = f"{st['prefix']}|{st['next_hop']}"
                w.writerow(
                    {
                        "t_s": iv["t_s"],
                        **st,
                        "slots": iv["allocation"].get(key, 0),
                        "installed": iv["installed"].get(key, 0),
                        "target": iv["target"].get(key, 0),
                    }
                )
    with open(paths["events"], "w") as fh:
        for ev in result.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
    with open(paths["summary"], "w") as fh:
        json.dump(summary(result), fh, indent=2, sort_keys=True)
    return paths
