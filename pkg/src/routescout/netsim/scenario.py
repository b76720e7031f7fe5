"""Scenario documents: loading, validation with targeted messages, typed view."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..solver.actuation import GuardThresholds
from ..solver.model import InputError, Objective, parse_objective


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


DEFAULT_MONITORS = {
    "staged": True,
    "delay_m": 32000,
    "delay_k": 2,
    "loss_m": 64000,
    "loss_k": 2,
    "reset_s": 15.0,
    "per_ip_cap": 64,
    "delay_capacity": None,
    "loss_capacity": None,
}

DEFAULT_CONTROL = {
    "interval_s": 1.0,
    "tick_s": 0.05,
    "slots_per_tick": 1,
    "objectives": ["performance"],
    "monitor_slots_per_pair": 1,
    "probe_unallocated": True,
    "solver_time_limit_s": 10.0,
    "guard": {},
    "max_delay_sample_ms": None,
    "min_loss_samples": 1,
    "settle_intervals": 1,
    "enabled": True,
}

FLOW_DEFAULTS = {
    "arrival": "poisson",
    "rate_per_s": None,
    "count": None,
    "start_s": 0.0,
    "stop_s": None,
    "start_window_s": 0.1,
    "packets": 10,
    "payload_bytes": 1000,
    "pkt_rate_per_s": 100.0,
}


@dataclass
class PathSpec:
    prefix: str
    next_hop: str
    delay_ms: float
    loss: float = 0.0


@dataclass
class EventSpec:
    at_s: float
    prefix: str | None  # None: every prefix on the next-hop
    next_hop: str | None  # None: every next-hop of the prefix
    loss: float | None = None
    delay_ms: float | None = None
    delay_scale: float | None = None


@dataclass
class FlowGroup:
    prefix: str
    arrival: str
    rate_per_s: float | None
    count: int | None
    start_s: float
    stop_s: float | None
    start_window_s: float
    packets: Any  # int or {"dist": "pareto", "mean": .., "shape": .., "min": .., "max": ..}
    payload_bytes: int
    pkt_rate_per_s: float


@dataclass
class Scenario:
    name: str
    seed: int
    duration_s: float
    prefixes: dict[str, int]  # prefix -> slot count
    next_hops: dict[str, dict]  # next-hop -> {"capacity_slots": int|None, "capacity_pps": float|None}
    paths: list[PathSpec]
    events: list[EventSpec]
    flows: list[FlowGroup]
    control: dict
    monitors: dict
    initial_allocation: dict[tuple[str, str], int] | None
    document: dict = field(repr=False, default_factory=dict)

    @property
    def objectives(self) -> list[Objective]:
        return [parse_objective(o) for o in self.control["objectives"]]

    @property
    def guard(self) -> GuardThresholds:
        return GuardThresholds(**self.control["guard"])

    def admissible(self) -> list[tuple[str, str]]:
        return [(p.prefix, p.next_hop) for p in self.paths]

    def with_seed(self, seed: int) -> "Scenario":
        doc = copy.deepcopy(self.document)
        doc["seed"] = seed
        return build_scenario(doc)


def _num(v, name, problems, lo=None, hi=None, integer=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append(f"{name}: expected a number, got {v!r}")
        return None
    if integer and int(v) != v:
        problems.append(f"{name}: expected an integer, got {v!r}")
        return None
    if lo is not None and v < lo:
        problems.append(f"{name}: {v} is below the minimum {lo}")
        return None
    if hi is not None and v > hi:
        problems.append(f"{name}: {v} is above the maximum {hi}")
        return None
    return int(v) if integer else float(v)


def _unknown(section: Mapping, allowed, where: str, problems: list[str]) -> None:
    for key in section:
        if key not in allowed:
            problems.append(f"{where}: unknown field {key!r}")


def validate_scenario(doc: Any) -> list[str]:
    """All problems found in a scenario document; empty when it is valid."""
    try:
        build_scenario(doc)
    except ScenarioError as exc:
        return exc.problems
    return []


def build_scenario(doc: Any) -> Scenario:
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        raise ScenarioError(["scenario must be a mapping at top level"])
    _unknown(
        doc,
        {"name", "seed", "duration_s", "prefixes", "next_hops", "paths", "events", "flows", "control", "monitors", "initial_allocation", "description"},
        "scenario",
        problems,
    )
    for key in ("prefixes", "next_hops", "paths", "flows"):
        if key not in doc:
            problems.append(f"missing required section {key!r}")
    if problems:
        raise ScenarioError(problems)
    seed = _num(doc.get("seed", 0), "seed", problems, lo=0, integer=True)
    duration = _num(doc.get("duration_s", 10.0), "duration_s", problems, lo=1e-3)

    prefixes: dict[str, int] = {}
    if not isinstance(doc["prefixes"], list) or not doc["prefixes"]:
        problems.append("prefixes: expected a non-empty list")
    else:
        for i, p in enumerate(doc["prefixes"]):
            where = f"prefixes[{i}]"
            if not isinstance(p, Mapping) or "id" not in p:
                problems.append(f"{where}: expected a mapping with an 'id'")
                continue
            _unknown(p, {"id", "slots"}, where, problems)
            pid = str(p["id"])
            if pid in prefixes:
                problems.append(f"{where}: duplicate prefix id {pid!r}")
            slots = _num(p.get("slots", 16), f"{where}.slots", problems, lo=1, hi=1 << 16, integer=True)
            prefixes[pid] = slots or 1

    hops: dict[str, dict] = {}
    if not isinstance(doc["next_hops"], list) or not doc["next_hops"]:
        problems.append("next_hops: expected a non-empty list")
    else:
        for i, n in enumerate(doc["next_hops"]):
            where = f"next_hops[{i}]"
            if not isinstance(n, Mapping) or "id" not in n:
                problems.append(f"{where}: expected a mapping with an 'id'")
                continue
            _unknown(n, {"id", "capacity_slots", "capacity_pps"}, where, problems)
            nid = str(n["id"])
            if nid in hops:
                problems.append(f"{where}: duplicate next-hop id {nid!r}")
            hops[nid] = {
                "capacity_slots": _num(n.get("capacity_slots"), f"{where}.capacity_slots", problems, lo=0, integer=True, allow_none=True),
                "capacity_pps": _num(n.get("capacity_pps"), f"{where}.capacity_pps", problems, lo=1e-9, allow_none=True),
            }

    paths: list[PathSpec] = []
    seen_pairs = set()
    if not isinstance(doc["paths"], list) or not doc["paths"]:
        problems.append("paths: expected a non-empty list")
    else:
        for i, pth in enumerate(doc["paths"]):
            where = f"paths[{i}]"
            if not isinstance(pth, Mapping):
                problems.append(f"{where}: expected a mapping")
                continue
            _unknown(pth, {"prefix", "next_hop", "delay_ms", "loss"}, where, problems)
            p, n = str(pth.get("prefix")), str(pth.get("next_hop"))
            if p not in prefixes:
                problems.append(f"{where}: unknown prefix {p!r}")
            if n not in hops:
                problems.append(f"{where}: unknown next-hop {n!r}")
            if (p, n) in seen_pairs:
                problems.append(f"{where}: duplicate path ({p}, {n})")
            seen_pairs.add((p, n))
            delay = _num(pth.get("delay_ms"), f"{where}.delay_ms", problems, lo=0)
            loss = _num(pth.get("loss", 0.0), f"{where}.loss", problems, lo=0, hi=1)
            paths.append(PathSpec(p, n, delay or 0.0, loss or 0.0))
        for p in prefixes:
            if not any(pp.prefix == p for pp in paths):
                problems.append(f"prefix {p!r} has no path")

    events: list[EventSpec] = []
    for i, ev in enumerate(doc.get("events") or []):
        where = f"events[{i}]"
        if not isinstance(ev, Mapping):
            problems.append(f"{where}: expected a mapping")
            continue
        _unknown(ev, {"at_s", "prefix", "next_hop", "loss", "delay_ms", "delay_scale"}, where, problems)
        at = _num(ev.get("at_s"), f"{where}.at_s", problems, lo=0)
        p = ev.get("prefix")
        n = ev.get("next_hop")
        if p is not None and str(p) not in prefixes:
            problems.append(f"{where}: unknown prefix {p!r}")
        if n is not None and str(n) not in hops:
            problems.append(f"{where}: unknown next-hop {n!r}")
        if p is None and n is None:
            problems.append(f"{where}: needs a prefix, a next_hop, or both")
        loss = _num(ev.get("loss"), f"{where}.loss", problems, lo=0, hi=1, allow_none=True)
        delay = _num(ev.get("delay_ms"), f"{where}.delay_ms", problems, lo=0, allow_none=True)
        scale = _num(ev.get("delay_scale"), f"{where}.delay_scale", problems, lo=0, allow_none=True)
        if delay is not None and scale is not None:
            problems.append(f"{where}: give delay_ms or delay_scale, not both")
        events.append(EventSpec(at or 0.0, None if p is None else str(p), None if n is None else str(n), loss, delay, scale))

    flows: list[FlowGroup] = []
    if not isinstance(doc["flows"], list) or not doc["flows"]:
        problems.append("flows: expected a non-empty list")
    else:
        for i, f in enumerate(doc["flows"]):
            where = f"flows[{i}]"
            if not isinstance(f, Mapping):
                problems.append(f"{where}: expected a mapping")
                continue
            _unknown(f, set(FLOW_DEFAULTS) | {"prefix"}, where, problems)
            g = {**FLOW_DEFAULTS, **f}
            p = str(g.get("prefix"))
            if p not in prefixes:
                problems.append(f"{where}: unknown prefix {p!r}")
            if g["arrival"] not in ("poisson", "deterministic", "batch"):
                problems.append(f"{where}.arrival: expected poisson, deterministic or batch, got {g['arrival']!r}")
            if g["arrival"] == "batch":
                count = _num(g["count"], f"{where}.count", problems, lo=1, integer=True)
                rate = None
            else:
                rate = _num(g["rate_per_s"], f"{where}.rate_per_s", problems, lo=1e-9)
                count = None
            pk = g["packets"]
            if isinstance(pk, Mapping):
                _unknown(pk, {"dist", "mean", "shape", "min", "max"}, f"{where}.packets", problems)
                if pk.get("dist") not in ("pareto", "geometric", "fixed"):
                    problems.append(f"{where}.packets.dist: expected pareto, geometric or fixed")
                _num(pk.get("mean"), f"{where}.packets.mean", problems, lo=1)
                if pk.get("dist") == "pareto":
                    _num(pk.get("shape", 1.5), f"{where}.packets.shape", problems, lo=1.01)
            else:
                _num(pk, f"{where}.packets", problems, lo=1, integer=True)
            flows.append(
                FlowGroup(
                    p,
                    g["arrival"],
                    rate,
                    count,
                    _num(g["start_s"], f"{where}.start_s", problems, lo=0) or 0.0,
                    _num(g["stop_s"], f"{where}.stop_s", problems, lo=0, allow_none=True),
                    _num(g["start_window_s"], f"{where}.start_window_s", problems, lo=0) or 0.0,
                    pk,
                    _num(g["payload_bytes"], f"{where}.payload_bytes", problems, lo=1, integer=True) or 1,
                    _num(g["pkt_rate_per_s"], f"{where}.pkt_rate_per_s", problems, lo=1e-6) or 1.0,
                )
            )

    control = dict(DEFAULT_CONTROL)
    raw_control = doc.get("control") or {}
    if not isinstance(raw_control, Mapping):
        problems.append("control: expected a mapping")
        raw_control = {}
    _unknown(raw_control, DEFAULT_CONTROL, "control", problems)
    control.update(raw_control)
    _num(control["interval_s"], "control.interval_s", problems, lo=1e-3)
    _num(control["tick_s"], "control.tick_s", problems, lo=1e-4)
    _num(control["slots_per_tick"], "control.slots_per_tick", problems, lo=1, integer=True)
    _num(control["monitor_slots_per_pair"], "control.monitor_slots_per_pair", problems, lo=0, integer=True)
    _num(control["solver_time_limit_s"], "control.solver_time_limit_s", problems, lo=1e-3)
    _num(control["max_delay_sample_ms"], "control.max_delay_sample_ms", problems, lo=0, allow_none=True)
    _num(control["min_loss_samples"], "control.min_loss_samples", problems, lo=1, integer=True)
    _num(control["settle_intervals"], "control.settle_intervals", problems, lo=0, integer=True)
    if not isinstance(control["objectives"], list) or not control["objectives"]:
        problems.append("control.objectives: expected a non-empty list")
    else:
        for i, o in enumerate(control["objectives"]):
            try:
                parse_objective(o)
            except InputError as exc:
                problems.append(f"control.objectives[{i}]: {exc}")
    guard = control["guard"]
    if not isinstance(guard, Mapping):
        problems.append("control.guard: expected a mapping")
    else:
        _unknown(guard, {"loss_margin", "delay_margin", "min_samples"}, "control.guard", problems)
        for key in ("loss_margin", "delay_margin"):
            if key in guard:
                _num(guard[key], f"control.guard.{key}", problems, lo=0)
        if "min_samples" in guard:
            _num(guard["min_samples"], "control.guard.min_samples", problems, lo=0, integer=True)

    monitors = dict(DEFAULT_MONITORS)
    raw_mon = doc.get("monitors") or {}
    if not isinstance(raw_mon, Mapping):
        problems.append("monitors: expected a mapping")
        raw_mon = {}
    _unknown(raw_mon, DEFAULT_MONITORS, "monitors", problems)
    monitors.update(raw_mon)
    for key in ("delay_m", "loss_m"):
        _num(monitors[key], f"monitors.{key}", problems, lo=1, integer=True)
    for key in ("delay_k", "loss_k"):
        _num(monitors[key], f"monitors.{key}", problems, lo=1, hi=32, integer=True)
    _num(monitors["reset_s"], "monitors.reset_s", problems, lo=1e-3, allow_none=True)
    _num(monitors["per_ip_cap"], "monitors.per_ip_cap", problems, lo=1, integer=True, allow_none=True)
    for key in ("delay_capacity", "loss_capacity"):
        _num(monitors[key], f"monitors.{key}", problems, lo=1, integer=True, allow_none=True)
    if not isinstance(monitors["staged"], bool):
        problems.append("monitors.staged: expected true or false")

    initial = None
    raw_init = doc.get("initial_allocation")
    if raw_init is not None:
        initial = {}
        if not isinstance(raw_init, Mapping):
            problems.append("initial_allocation: expected a mapping prefix -> {next_hop: slots}")
        else:
            for p, row in raw_init.items():
                if str(p) not in prefixes:
                    problems.append(f"initial_allocation: unknown prefix {p!r}")
                    continue
                if not isinstance(row, Mapping):
                    problems.append(f"initial_allocation.{p}: expected a mapping next_hop -> slots")
                    continue
                for n, c in row.items():
                    if (str(p), str(n)) not in seen_pairs:
                        problems.append(f"initial_allocation.{p}.{n}: no such path")
                        continue
                    v = _num(c, f"initial_allocation.{p}.{n}", problems, lo=0, integer=True)
                    if v:
                        initial[(str(p), str(n))] = v
            for p, slots in prefixes.items():
                if str(p) in {str(k) for k in raw_init} and sum(c for (q, _), c in initial.items() if q == p) != slots:
                    problems.append(f"initial_allocation.{p}: slot counts do not add up to {slots}")
                elif str(p) not in {str(k) for k in raw_init}:
                    problems.append(f"initial_allocation: prefix {p!r} missing")

    if problems:
        raise ScenarioError(problems)
    return Scenario(
        str(doc.get("name", "scenario")),
        seed,
        duration,
        prefixes,
        hops,
        paths,
        sorted(events, key=lambda e: e.at_s),
        flows,
        control,
        monitors,
        initial,
        document=copy.deepcopy(dict(doc)),
    )


def load_document(path: str) -> Any:
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        try:
            return yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError([f"{path}: not valid YAML: {exc}"]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: not valid JSON: {exc}"]) from None


def load_scenario(path: str) -> Scenario:
    return build_scenario(load_document(path))
