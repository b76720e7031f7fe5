"""Solver inputs, allocations, objective evaluation and (de)serialization."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping

Pair = tuple[str, str]

OBJECTIVE_KINDS = ("performance", "moves", "imbalance")


class SolverError(RuntimeError):
    pass


class InputError(ValueError):
    pass


class SolverInfeasible(SolverError):
    def __init__(self, reasons: list[str]):
        self.reasons = reasons
        super().__init__("infeasible: " + "; ".join(reasons))


class OracleRefused(SolverError):
    pass


@dataclass(frozen=True)
class Objective:
    kind: str
    tol: float = 0.0
    w_loss: float = 1.0
    w_delay: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in OBJECTIVE_KINDS:
            raise InputError(f"unknown objective {self.kind!r}")
        if not self.tol >= 0:
            raise InputError("tolerance must be >= 0")
        if self.w_loss < 0 or self.w_delay < 0:
            raise InputError("weights must be >= 0")

    @property
    def integral(self) -> bool:
        return self.kind != "performance"

    def label(self) -> str:
        if self.kind != "performance":
            return self.kind
        return f"performance(w_l={self.w_loss:g},w_d={self.w_delay:g})"


def parse_objective(spec) -> Objective:
    """Accepts an Objective, a mapping, or a name; 'delay' and 'loss' are single-metric performance."""
    if isinstance(spec, Objective):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, Mapping):
        raise InputError(f"objective must be a name or mapping, got {spec!r}")
    d = dict(spec)
    kind = d.pop("kind", d.pop("objective", None))
    if kind in ("balance", "load_balance"):
        kind = "imbalance"
    if kind in ("delay", "loss"):
        d.setdefault("w_loss", 1.0 if kind == "loss" else 0.0)
        d.setdefault("w_delay", 1.0 if kind == "delay" else 0.0)
        kind = "performance"
    unknown = set(d) - {"tol", "w_loss", "w_delay"}
    if unknown:
        raise InputError(f"unknown objective fields {sorted(unknown)}")
    try:
        return Objective(kind, float(d.get("tol", 0.0)), float(d.get("w_loss", 1.0)), float(d.get("w_delay", 1.0)))
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


@dataclass
class SolverInput:
    demands: dict[str, int]  # slots per prefix
    capacities: dict[str, int]  # slots per next-hop
    admissible: list[Pair] | None = None  # None: every (prefix, next-hop)
    loss: dict[Pair, float] = field(default_factory=dict)
    delay: dict[Pair, float] = field(default_factory=dict)
    previous: dict[Pair, int] | None = None
    objectives: list[Objective] = field(default_factory=lambda: [Objective("performance")])
    max_nhs: dict[str, int] = field(default_factory=dict)
    max_loss: dict[str, float] = field(default_factory=dict)
    max_delay: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.objectives = [parse_objective(o) for o in self.objectives]
        if self.admissible is None:
            self.admissible = [(p, n) for p in self.demands for n in self.capacities]
        self.validate()

    @property
    def prefixes(self) -> list[str]:
        return list(self.demands)

    @property
    def next_hops(self) -> list[str]:
        return list(self.capacities)

    def validate(self) -> None:
        for p, d in self.demands.items():
            if int(d) != d or d < 1:
                raise InputError(f"prefix {p}: demand must be an integer >= 1, got {d}")
        for n, c in self.capacities.items():
            if int(c) != c or c < 0:
                raise InputError(f"next-hop {n}: capacity must be a non-negative integer, got {c}")
        seen = set()
        for pair in self.admissible:
            p, n = pair
            if p not in self.demands or n not in self.capacities:
                raise InputError(f"admissible pair {pair} names an unknown prefix or next-hop")
            if pair in seen:
                raise InputError(f"admissible pair {pair} listed twice")
            seen.add(pair)
        for name, table, lo, hi in (("loss", self.loss, 0.0, 1.0), ("delay", self.delay, 0.0, math.inf)):
            for pair, v in table.items():
                if not lo <= v <= hi:
                    raise InputError(f"{name}{pair} = {v} outside [{lo}, {hi}]")
        for p, k in self.max_nhs.items():
            if p not in self.demands or int(k) != k or k < 1:
                raise InputError(f"max_nhs[{p}] must be an integer >= 1 for a known prefix")
        for name, table in (("max_loss", self.max_loss), ("max_delay", self.max_delay)):
            for p in table:
                if p not in self.demands:
                    raise InputError(f"{name} names unknown prefix {p}")
        if self.previous is not None:
            for pair, v in self.previous.items():
                if int(v) != v or v < 0:
                    raise InputError(f"previous{pair} must be a non-negative integer")

    def ordered_pairs(self) -> list[Pair]:
        """Admissible pairs in (prefix, next-hop) configuration order."""
        adm = set(self.admissible)
        return [(p, n) for p in self.demands for n in self.capacities if (p, n) in adm]


@dataclass
class Allocation:
    slots: dict[Pair, int]
    objective_values: tuple = ()
    objective_labels: tuple = ()
    runtime_s: float = 0.0
    stage_optima: tuple = ()  # optimum of each objective at its own stage, before later stages trade it off
    proven_optimal: bool = True  # False when a stage stopped at its time limit

    def get(self, p: str, n: str) -> int:
        return self.slots.get((p, n), 0)

    def loads(self, next_hops: Iterable[str] | None = None) -> dict[str, int]:
        out = {n: 0 for n in next_hops} if next_hops is not None else {}
        for (_, n), c in self.slots.items():
            out[n] = out.get(n, 0) + c
        return out

    def nonzero(self) -> dict[Pair, int]:
        return {k: v for k, v in self.slots.items() if v}

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Allocation):
            return self.nonzero() == other.nonzero()
        return NotImplemented

    def to_document(self) -> dict:
        return {
            "allocation": [{"prefix": p, "next_hop": n, "slots": c} for (p, n), c in self.slots.items() if c],
            "objectives": [
                {"objective": lab, "value": v, "stage_optimum": opt}
                for lab, v, opt in zip(self.objective_labels, self.objective_values, self.stage_optima)
            ],
            "runtime_s": self.runtime_s,
            "proven_optimal": self.proven_optimal,
        }


# -- measurement preprocessing ----------------------------------------------


def fill_missing(
    pairs: Iterable[Pair],
    measured: Mapping[Pair, float],
    last_known: Mapping[Pair, float] | None = None,
) -> dict[Pair, float]:
    """Every pair gets its measured value, else its last known value, else the median of measured pairs."""
    pairs = list(pairs)
    last_known = last_known or {}
    out: dict[Pair, float] = {}
    for pair in pairs:
        if pair in measured and measured[pair] is not None:
            out[pair] = float(measured[pair])
        elif pair in last_known and last_known[pair] is not None:
            out[pair] = float(last_known[pair])
    known = [out[p] for p in pairs if p in out]
    prior = statistics.median(known) if known else 0.0
    for pair in pairs:
        out.setdefault(pair, prior)
    return out


def normalized(values: Mapping[Pair, float]) -> dict[Pair, float]:
    top = max(values.values(), default=0.0)
    if top <= 0:
        return {k: 0.0 for k in values}
    return {k: v / top for k, v in values.items()}


def performance_costs(inp: SolverInput, obj: Objective) -> dict[Pair, float]:
    pairs = inp.ordered_pairs()
    loss = normalized(fill_missing(pairs, inp.loss))
    delay = normalized(fill_missing(pairs, inp.delay))
    return {pair: obj.w_loss * loss[pair] + obj.w_delay * delay[pair] for pair in pairs}


def excluded_pairs(inp: SolverInput) -> set[Pair]:
    """Pairs whose (filled) measurements break their prefix's maxLoss/maxDelay bound."""
    pairs = inp.ordered_pairs()
    loss = fill_missing(pairs, inp.loss)
    delay = fill_missing(pairs, inp.delay)
    out = set()
    for p, n in pairs:
        if p in inp.max_loss and loss[(p, n)] > inp.max_loss[p]:
            out.add((p, n))
        if p in inp.max_delay and delay[(p, n)] > inp.max_delay[p]:
            out.add((p, n))
    return out


def evaluate(inp: SolverInput, alloc: Mapping[Pair, int], obj: Objective) -> float:
    if obj.kind == "performance":
        costs = performance_costs(inp, obj)
        return sum(costs[pair] * c for pair, c in alloc.items() if c)
    if obj.kind == "moves":
        prev = inp.previous or {}
        return sum(max(0, v - alloc.get(pair, 0)) for pair, v in prev.items())
    loads = {n: 0 for n in inp.capacities}
    for (_, n), c in alloc.items():
        loads[n] += c
    return max(loads.values()) - min(loads.values()) if loads else 0


def objective_vector(inp: SolverInput, alloc: Mapping[Pair, int], objectives: Iterable[Objective] | None = None) -> tuple:
    return tuple(evaluate(inp, alloc, o) for o in (inp.objectives if objectives is None else objectives))


def stage_bound(value: float, tol: float, integral: bool) -> float:
    """Upper bound a later stage must respect on an already-optimized objective."""
    bound = value * (1.0 + tol) if value != 0 else tol
    bound += 1e-9 * max(1.0, abs(value))
    return math.floor(bound) if integral else bound


def check_feasible(inp: SolverInput, alloc: Mapping[Pair, int]) -> list[str]:
    """Hard-constraint violations of an allocation (empty when feasible)."""
    problems = []
    adm = set(inp.ordered_pairs())
    excl = excluded_pairs(inp)
    per_prefix = {p: 0 for p in inp.demands}
    hops_used = {p: 0 for p in inp.demands}
    loads = {n: 0 for n in inp.capacities}
    for pair, c in alloc.items():
        if c == 0:
            continue
        if c < 0 or int(c) != c:
            problems.append(f"{pair}: non-integral or negative slot count {c}")
            continue
        if pair not in adm:
            problems.append(f"{pair}: slots on a non-admissible pair")
            continue
        if pair in excl:
            problems.append(f"{pair}: slots on a pair excluded by maxLoss/maxDelay")
        per_prefix[pair[0]] += c
        hops_used[pair[0]] += 1
        loads[pair[1]] += c
    for p, d in inp.demands.items():
        if per_prefix[p] != d:
            problems.append(f"prefix {p}: {per_prefix[p]} slots allocated, demand {d}")
        if p in inp.max_nhs and hops_used[p] > inp.max_nhs[p]:
            problems.append(f"prefix {p}: uses {hops_used[p]} next-hops, max_nhs {inp.max_nhs[p]}")
    for n, cap in inp.capacities.items():
        if loads[n] > cap:
            problems.append(f"next-hop {n}: load {loads[n]} exceeds capacity {cap}")
    return problems


def quick_infeasibility(inp: SolverInput) -> list[str]:
    """Cheap necessary conditions; a non-empty result names the binding constraints."""
    reasons = []
    excl = excluded_pairs(inp)
    usable: dict[str, list[str]] = {p: [] for p in inp.demands}
    for p, n in inp.ordered_pairs():
        if (p, n) not in excl:
            usable[p].append(n)
    for p, hops in usable.items():
        if not hops:
            why = " after maxLoss/maxDelay exclusions" if any(q == p for q, _ in excl) else ""
            reasons.append(f"prefix {p} has no admissible next-hop{why}")
            continue
        reach = sorted((inp.capacities[n] for n in hops), reverse=True)
        k = inp.max_nhs.get(p, len(reach))
        if sum(reach[:k]) < inp.demands[p]:
            reasons.append(f"prefix {p}: demand {inp.demands[p]} exceeds capacity {sum(reach[:k])} of its usable next-hops")
    total_d, total_c = sum(inp.demands.values()), sum(inp.capacities.values())
    if total_d > total_c:
        reasons.append(f"total demand {total_d} exceeds total capacity {total_c}")
    return reasons


# -- serialization -------------------------------------------------------------


def _pair_table(rows, field_name: str, cast) -> dict[Pair, float]:
    out = {}
    for r in rows or []:
        out[(str(r["prefix"]), str(r["next_hop"]))] = cast(r[field_name])
    return out


def input_from_document(doc: Mapping) -> SolverInput:
    try:
        demands = {str(k): int(v) for k, v in doc["demands"].items()}
        capacities = {str(k): int(v) for k, v in doc["capacities"].items()}
        adm = doc.get("admissible")
        admissible = [(str(p), str(n)) for p, n in adm] if adm is not None else None
        meas = doc.get("measurements", [])
        loss = {(str(r["prefix"]), str(r["next_hop"])): float(r["loss"]) for r in meas if r.get("loss") is not None}
        delay = {(str(r["prefix"]), str(r["next_hop"])): float(r["delay_ms"]) for r in meas if r.get("delay_ms") is not None}
        previous = _pair_table(doc.get("previous"), "slots", int) if doc.get("previous") is not None else None
        objectives = [parse_objective(o) for o in doc.get("objectives", ["performance"])]
        cons = doc.get("constraints", {}) or {}
        return SolverInput(
            demands,
            capacities,
            admissible,
            loss,
            delay,
            previous,
            objectives,
            {str(k): int(v) for k, v in (cons.get("max_nhs") or {}).items()},
            {str(k): float(v) for k, v in (cons.get("max_loss") or {}).items()},
            {str(k): float(v) for k, v in (cons.get("max_delay") or {}).items()},
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed solver input: {exc!r}") from None


def input_to_document(inp: SolverInput) -> dict:
    pairs = inp.ordered_pairs()
    meas = []
    for pair in pairs:
        row = {"prefix": pair[0], "next_hop": pair[1]}
        if pair in inp.loss:
            row["loss"] = inp.loss[pair]
        if pair in inp.delay:
            row["delay_ms"] = inp.delay[pair]
        if len(row) > 2:
            meas.append(row)
    doc = {
        "demands": dict(inp.demands),
        "capacities": dict(inp.capacities),
        "admissible": [list(p) for p in pairs],
        "measurements": meas,
        "objectives": [{"kind": o.kind, "tol": o.tol, "w_loss": o.w_loss, "w_delay": o.w_delay} for o in inp.objectives],
        "constraints": {"max_nhs": dict(inp.max_nhs), "max_loss": dict(inp.max_loss), "max_delay": dict(inp.max_delay)},
    }
    if inp.previous is not None:
        doc["previous"] = [{"prefix": p, "next_hop": n, "slots": c} for (p, n), c in inp.previous.items() if c]
    return doc


def load_input(path: str) -> SolverInput:
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        doc = yaml.safe_load(text)
    else:
        doc = json.loads(text)
    return input_from_document(doc)
