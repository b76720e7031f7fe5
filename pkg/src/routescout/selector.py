"""Slot-based forwarding and monitoring: hash each flow to a point in [0, K) and map
(prefix, point) to a next-hop and, for monitored sub-ranges, an aggregator index."""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .core import FiveTuple, digest64, mix64

K = 1 << 16
SELECTOR_SEED = 0x5E1EC7


class ConfigError(ValueError):
    pass


class TableCorruption(RuntimeError):
    pass


class ConsistencyError(ValueError):
    pass


def hash_point(flow: FiveTuple, domain: int = K, seed: int = SELECTOR_SEED) -> int:
    return mix64(digest64(flow.key()) ^ seed) % domain


class HashRange(NamedTuple):
    lo: int
    hi: int

    def __contains__(self, point: object) -> bool:
        return isinstance(point, int) and self.lo <= point < self.hi

    @property
    def width(self) -> int:
        return self.hi - self.lo

    def check(self, domain: int = K) -> None:
        if not 0 <= self.lo < self.hi <= domain:
            raise TableCorruption(f"bad range [{self.lo}, {self.hi}) for domain {domain}")


@dataclass(frozen=True)
class ForwardingRule:
    prefix_id: str
    range: HashRange
    next_hop: str


@dataclass(frozen=True)
class MonitoringRule:
    prefix_id: str
    range: HashRange
    agg_index: int


class RuleTable:
    """Immutable snapshot of both selector tables, validated on construction."""

    def __init__(self, forwarding: Iterable[ForwardingRule], monitoring: Iterable[MonitoringRule] = (), domain: int = K):
        self.domain = domain
        self.forwarding = tuple(forwarding)
        self.monitoring = tuple(monitoring)
        self._fwd: dict[str, tuple[list[int], list[ForwardingRule]]] = {}
        self._mon: dict[str, tuple[list[int], list[MonitoringRule]]] = {}
        by_prefix: dict[str, list[ForwardingRule]] = {}
        for r in self.forwarding:
            r.range.check(domain)
            by_prefix.setdefault(r.prefix_id, []).append(r)
        for p, rules in by_prefix.items():
            rules.sort(key=lambda r: r.range.lo)
            edge = 0
            for r in rules:
                if r.range.lo != edge:
                    what = "overlap" if r.range.lo < edge else "gap"
                    raise TableCorruption(f"prefix {p}: forwarding {what} at point {min(edge, r.range.lo)}")
                edge = r.range.hi
            if edge != domain:
                raise TableCorruption(f"prefix {p}: forwarding rules stop at {edge}, not {domain}")
            self._fwd[p] = ([r.range.lo for r in rules], rules)
        seen_agg = set()
        mon_by_prefix: dict[str, list[MonitoringRule]] = {}
        for r in self.monitoring:
            r.range.check(domain)
            if r.agg_index in seen_agg:
                raise TableCorruption(f"aggregator index {r.agg_index} used twice")
            seen_agg.add(r.agg_index)
            if r.prefix_id not in self._fwd:
                raise TableCorruption(f"monitoring rule for unrouted prefix {r.prefix_id}")
            owner = self._forwarding_rule(r.prefix_id, r.range.lo)
            if r.range.hi > owner.range.hi:
                raise TableCorruption(f"prefix {r.prefix_id}: monitoring range {tuple(r.range)} spans two forwarding rules")
            mon_by_prefix.setdefault(r.prefix_id, []).append(r)
        for p, rules in mon_by_prefix.items():
            rules.sort(key=lambda r: r.range.lo)
            for a, b in zip(rules, rules[1:]):
                if b.range.lo < a.range.hi:
                    raise TableCorruption(f"prefix {p}: overlapping monitoring ranges")
            self._mon[p] = ([r.range.lo for r in rules], rules)

    def _forwarding_rule(self, prefix_id: str, point: int) -> ForwardingRule:
        try:
            los, rules = self._fwd[prefix_id]
        except KeyError:
            raise TableCorruption(f"no forwarding rules for prefix {prefix_id}") from None
        i = bisect.bisect_right(los, point) - 1
        if i < 0 or point not in rules[i].range:
            raise TableCorruption(f"prefix {prefix_id}: no forwarding rule covers point {point}")
        return rules[i]

    def select(self, prefix_id: str, point: int) -> tuple[str, int | None]:
        hop = self._forwarding_rule(prefix_id, point).next_hop
        mon = self._mon.get(prefix_id)
        if mon:
            i = bisect.bisect_right(mon[0], point) - 1
            if i >= 0 and point in mon[1][i].range:
                return hop, mon[1][i].agg_index
        return hop, None

    def prefixes(self) -> list[str]:
        return list(self._fwd)

    def index_map(self) -> dict[int, tuple[str, str]]:
        return {r.agg_index: (r.prefix_id, self._forwarding_rule(r.prefix_id, r.range.lo).next_hop) for r in self.monitoring}

    def to_document(self) -> dict:
        return {
            "domain": self.domain,
            "forwarding": [
                {"prefix": r.prefix_id, "lo": r.range.lo, "hi": r.range.hi, "next_hop": r.next_hop} for r in self.forwarding
            ],
            "monitoring": [
                {"prefix": r.prefix_id, "lo": r.range.lo, "hi": r.range.hi, "agg_index": r.agg_index} for r in self.monitoring
            ],
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "RuleTable":
        try:
            domain = int(doc.get("domain", K))
            fwd = [ForwardingRule(str(d["prefix"]), HashRange(int(d["lo"]), int(d["hi"])), str(d["next_hop"])) for d in doc["forwarding"]]
            mon = [
                MonitoringRule(str(d["prefix"]), HashRange(int(d["lo"]), int(d["hi"])), int(d["agg_index"]))
                for d in doc.get("monitoring", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed rule document: {exc}") from None
        return cls(fwd, mon, domain)

    def dumps(self) -> str:
        return json.dumps(self.to_document(), indent=1)


@dataclass
class SlotPlan:
    """Slot count per prefix; slot j of a prefix spans [j*w, (j+1)*w) with w = domain // count,
    and the last slot absorbs the remainder."""

    counts: dict[str, int]
    domain: int = K

    def __post_init__(self) -> None:
        for p, c in self.counts.items():
            if not 1 <= c <= self.domain:
                raise ConfigError(f"prefix {p}: slot count {c} outside [1, {self.domain}]")

    def boundary(self, prefix_id: str, j: int) -> int:
        c = self.counts[prefix_id]
        return self.domain if j >= c else j * (self.domain // c)

    def slot_range(self, prefix_id: str, j: int) -> HashRange:
        return HashRange(self.boundary(prefix_id, j), self.boundary(prefix_id, j + 1))

    def slot_of(self, prefix_id: str, point: int) -> int:
        c = self.counts[prefix_id]
        return min(point // (self.domain // c), c - 1)


def partition_slots(demands: Mapping[str, float], total_slots: int, domain: int = K) -> SlotPlan:
    """Largest-remainder apportionment with at least one slot per prefix; ties go to earlier prefixes."""
    names = list(demands)
    if total_slots < len(names):
        raise ConfigError(f"{total_slots} slots cannot cover {len(names)} prefixes")
    if any(not demands[p] > 0 for p in names):
        raise ConfigError("demands must be positive")
    if not names:
        return SlotPlan({}, domain)
    total = sum(demands.values())
    quotas = [demands[p] * total_slots / total for p in names]
    counts = [int(q) for q in quotas]
    left = total_slots - sum(counts)
    order = sorted(range(len(names)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    # guarantee one slot each, taking from the largest holders
    for i in range(len(names)):
        if counts[i] == 0:
            donor = max(range(len(names)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] = 1
    return SlotPlan(dict(zip(names, counts)), domain)


class CompiledRules(NamedTuple):
    forwarding: list[ForwardingRule]
    monitoring: list[MonitoringRule]
    index_map: dict[int, tuple[str, str]]

    def table(self, domain: int = K) -> RuleTable:
        return RuleTable(self.forwarding, self.monitoring, domain)


def compile_rules(
    plan: SlotPlan,
    alloc: Mapping[tuple[str, str], int],
    monitor_plan: Iterable[tuple[str, str, int]] = (),
    next_hop_order: Sequence[str] | None = None,
    first_agg_index: int = 0,
    agg_index_of: Mapping[tuple[str, str], int] | None = None,
) -> CompiledRules:
    """Lay out each prefix's slots as contiguous per-next-hop ranges in next-hop order;
    each monitored pair watches the lowest slots of its own range.

    Aggregator indexes are numbered from `first_agg_index` in layout order unless
    `agg_index_of` pins an index to every monitored pair.
    """
    if next_hop_order is None:
        seen: dict[str, None] = {}
        for _, n in alloc:
            seen.setdefault(n, None)
        next_hop_order = list(seen)
    hop_rank = {n: i for i, n in enumerate(next_hop_order)}
    per_prefix: dict[str, list[tuple[str, int]]] = {p: [] for p in plan.counts}
    for (p, n), c in alloc.items():
        if p not in plan.counts:
            raise ConsistencyError(f"allocation names unknown prefix {p}")
        if n not in hop_rank:
            raise ConsistencyError(f"allocation names unknown next-hop {n}")
        if c < 0 or int(c) != c:
            raise ConsistencyError(f"({p}, {n}): slot count {c} is not a non-negative integer")
        if c:
            per_prefix[p].append((n, int(c)))
    mon_slots: dict[tuple[str, str], int] = {}
    for p, n, c in monitor_plan:
        if c <= 0:
            continue
        if c > alloc.get((p, n), 0):
            raise ConsistencyError(f"({p}, {n}): {c} monitored slots exceed {alloc.get((p, n), 0)} allocated")
        mon_slots[(p, n)] = mon_slots.get((p, n), 0) + c
        if mon_slots[(p, n)] > alloc[(p, n)]:
            raise ConsistencyError(f"({p}, {n}): monitored slots exceed allocation")

    forwarding: list[ForwardingRule] = []
    monitoring: list[MonitoringRule] = []
    index_map: dict[int, tuple[str, str]] = {}
    agg = first_agg_index
    for p, pairs in per_prefix.items():
        total = sum(c for _, c in pairs)
        if total != plan.counts[p]:
            raise ConsistencyError(f"prefix {p}: allocation has {total} slots, plan has {plan.counts[p]}")
        pairs.sort(key=lambda nc: hop_rank[nc[0]])
        start = 0
        for n, c in pairs:
            forwarding.append(ForwardingRule(p, HashRange(plan.boundary(p, start), plan.boundary(p, start + c)), n))
            mc = mon_slots.get((p, n), 0)
            if mc:
                if agg_index_of is not None:
                    if (p, n) not in agg_index_of:
                        raise ConsistencyError(f"({p}, {n}) is monitored but has no aggregator index")
                    idx = agg_index_of[(p, n)]
                else:
                    idx, agg = agg, agg + 1
                monitoring.append(MonitoringRule(p, HashRange(plan.boundary(p, start), plan.boundary(p, start + mc)), idx))
                index_map[idx] = (p, n)
            start += c
    return CompiledRules(forwarding, monitoring, index_map)


@dataclass
class Selector:
    """Data-path view: holds the current table snapshot; the control plane swaps it whole."""

    table: RuleTable
    seed: int = SELECTOR_SEED
    _points: dict = field(default_factory=dict, repr=False)

    def point(self, flow: FiveTuple) -> int:
        pt = self._points.get(flow)
        if pt is None:
            pt = self._points[flow] = hash_point(flow, self.table.domain, self.seed)
        return pt

    def route(self, prefix_id: str, flow: FiveTuple) -> tuple[str, int | None]:
        return self.table.select(prefix_id, self.point(flow))

    def install(self, table: RuleTable) -> None:
        if table.domain != self.table.domain:
            self._points.clear()
        self.table = table

    def forget(self, flow: FiveTuple) -> None:
        self._points.pop(flow, None)

