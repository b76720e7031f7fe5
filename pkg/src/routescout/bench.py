"""Seeded benchmark drivers: delay-monitor invertibility, loss-monitor accuracy, solver runtime."""
from __future__ import annotations

import heapq
import itertools
import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .core import ACK, SYN, FiveTuple, PacketRecord
from .delay_monitor import DelayMonitor, invertibility
from .loss_monitor import LossClass, LossMonitor
from .netsim.flows import NS_PER_MS, NS_PER_S, FlowSpec, SendOutcome, sample_packets, tcp_flow_process
from .solver import SolverInput, parse_objective, solve

# full-scale reference workloads; desk runs multiply rates and memory by the scale factor
DELAY_FULL = {"m_list": (160_000, 320_000, 640_000), "rate": 3800.0}
LOSS_FULL = {"m_list": (640_000,), "flows_per_s": 37_000.0}

OBJECTIVE_SETS = {
    "moves": ["moves"],
    "balance": ["imbalance"],
    "performance": ["performance"],
    "combined": [{"kind": "performance", "tol": 0.1}, {"kind": "imbalance", "tol": 0.1}, "moves"],
}


def percentile(values: Iterable[float], q: float) -> float:
    arr = np.asarray(list(values), dtype=float)
    return float(np.percentile(arr, q)) if arr.size else 0.0


def _check_positive(**params) -> None:
    for name, v in params.items():
        if v is None or not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


# -- delay monitor ------------------------------------------------------------------


def delay_workload(
    rate: float, noise: float, duration_s: float, rng: random.Random, rtt_ms: tuple[float, float] = (10.0, 250.0)
) -> list[PacketRecord]:
    """Poisson SYN arrivals; a `noise` share of SYNs is never answered, the rest see their
    first ACK one uniformly drawn RTT later. Returned in time order."""
    end = round(duration_s * NS_PER_S)
    pkts: list[PacketRecord] = []
    t = 0
    used: set[FiveTuple] = set()
    while True:
        t += max(1, round(rng.expovariate(rate) * NS_PER_S))
        if t >= end:
            break
        while True:
            ft = FiveTuple((10 << 24) | rng.getrandbits(22), (93 << 24) | rng.getrandbits(24), rng.randint(1024, 65535), 443)
            if ft not in used:
                used.add(ft)
                break
        isn = rng.getrandbits(32)
        pkts.append(PacketRecord(ft, t, SYN, isn, 0, "bench"))
        if rng.random() >= noise:
            rtt = round(rng.uniform(*rtt_ms) * NS_PER_MS)
            if t + rtt < end:
                pkts.append(PacketRecord(ft, t + rtt, ACK, (isn + 1) & 0xFFFFFFFF, 0, "bench"))
    pkts.sort(key=lambda p: p.ts)
    return pkts


@dataclass
class DelayBenchResult:
    m: int
    k: int
    seeds: list[int]
    overall: list[float]  # invertibility per seed over the whole run
    bins_s: list[float]
    per_bin: list[list[float]]  # per seed, invertibility per bin
    runtime_s: float

    @property
    def median(self) -> float:
        return statistics.median(self.overall)

    def rows(self) -> Iterator[dict]:
        for i, b in enumerate(self.bins_s):
            vals = [s[i] for s in self.per_bin]
            yield {
                "m": self.m,
                "t_s": b,
                "median": statistics.median(vals),
                "min": min(vals),
                "max": max(vals),
            }


def bench_delay(
    m: int,
    k: int = 2,
    noise: float = 0.6,
    rate: float = 380.0,
    duration_s: float = 30.0,
    reset_s: float | None = None,
    seeds: Iterable[int] = range(10),
    staged: bool = True,
    bin_s: float = 1.0,
) -> DelayBenchResult:
    _check_positive(m=m, k=k, rate=rate, duration_s=duration_s, bin_s=bin_s)
    if not 0 <= noise < 1:
        raise ValueError(f"noise must be in [0, 1), got {noise!r}")
    if reset_s is not None:
        _check_positive(reset_s=reset_s)
    started = time.perf_counter()
    seeds = list(seeds)
    overall, per_bin = [], []
    n_bins = int(np.ceil(duration_s / bin_s))
    for seed in seeds:
        rng = random.Random(f"delay:{seed}")
        work = delay_workload(rate, noise, duration_s, rng)
        mon = DelayMonitor(m, k, staged=staged, per_ip_cap=None, seed=seed)
        rep = invertibility(
            mon, work, None if reset_s is None else round(reset_s * NS_PER_S), round(bin_s * NS_PER_S)
        )
        overall.append(rep.invertibility)
        series = [(a, r) for _, a, r in rep.series][:n_bins]
        series += [(0, 0)] * (n_bins - len(series))
        per_bin.append([r / a if a else 1.0 for a, r in series])
    return DelayBenchResult(m, k, seeds, overall, [i * bin_s for i in range(n_bins)], per_bin, time.perf_counter() - started)


# -- loss monitor ---------------------------------------------------------------------


@dataclass
class FlowRecord:
    transmissions: int = 0
    dropped: int = 0
    expected: int = 0
    unexpected: int = 0

    @property
    def true_loss(self) -> float:
        return self.dropped / self.transmissions if self.transmissions else 0.0

    @property
    def estimated_loss(self) -> float:
        n = self.expected + self.unexpected
        return self.unexpected / n if n else 0.0

    @property
    def error(self) -> float:
        return abs(self.estimated_loss - self.true_loss)


@dataclass
class LossBenchResult:
    m: int
    k: int
    loss: float
    seed: int
    finished: list[tuple[int, float]] = field(default_factory=list)  # (finish ns, abs error) per flow
    flows: int = 0
    packets: int = 0
    runtime_s: float = 0.0

    def p70(self) -> float:
        return percentile((e for _, e in self.finished), 70)

    def series(self, bin_s: float = 1.0) -> list[tuple[float, float, float, int]]:
        """(bin start s, 70th-percentile and mean error of flows finishing in the bin, flow count)."""
        bins: dict[int, list[float]] = {}
        width = round(bin_s * NS_PER_S)
        for t, e in self.finished:
            bins.setdefault(t // width, []).append(e)
        return [(b * bin_s, percentile(v, 70), float(np.mean(v)), len(v)) for b, v in sorted(bins.items())]


def bench_loss(
    m: int,
    loss: float,
    k: int = 2,
    flows_per_s: float = 3700.0,
    duration_s: float = 30.0,
    seed: int = 0,
    staged: bool = True,
    reset_s: float | None = None,
    packets=None,
) -> LossBenchResult:
    """Replay Poisson-arriving short TCP flows over Bernoulli-lossy paths through a loss
    monitor, comparing each flow's estimated loss rate with its exact drop record."""
    _check_positive(m=m, k=k, flows_per_s=flows_per_s, duration_s=duration_s)
    if not 0 <= loss < 1:
        raise ValueError(f"loss must be in [0, 1), got {loss!r}")
    started = time.perf_counter()
    packets = packets or {"dist": "pareto", "mean": 8, "shape": 1.5, "min": 2, "max": 2000}
    rng = random.Random(f"loss:{seed}")
    drops = random.Random(f"loss-drops:{seed}")
    mon = LossMonitor(m, k, staged=staged, seed=seed)
    res = LossBenchResult(m, k, loss, seed)
    end = round(duration_s * NS_PER_S)
    reset_ns = round(reset_s * NS_PER_S) if reset_s else None
    next_reset = reset_ns
    heap: list = []
    counter = itertools.count()
    records: dict[FiveTuple, FlowRecord] = {}
    one_way: dict[FiveTuple, int] = {}
    t = 0
    while True:
        t += max(1, round(rng.expovariate(flows_per_s) * NS_PER_S))
        if t >= end:
            break
        ft = FiveTuple((10 << 24) | rng.getrandbits(22), (93 << 24) | rng.getrandbits(24), rng.randint(1024, 65535), 443)
        if ft in records:
            continue
        records[ft] = FlowRecord()
        one_way[ft] = round(rng.uniform(5, 50) * NS_PER_MS)
        n = sample_packets(packets, rng)
        proc = tcp_flow_process(FlowSpec(n, 1000, 100.0), ft, "bench", t, rng.getrandbits(32))
        pkt, droppable = next(proc)
        heapq.heappush(heap, (pkt.ts, next(counter), proc, pkt, droppable))
    res.flows = len(records)
    while heap:
        t, _, proc, pkt, droppable = heapq.heappop(heap)
        if t >= end:
            break
        while next_reset is not None and t >= next_reset:
            mon.reset()
            next_reset += reset_ns
        rec = records[pkt.flow]
        c = mon.observe(pkt)
        if c is not None:
            if c.kind is LossClass.EXPECTED:
                rec.expected += 1
            elif c.kind is LossClass.RETRANSMIT:
                rec.unexpected += 1
        # only first transmissions of payload packets are lost, so the drop log is the exact truth
        dropped = droppable and bool(pkt.payload_len) and drops.random() < loss
        if pkt.payload_len:
            rec.transmissions += 1
            rec.dropped += dropped
        res.packets += 1
        try:
            nxt, d = proc.send(SendOutcome(not dropped, one_way[pkt.flow]))
        except StopIteration:
            res.finished.append((t, rec.error))
            continue
        heapq.heappush(heap, (nxt.ts, next(counter), proc, nxt, d))
    res.runtime_s = time.perf_counter() - started
    return res


# -- solver ---------------------------------------------------------------------------------


def solver_instance(
    seed: int,
    objectives,
    prefixes: int = 800,
    next_hops: int = 3,
    slots: int = 200,
    slack: float = 1.25,
) -> SolverInput:
    """Random instance: every prefix holds `slots` slots, next-hop capacities leave `slack`
    headroom over total demand, and the previous allocation is a random split."""
    _check_positive(prefixes=prefixes, next_hops=next_hops, slots=slots, slack=slack)
    rng = random.Random(f"solver:{seed}")
    pfx = [f"p{i}" for i in range(prefixes)]
    hops = [f"n{j}" for j in range(next_hops)]
    demands = {p: slots for p in pfx}
    cap = {n: int(np.ceil(prefixes * slots * slack / next_hops)) for n in hops}
    previous = {}
    for p in pfx:
        cuts = sorted(rng.randint(0, slots) for _ in range(next_hops - 1))
        parts = [b - a for a, b in zip([0, *cuts], [*cuts, slots])]
        for n, c in zip(hops, parts):
            if c:
                previous[(p, n)] = c
    loss = {(p, n): rng.random() * 0.05 for p in pfx for n in hops}
    delay = {(p, n): rng.uniform(5, 100) for p in pfx for n in hops}
    return SolverInput(demands, cap, None, loss, delay, previous, [parse_objective(o) for o in objectives])


@dataclass
class SolverBenchResult:
    objective_set: str
    runtimes_s: list[float]
    proven: list[bool]

    def summary(self) -> dict:
        return {
            "objective_set": self.objective_set,
            "instances": len(self.runtimes_s),
            "p50_s": percentile(self.runtimes_s, 50),
            "p70_s": percentile(self.runtimes_s, 70),
            "p95_s": percentile(self.runtimes_s, 95),
            "max_s": max(self.runtimes_s, default=0.0),
            "all_proven_optimal": all(self.proven),
        }


def bench_solver(
    objective_set: str,
    instances: int = 30,
    prefixes: int = 800,
    next_hops: int = 3,
    slots: int = 200,
    seed: int = 0,
    time_limit_s: float | None = 60.0,
) -> SolverBenchResult:
    if objective_set not in OBJECTIVE_SETS:
        raise ValueError(f"unknown objective set {objective_set!r}; choose from {', '.join(OBJECTIVE_SETS)}")
    _check_positive(instances=instances)
    runtimes, proven = [], []
    for i in range(instances):
        inp = solver_instance(seed * 100_003 + i, OBJECTIVE_SETS[objective_set], prefixes, next_hops, slots)
        started = time.perf_counter()
        res = solve(inp, time_limit=time_limit_s)
        runtimes.append(time.perf_counter() - started)
        proven.append(res.proven_optimal)
    return SolverBenchResult(objective_set, runtimes, proven)
