"""Discrete-event simulation of a stub AS egress with the closed sense -> solve -> actuate loop."""
from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable

from ..aggregator import Aggregator, PairStats
from ..core import FiveTuple, PacketRecord
from ..delay_monitor import DelayMonitor
from ..loss_monitor import LossClass, LossMonitor
from ..selector import RuleTable, Selector, SlotPlan, compile_rules
from ..solver import (
    Allocation,
    PlanDeadlock,
    SlotMove,
    SolverError,
    SolverInput,
    actuation_guard,
    apply_move,
    plan_moves,
    solve,
)
from .flows import NS_PER_MS, NS_PER_S, FlowSpec, SendOutcome, TupleAllocator, sample_packets, tcp_flow_process
from .paths import CongestionModel, PathModel
from .scenario import Scenario

Pair = tuple[str, str]

# same-time ordering: path changes, then monitor resets, snapshots, actuation, new flows, packets
P_INJECT, P_RESET, P_SNAPSHOT, P_TICK, P_ARRIVAL, P_PACKET = range(6)


@dataclass
class FlowTruth:
    prefix: str
    transmissions: int = 0  # payload packets put on the wire, retransmissions included
    dropped: int = 0

    @property
    def loss_rate(self) -> float:
        return self.dropped / self.transmissions if self.transmissions else 0.0


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    events: list[dict]
    intervals: list[dict]
    counters: dict
    final_allocation: dict[Pair, int]
    flow_truth: dict[FiveTuple, FlowTruth] = field(default_factory=dict)

    def slots_on(self, hop: str) -> int:
        """Slots of the final allocation forwarded to `hop`."""
        return sum(c for (_, n), c in self.final_allocation.items() if n == hop)


def _key(pair: Pair) -> str:
    return f"{pair[0]}|{pair[1]}"


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None, packet_hook: Callable | None = None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        s = self.seed
        self.rng_arrivals = random.Random(f"{s}:arrivals")
        self.rng_flows = random.Random(f"{s}:flows")
        self.rng_drops = random.Random(f"{s}:drops")
        self.packet_hook = packet_hook
        self.duration_ns = round(scenario.duration_s * NS_PER_S)
        self.interval_ns = round(scenario.control["interval_s"] * NS_PER_S)
        self.tick_ns = round(scenario.control["tick_s"] * NS_PER_S)

        self.hops = list(scenario.next_hops)
        self.admissible = scenario.admissible()
        self.pairs_of = {p: [pr for pr in self.admissible if pr[0] == p] for p in scenario.prefixes}
        self.agg_index_of = {pr: i for i, pr in enumerate(self.admissible)}
        self.index_map = {i: pr for pr, i in self.agg_index_of.items()}
        self.plan = SlotPlan(dict(scenario.prefixes))
        self.paths = PathModel(scenario)
        self.congestion = CongestionModel(self.paths.capacity_pps)
        total_slots = sum(scenario.prefixes.values())
        self.capacity_slots = {
            n: (v["capacity_slots"] if v["capacity_slots"] is not None else total_slots) for n, v in scenario.next_hops.items()
        }

        mon = scenario.monitors
        self.delay_mon = DelayMonitor(
            mon["delay_m"], mon["delay_k"], staged=mon["staged"], capacity=mon["delay_capacity"], per_ip_cap=mon["per_ip_cap"], seed=s
        )
        self.loss_mon = LossMonitor(mon["loss_m"], mon["loss_k"], staged=mon["staged"], capacity=mon["loss_capacity"], seed=s + 1)
        self.aggregator = Aggregator(len(self.admissible))

        if scenario.initial_allocation is not None:
            alloc = {pr: scenario.initial_allocation.get(pr, 0) for pr in self.admissible}
        else:
            alloc = {pr: 0 for pr in self.admissible}
            for p, prs in self.pairs_of.items():
                alloc[prs[0]] = scenario.prefixes[p]  # default route: first configured next-hop
        self.alloc: dict[Pair, int] = alloc
        self.target: dict[Pair, int] = dict(alloc)
        self.queue: list[SlotMove] = []
        self.baseline: dict[Pair, PairStats] = {}
        self.paused = False
        self._ticking = False
        self.selector = Selector(self._compile())

        self.touched: dict[Pair, int] = {}  # pair -> index of the last interval its rules changed in
        self.last_delay: dict[Pair, float] = {}
        self.last_loss: dict[Pair, float] = {}
        self.events: list[dict] = []
        self.intervals: list[dict] = []
        self.flow_truth: dict[FiveTuple, FlowTruth] = {}
        self.tuples = TupleAllocator(self.rng_flows, list(scenario.prefixes))
        self.counters = dict.fromkeys(("generated", "delivered", "dropped_path", "dropped_congestion", "in_flight", "flows_started", "flows_finished"), 0)
        self._heap: list = []
        self._seq = itertools.count()
        n_int = self.duration_ns // self.interval_ns + 2
        self._port_bytes = [dict.fromkeys(self.hops, 0) for _ in range(n_int)]
        self._port_pkts = [dict.fromkeys(self.hops, 0) for _ in range(n_int)]
        self._port_flows = [{h: set() for h in self.hops} for _ in range(n_int)]
        self._solver_runtimes: list[float] = []

    # -- rule compilation -----------------------------------------------------

    def effective_allocation(self, alloc: dict[Pair, int]) -> dict[Pair, int]:
        """Allocation actually installed: each unallocated admissible pair borrows one probe slot
        from the prefix's largest pair so it keeps being measured."""
        eff = dict(alloc)
        if not self.sc.control["probe_unallocated"]:
            return eff
        for p, prs in self.pairs_of.items():
            for pr in prs:
                if eff.get(pr, 0) == 0:
                    donor = max(prs, key=lambda q: (eff.get(q, 0), -prs.index(q)))
                    if eff[donor] > 1:
                        eff[donor] -= 1
                        eff[pr] = 1
        return eff

    def _compile(self) -> RuleTable:
        eff = self.effective_allocation(self.alloc)
        k = self.sc.control["monitor_slots_per_pair"]
        mon_plan = [(p, n, min(k, c)) for (p, n), c in eff.items() if c > 0 and k > 0]
        rules = compile_rules(self.plan, eff, mon_plan, next_hop_order=self.hops, agg_index_of=self.agg_index_of)
        self.installed = eff
        return rules.table()

    # -- scheduling ----------------------------------------------------------------

    def _push(self, t: int, prio: int, kind: str, payload=None) -> None:
        heapq.heappush(self._heap, (t, prio, next(self._seq), kind, payload))

    def _log(self, t: int, kind: str, **details) -> None:
        self.events.append({"t_ns": t, "kind": kind, **details})

    def _schedule_static(self) -> None:
        for ev in self.sc.events:
            self._push(round(ev.at_s * NS_PER_S), P_INJECT, "inject", ev)
        reset_s = self.sc.monitors["reset_s"]
        if reset_s:
            step = round(reset_s * NS_PER_S)
            t = step
            while t <= self.duration_ns:
                self._push(t, P_RESET, "reset")
                t += step
        t = self.interval_ns
        while t <= self.duration_ns:
            self._push(t, P_SNAPSHOT, "snapshot")
            t += self.interval_ns
        for gi, g in enumerate(self.sc.flows):
            start = round(g.start_s * NS_PER_S)
            if g.arrival == "batch":
                window = round(g.start_window_s * NS_PER_S)
                for _ in range(g.count):
                    self._push(start + (self.rng_arrivals.randrange(window) if window else 0), P_ARRIVAL, "arrival", gi)
            else:
                self._push(start + self._gap(g), P_ARRIVAL, "arrival_chain", gi)

    def _gap(self, g) -> int:
        if g.arrival == "deterministic":
            return round(NS_PER_S / g.rate_per_s)
        return max(1, round(self.rng_arrivals.expovariate(g.rate_per_s) * NS_PER_S))

    # -- packet path -----------------------------------------------------------------

    def _send(self, pkt: PacketRecord, droppable: bool) -> SendOutcome:
        t = pkt.ts
        hop, agg = self.selector.route(pkt.prefix_id, pkt.flow)
        pair = (pkt.prefix_id, hop)
        if agg is not None:
            m = self.delay_mon.observe(pkt, agg_index=agg)
            if m is not None:
                cap = self.sc.control["max_delay_sample_ms"]
                if cap is None or m.delay_ms <= cap:
                    self.aggregator.record_delay(agg, m.delay_ms)
            c = self.loss_mon.observe(pkt, agg)
            if c is not None and c.kind is not LossClass.UNTRACKED:
                self.aggregator.record_loss(agg, c.kind)
        one_way = round(self.paths.delay_ms(pair, t) * NS_PER_MS)
        cong_p = self.congestion.offer(hop, t)
        dropped = False
        if droppable:
            u = self.rng_drops.random()
            loss = self.paths.loss_rate(pair, t)
            if u < loss:
                dropped = True
                self.counters["dropped_path"] += 1
            elif cong_p and self.rng_drops.random() < cong_p:
                dropped = True
                self.counters["dropped_congestion"] += 1
        self.counters["generated"] += 1
        if pkt.payload_len:
            truth = self.flow_truth[pkt.flow]
            truth.transmissions += 1
            truth.dropped += dropped
        bi = t // self.interval_ns
        if bi < len(self._port_flows):
            self._port_flows[bi][hop].add(pkt.flow)
        if not dropped:
            arrive = t + one_way
            if arrive <= self.duration_ns:
                self.counters["delivered"] += 1
                ai = arrive // self.interval_ns
                self._port_bytes[ai][hop] += pkt.payload_len
                self._port_pkts[ai][hop] += 1
            else:
                self.counters["in_flight"] += 1
        if self.packet_hook is not None:
            self.packet_hook(pkt, hop, agg, dropped)
        return SendOutcome(not dropped, one_way)

    def _start_flow(self, t: int, gi: int) -> None:
        g = self.sc.flows[gi]
        flow = self.tuples.draw(g.prefix)
        n = sample_packets(g.packets, self.rng_flows)
        isn = self.rng_flows.getrandbits(32)
        proc = tcp_flow_process(FlowSpec(n, g.payload_bytes, g.pkt_rate_per_s), flow, g.prefix, t, isn)
        self.flow_truth[flow] = FlowTruth(g.prefix)
        self.counters["flows_started"] += 1
        pkt, droppable = next(proc)
        self._push(pkt.ts, P_PACKET, "packet", (proc, pkt, droppable))

    def _step_flow(self, proc, pkt: PacketRecord, droppable: bool) -> None:
        out = self._send(pkt, droppable)
        try:
            nxt, d = proc.send(out)
        except StopIteration:
            self.counters["flows_finished"] += 1
            self.tuples.release(pkt.flow)
            self.selector.forget(pkt.flow)
            return
        self._push(nxt.ts, P_PACKET, "packet", (proc, nxt, d))

    # -- control loop -------------------------------------------------------------------

    def _snapshot(self, t: int) -> None:
        stats = self.aggregator.snapshot_and_reset(self.index_map)
        by_pair = {(s.prefix_id, s.next_hop): s for s in stats}
        min_loss = self.sc.control["min_loss_samples"]
        ended = t // self.interval_ns - 1
        settle = self.sc.control["settle_intervals"]
        for pr, s in by_pair.items():
            # samples taken while the pair's rules changed mix two paths' flows and misplace retransmissions
            if pr in self.touched and ended - self.touched[pr] <= settle:
                continue
            if s.delay_count:
                self.last_delay[pr] = s.mean_delay_ms
            if s.loss_samples >= min_loss:
                self.last_loss[pr] = s.loss_rate
        guard_verdict = None
        if self.queue and self.sc.control["enabled"]:
            verdicts = {pr: actuation_guard(by_pair[pr], base, self.sc.guard) for pr, base in self.baseline.items()}
            paused = any(v == "pause" for v in verdicts.values())
            guard_verdict = "pause" if paused else "continue"
            if paused != self.paused:
                self._log(t, "guard", verdict=guard_verdict, pairs=sorted(_key(pr) for pr, v in verdicts.items() if v == "pause"))
            self.paused = paused
        solve_info = {}
        if self.sc.control["enabled"]:
            solve_info = self._solve(t, by_pair)
        bi = t // self.interval_ns - 1
        ports = {}
        secs = self.interval_ns / NS_PER_S
        for h in self.hops:
            ports[h] = {
                "flows": len(self._port_flows[bi][h]),
                "throughput_bps": self._port_bytes[bi][h] * 8 / secs,
                "delivered_pkts": self._port_pkts[bi][h],
                "slots": sum(c for (_, n), c in self.alloc.items() if n == h),
            }
        self._port_flows[bi] = None  # free the flow sets
        self.intervals.append(
            {
                "t_s": t / NS_PER_S,
                "allocation": {_key(pr): c for pr, c in self.alloc.items()},
                "installed": {_key(pr): c for pr, c in self.installed.items()},
                "target": {_key(pr): c for pr, c in self.target.items()},
                "stats": [
                    {
                        "prefix": s.prefix_id,
                        "next_hop": s.next_hop,
                        "mean_delay_ms": s.mean_delay_ms,
                        "loss_rate": s.loss_rate,
                        "delay_count": s.delay_count,
                        "expected": s.expected,
                        "unexpected": s.unexpected,
                    }
                    for s in stats
                ],
                "ports": ports,
                "guard": guard_verdict,
                "pending_moves": len(self.queue),
                **solve_info,
            }
        )

    def _solve(self, t: int, by_pair: dict[Pair, PairStats]) -> dict:
        inp = SolverInput(
            dict(self.plan.counts),
            dict(self.capacity_slots),
            list(self.admissible),
            dict(self.last_loss),
            dict(self.last_delay),
            dict(self.target),
            self.sc.objectives,
        )
        try:
            res: Allocation = solve(inp, time_limit=self.sc.control["solver_time_limit_s"])
        except SolverError as exc:
            self._log(t, "solver_error", message=str(exc))
            return {"solver_error": str(exc)}
        self._solver_runtimes.append(res.runtime_s)
        new = {pr: res.slots.get(pr, 0) for pr in self.admissible}
        info = {"solver_ms": res.runtime_s * 1000, "objective_values": list(res.objective_values), "proven_optimal": res.proven_optimal}
        if new != self.target:
            try:
                moves = plan_moves(self.alloc, new, self.capacity_slots)
            except PlanDeadlock as exc:
                self._log(t, "plan_deadlock", message=str(exc))
                return info
            self.target = new
            self.queue = moves
            self.paused = False
            self.baseline = {(mv.prefix, mv.dst): by_pair[(mv.prefix, mv.dst)] for mv in moves}
            self._log(t, "shift_start", moves=len(moves), target={_key(pr): c for pr, c in new.items() if c})
            if moves and not self._ticking:
                self._ticking = True
                self._push(t, P_TICK, "tick")
        return info

    def _tick(self, t: int) -> None:
        if not self.queue:
            self._ticking = False
            return
        if not self.paused:
            for _ in range(self.sc.control["slots_per_tick"]):
                if not self.queue:
                    break
                mv = self.queue.pop(0)
                apply_move(self.alloc, mv)
                self.touched[(mv.prefix, mv.src)] = self.touched[(mv.prefix, mv.dst)] = t // self.interval_ns
                self._log(t, "move", prefix=mv.prefix, src=mv.src, dst=mv.dst)
            self.selector.install(self._compile())
            if not self.queue:
                self._log(t, "shift_done")
                self._ticking = False
                return
        self._push(t + self.tick_ns, P_TICK, "tick")

    # -- main loop ------------------------------------------------------------------------

    def run(self) -> RunResult:
        self._schedule_static()
        heap = self._heap
        end = self.duration_ns
        while heap:
            t, _, _, kind, payload = heapq.heappop(heap)
            if t > end:
                break
            self.paths.advance(t)
            if kind == "packet":
                self._step_flow(*payload)
            elif kind == "arrival":
                self._start_flow(t, payload)
            elif kind == "arrival_chain":
                g = self.sc.flows[payload]
                stop = round(g.stop_s * NS_PER_S) if g.stop_s is not None else end
                if t <= stop:
                    self._start_flow(t, payload)
                    self._push(t + self._gap(g), P_ARRIVAL, "arrival_chain", payload)
            elif kind == "snapshot":
                self._snapshot(t)
            elif kind == "tick":
                self._tick(t)
            elif kind == "reset":
                self.delay_mon.reset()
                self.loss_mon.reset()
                self._log(t, "monitor_reset")
            elif kind == "inject":
                hit = self.paths.inject(payload)
                self._log(t, "inject", pairs=sorted(_key(p) for p in hit), loss=payload.loss, delay_ms=payload.delay_ms, delay_scale=payload.delay_scale)
        counters = dict(self.counters)
        counters["dropped"] = counters["dropped_path"] + counters["dropped_congestion"]
        counters["recirculations_delay"] = self.delay_mon.recirculations
        counters["recirculations_loss"] = self.loss_mon.recirculations
        counters["pipeline_violations"] = len(self.delay_mon.pipeline.violations if self.delay_mon.pipeline else []) + len(
            self.loss_mon.pipeline.violations if self.loss_mon.pipeline else []
        )
        counters["solver_runs"] = len(self._solver_runtimes)
        return RunResult(self.sc, self.seed, self.events, self.intervals, counters, dict(self.alloc), self.flow_truth)

def run(scenario: Scenario, seed: int | None = None, packet_hook: Callable | None = None) -> RunResult:
    return Simulation(scenario, seed, packet_hook).run()
