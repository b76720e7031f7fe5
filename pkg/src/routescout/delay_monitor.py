"""Handshake delay monitor: a counting Bloom filter of outstanding SYNs paired with
XOR-sums of their 16-bit timestamps.

A SYN XORs its timestamp into k accumulator cells and bumps the matching
counters. The first ACK of the flow looks for one of its cells whose counter is
exactly 1; that cell holds the SYN timestamp alone, which gives the delay, and
the ACK then XORs the timestamp back out and decrements the counters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable

from .core import ACK, SYN, FiveTuple, HashFamily, PacketRecord, delay16, ts16
from .pipeline import Pipeline, StagePlan

COUNTER_MAX = 255  # 8-bit saturating


class MonitorError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class DelayMeasurement:
    flow: FiveTuple
    delay_ms: int
    agg_index: Hashable = None


class DelayMonitor:
    def __init__(
        self,
        m: int,
        k: int = 9,
        staged: bool = False,
        capacity: int | None = None,
        per_ip_cap: int | None = 64,
        seed: int = 0,
        checked: bool = True,
        strict: bool = False,
    ):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        if staged and m < k:
            raise ValueError("staged layout needs at least one element per chunk")
        self.m = m
        self.k = k
        self.staged = staged
        self.capacity = m if capacity is None else capacity
        self.per_ip_cap = per_ip_cap
        self.strict = strict
        self.hashes = HashFamily(k, seed=seed)
        self.chunk = m // k if staged else m
        self.pipeline = (
            Pipeline(StagePlan([[("cnt", i), ("acc", i)] for i in range(k)]), checked=checked) if staged else None
        )
        self.reset()
        self.stats = dict.fromkeys(
            ("syn_inserted", "syn_capacity_drop", "syn_ip_drop", "ack_untracked", "ack_noninvertible", "ack_recovered"), 0
        )

    @property
    def variant(self) -> str:
        return f"staged({self.k})" if self.staged else "ideal"

    @property
    def recirculations(self) -> int:
        return self.pipeline.recirculations if self.pipeline else 0

    def reset(self) -> None:
        self.counter = [0] * self.m
        self.accumulator = [0] * self.m
        self.occupancy = 0
        self.per_ip: dict[int, int] = {}

    def is_clear(self) -> bool:
        return self.occupancy == 0 and not any(self.counter) and not any(self.accumulator)

    def indexes(self, flow: FiveTuple) -> list[int]:
        if not self.staged:
            return self.hashes.indexes(flow.key(), self.m)
        c = self.chunk
        return [i * c + j for i, j in enumerate(self.hashes.indexes(flow.key(), c))]

    def metrics(self) -> dict:
        acks = self.stats["ack_recovered"] + self.stats["ack_noninvertible"]
        return {
            "variant": self.variant,
            "occupancy": self.occupancy,
            "capacity": self.capacity,
            "recirculations": self.recirculations,
            "invertibility": self.stats["ack_recovered"] / acks if acks else None,
            **self.stats,
        }

    # -- admission guard --------------------------------------------------

    def _admit(self, src: int) -> bool:
        if self.occupancy >= self.capacity:
            self.stats["syn_capacity_drop"] += 1
            return False
        if self.per_ip_cap is not None and self.per_ip.get(src, 0) >= self.per_ip_cap:
            self.stats["syn_ip_drop"] += 1
            return False
        return True

    def _admitted(self, src: int) -> None:
        self.occupancy += 1
        self.per_ip[src] = self.per_ip.get(src, 0) + 1
        self.stats["syn_inserted"] += 1

    def _released(self, src: int) -> None:
        self.occupancy -= 1
        n = self.per_ip.get(src, 0)
        if n <= 1:
            self.per_ip.pop(src, None)
        else:
            self.per_ip[src] = n - 1

    # -- packet processing --------------------------------------------------

    def observe(self, pkt: PacketRecord, now: int | None = None, agg_index: Hashable = None) -> DelayMeasurement | None:
        if self.staged:
            return self.staged_observe(pkt, now, agg_index)
        flags = pkt.flags
        t16 = ts16(pkt.ts if now is None else now)
        if flags & SYN:
            if not flags & ACK and self._admit(pkt.flow.src_addr):
                cnt, acc = self.counter, self.accumulator
                for i in self.indexes(pkt.flow):
                    acc[i] ^= t16
                    if cnt[i] < COUNTER_MAX:
                        cnt[i] += 1
                self._admitted(pkt.flow.src_addr)
            return None
        if not flags & ACK:
            return None
        idx = self.indexes(pkt.flow)
        cnt, acc = self.counter, self.accumulator
        rev = -1
        for i in idx:
            c = cnt[i]
            if c == 0:
                self.stats["ack_untracked"] += 1
                return None
            if c == 1 and rev < 0:
                rev = i
        if rev < 0:
            self.stats["ack_noninvertible"] += 1
            return None
        t_syn = acc[rev]
        for i in idx:
            self._decrement(i)
            acc[i] ^= t_syn
        self._released(pkt.flow.src_addr)
        self.stats["ack_recovered"] += 1
        return DelayMeasurement(pkt.flow, delay16(t_syn, t16), agg_index)

    def _decrement(self, i: int) -> None:
        c = self.counter[i]
        if c == 0:
            if self.strict:
                raise MonitorError(f"counter underflow at index {i}")
            return
        if c < COUNTER_MAX:
            self.counter[i] = c - 1

    def staged_observe(self, pkt: PacketRecord, now: int | None = None, agg_index: Hashable = None) -> DelayMeasurement | None:
        """One chunk per hash, one access per chunk per pass; first ACKs take a second pass."""
        flags = pkt.flags
        t16 = ts16(pkt.ts if now is None else now)
        is_syn = flags & SYN
        if is_syn and flags & ACK or not is_syn and not flags & ACK:
            return None
        pipe = self.pipeline
        cnt, acc = self.counter, self.accumulator
        idx = self.indexes(pkt.flow)
        pipe.begin(pkt.flow)
        if is_syn:
            if not self._admit(pkt.flow.src_addr):
                return None
            for stage, i in enumerate(idx):
                pipe.access(("cnt", stage), i, "rmw")
                if cnt[i] < COUNTER_MAX:
                    cnt[i] += 1
                pipe.access(("acc", stage), i, "rmw")
                acc[i] ^= t16
            self._admitted(pkt.flow.src_addr)
            return None
        # read-only pass: all counters set? which chunk is reversible?
        t_syn = None
        missing = False
        for stage, i in enumerate(idx):
            pipe.access(("cnt", stage), i, "read")
            pipe.access(("acc", stage), i, "read")
            c = cnt[i]
            if c == 0:
                missing = True
            elif c == 1 and t_syn is None:
                t_syn = acc[i]
        if missing:
            self.stats["ack_untracked"] += 1
            return None
        if t_syn is None:
            self.stats["ack_noninvertible"] += 1
            return None
        pipe.recirculate()
        for stage, i in enumerate(idx):
            pipe.access(("cnt", stage), i, "rmw")
            self._decrement(i)
            pipe.access(("acc", stage), i, "rmw")
            acc[i] ^= t_syn
        self._released(pkt.flow.src_addr)
        self.stats["ack_recovered"] += 1
        return DelayMeasurement(pkt.flow, delay16(t_syn, t16), agg_index)


@dataclass
class InvertibilityReport:
    attempted: int = 0  # first ACKs whose SYN the monitor accepted in the current epoch
    recovered: int = 0
    wrong: int = 0  # recovered delays that differ from the true SYN->ACK gap
    false_measurements: int = 0  # measurements emitted for ACKs that were not such first ACKs
    series: list[tuple[int, int, int]] | None = None  # (bin start ns, attempted, recovered)

    @property
    def invertibility(self) -> float:
        return self.recovered / self.attempted if self.attempted else 1.0


def invertibility(
    mon: DelayMonitor,
    workload: Iterable[PacketRecord],
    reset_period_ns: int | None = None,
    bin_ns: int | None = None,
) -> InvertibilityReport:
    """Replay a workload and measure the fraction of first ACKs whose delay was recovered."""
    report = InvertibilityReport(series=[] if bin_ns else None)
    pending: dict[FiveTuple, int] = {}
    next_reset = reset_period_ns
    bin_start, bin_att, bin_rec = 0, 0, 0
    for pkt in workload:
        if next_reset is not None:
            while pkt.ts >= next_reset:
                mon.reset()
                pending.clear()
                next_reset += reset_period_ns
        if bin_ns:
            while pkt.ts >= bin_start + bin_ns:
                report.series.append((bin_start, bin_att, bin_rec))
                bin_start += bin_ns
                bin_att = bin_rec = 0
        flags = pkt.flags
        if flags & SYN:
            before = mon.occupancy
            mon.observe(pkt)
            if not flags & ACK and mon.occupancy > before:
                pending[pkt.flow] = pkt.ts
            continue
        if not flags & ACK:
            continue
        syn_ts = pending.pop(pkt.flow, None)
        res = mon.observe(pkt)
        if syn_ts is None:
            if res is not None:
                report.false_measurements += 1
            continue
        report.attempted += 1
        bin_att += 1
        if res is not None:
            report.recovered += 1
            bin_rec += 1
            if res.delay_ms != delay16(ts16(syn_ts), ts16(pkt.ts)):
                report.wrong += 1
    if bin_ns:
        report.series.append((bin_start, bin_att, bin_rec))
    return report


def bloom_size(n: int, fp_rate: float) -> int:
    """Elements needed for a Bloom filter holding n items at the given false-positive rate."""
    return math.ceil(-n * math.log(fp_rate) / (math.log(2) ** 2))
