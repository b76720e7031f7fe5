"""Retransmission/reordering detector built on a counting Bloom filter of the next
expected <5-tuple, seq> fingerprint of every tracked flow.

Ideal variant: each payload packet probes its own fingerprint; a hit means the
packet was expected, so it removes the fingerprint and inserts its successor's.
A miss is a retransmission or an out-of-order arrival.

Staged variant: a packet may either check or insert, never both, so a second
CBF counts each flow's payload packets. Even-count packets insert the successor
fingerprint; odd-count packets optimistically remove their own and recirculate
to repair the removal when it turns out they were not expected.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable

from .core import ACK, FIN, RST, SYN, FiveTuple, HashFamily, PacketRecord, fingerprint, seq_add
from .pipeline import Pipeline, StagePlan

CBF_MAX = 15  # 4-bit saturating; saturated counters are sticky
PARITY_MAX = 0xFFFF


class LossClass(enum.Enum):
    EXPECTED = "expected"
    RETRANSMIT = "retransmit_or_ooo"
    UNTRACKED = "untracked"


@dataclass(frozen=True, slots=True)
class LossClassification:
    kind: LossClass
    agg_index: Hashable = None
    checked: bool = True  # False for staged even-count packets, which insert without checking


def loss_rate(expected: int, unexpected: int) -> float:
    total = expected + unexpected
    return unexpected / total if total else 0.0


class LossMonitor:
    def __init__(
        self,
        m: int,
        k: int = 9,
        staged: bool = False,
        capacity: int | None = None,
        seed: int = 1,
        parity_m: int | None = None,
        checked: bool = True,
    ):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        if staged and m < k:
            raise ValueError("staged layout needs at least one element per chunk")
        self.m = m
        self.k = k
        self.staged = staged
        self.capacity = capacity
        self.hashes = HashFamily(k, seed=seed)
        self.chunk = m // k if staged else m
        self.parity_m = parity_m or m
        if staged:
            self.parity_hashes = HashFamily(k, seed=seed + 0x5EED)
            self.parity_chunk = self.parity_m // k
            plan = StagePlan([[("par", i)] for i in range(k)] + [[("cbf", i)] for i in range(k)])
            self.pipeline = Pipeline(plan, checked=checked)
        else:
            self.pipeline = None
        self.counts = {c: 0 for c in LossClass}
        self.reset()

    @property
    def variant(self) -> str:
        return "staged_parity" if self.staged else "ideal"

    @property
    def recirculations(self) -> int:
        return self.pipeline.recirculations if self.pipeline else 0

    def reset(self) -> None:
        self.cbf = [0] * self.m
        self.parity = [0] * self.parity_m if self.staged else None
        self.occupancy = 0
        self.stalled = False

    def metrics(self) -> dict:
        return {
            "variant": self.variant,
            "occupancy": self.occupancy,
            "capacity": self.capacity,
            "recirculations": self.recirculations,
            **{c.value: n for c, n in self.counts.items()},
        }

    def _full(self) -> bool:
        return self.capacity is not None and self.occupancy >= self.capacity

    def cbf_indexes(self, flow: FiveTuple, seq: int) -> list[int]:
        key = fingerprint(flow, seq)
        if not self.staged:
            return self.hashes.indexes(key, self.m)
        c = self.chunk
        return [i * c + j for i, j in enumerate(self.hashes.indexes(key, c))]

    def parity_indexes(self, flow: FiveTuple) -> list[int]:
        c = self.parity_chunk
        return [i * c + j for i, j in enumerate(self.parity_hashes.indexes(flow.key(), c))]

    def contains(self, flow: FiveTuple, seq: int) -> bool:
        cbf = self.cbf
        return all(cbf[i] for i in self.cbf_indexes(flow, seq))

    def _insert(self, idx: list[int]) -> None:
        cbf = self.cbf
        for i in idx:
            if cbf[i] < CBF_MAX:
                cbf[i] += 1

    def _remove(self, idx: list[int]) -> None:
        cbf = self.cbf
        for i in idx:
            c = cbf[i]
            if 0 < c < CBF_MAX:
                cbf[i] = c - 1

    def _classify(self, kind: LossClass, agg_index: Hashable, checked: bool = True) -> LossClassification:
        self.counts[kind] += 1
        return LossClassification(kind, agg_index, checked)

    # -- ideal -------------------------------------------------------------

    def observe(self, pkt: PacketRecord, agg_index: Hashable = None) -> LossClassification | None:
        if self.staged:
            return self.staged_observe(pkt, agg_index)
        flags = pkt.flags
        if flags & SYN:
            if not flags & ACK:
                if self._full():
                    self.stalled = True
                else:
                    self._insert(self.cbf_indexes(pkt.flow, seq_add(pkt.seq, 1)))
                    self.occupancy += 1
            return None
        if flags & (FIN | RST):
            idx = self.cbf_indexes(pkt.flow, pkt.seq)
            if all(self.cbf[i] for i in idx):
                self._remove(idx)
                self.occupancy = max(0, self.occupancy - 1)
            return None
        if pkt.payload_len <= 0:
            return None
        idx = self.cbf_indexes(pkt.flow, pkt.seq)
        cbf = self.cbf
        for i in idx:
            if not cbf[i]:
                # after a stalled SYN a miss may just be an unseeded flow
                return self._classify(LossClass.UNTRACKED if self.stalled else LossClass.RETRANSMIT, agg_index)
        self._remove(idx)
        self._insert(self.cbf_indexes(pkt.flow, seq_add(pkt.seq, pkt.payload_len)))
        return self._classify(LossClass.EXPECTED, agg_index)

    # -- staged ------------------------------------------------------------

    def staged_observe(self, pkt: PacketRecord, agg_index: Hashable = None) -> LossClassification | None:
        flags = pkt.flags
        terminal = flags & (FIN | RST)
        if flags & SYN or (not terminal and pkt.payload_len <= 0):
            return None
        pipe = self.pipeline
        par = self.parity
        pidx = self.parity_indexes(pkt.flow)
        pipe.begin(pkt.flow)
        count = PARITY_MAX
        for stage, i in enumerate(pidx):
            pipe.access(("par", stage), i, "read" if terminal else "rmw")
            c = par[i]
            if c < count:
                count = c
            if not terminal and c < PARITY_MAX:
                par[i] = c + 1
        if terminal:
            return self._staged_terminal(pkt, pidx, count)

        new_flow = count == 0
        if new_flow:
            if self._full():
                self.stalled = True
                return self._classify(LossClass.UNTRACKED, agg_index, checked=False)
            self.occupancy += 1
        cbf = self.cbf
        if count % 2 == 0:
            for stage, i in enumerate(self.cbf_indexes(pkt.flow, seq_add(pkt.seq, pkt.payload_len))):
                pipe.access(("cbf", stage), i, "rmw")
                if cbf[i] < CBF_MAX:
                    cbf[i] += 1
            return self._classify(LossClass.EXPECTED, agg_index, checked=False)
        decremented, miss = self._optimistic_remove(self.cbf_indexes(pkt.flow, pkt.seq))
        if not miss:
            return self._classify(LossClass.EXPECTED, agg_index)
        self._repair(decremented)
        return self._classify(LossClass.UNTRACKED if self.stalled else LossClass.RETRANSMIT, agg_index)

    def _optimistic_remove(self, idx: list[int]) -> tuple[list[tuple[int, int]], bool]:
        pipe, cbf = self.pipeline, self.cbf
        decremented = []
        miss = False
        for stage, i in enumerate(idx):
            pipe.access(("cbf", stage), i, "rmw")
            c = cbf[i]
            if c == 0:
                miss = True
            elif c < CBF_MAX:
                cbf[i] = c - 1
                decremented.append((stage, i))
        return decremented, miss

    def _repair(self, decremented: list[tuple[int, int]]) -> None:
        pipe, cbf = self.pipeline, self.cbf
        pipe.recirculate()
        for stage, i in decremented:
            pipe.access(("cbf", stage), i, "rmw")
            cbf[i] += 1

    def _staged_terminal(self, pkt: PacketRecord, pidx: list[int], count: int) -> None:
        """FIN/RST: drop the outstanding fingerprint (odd count) and the flow's parity count.

        Both writes that depend on values read later in the pass happen on a
        recirculated second pass.
        """
        if count == 0:
            return None
        pipe, par, cbf = self.pipeline, self.parity, self.cbf
        decremented, miss = [], False
        if count % 2 == 1:
            decremented, miss = self._optimistic_remove(self.cbf_indexes(pkt.flow, pkt.seq))
        pipe.recirculate()
        for stage, i in enumerate(pidx):
            pipe.access(("par", stage), i, "rmw")
            if par[i] < PARITY_MAX:
                par[i] = max(0, par[i] - count)
        if miss:
            for stage, i in decremented:
                pipe.access(("cbf", stage), i, "rmw")
                cbf[i] += 1
        self.occupancy = max(0, self.occupancy - 1)
        return None


class ExactSequenceTracker:
    """Reference classifier with exact per-flow state: a payload packet is expected
    iff it starts at the highest sequence number seen so far for its flow."""

    def __init__(self):
        self.next_seq: dict[FiveTuple, int] = {}
        self.counts = {LossClass.EXPECTED: 0, LossClass.RETRANSMIT: 0}

    def observe(self, pkt: PacketRecord) -> LossClass | None:
        flags = pkt.flags
        if flags & SYN:
            if not flags & ACK:
                self.next_seq[pkt.flow] = seq_add(pkt.seq, 1)
            return None
        if flags & (FIN | RST):
            self.next_seq.pop(pkt.flow, None)
            return None
        if pkt.payload_len <= 0:
            return None
        expect = self.next_seq.get(pkt.flow)
        if expect is not None and pkt.seq == expect:
            self.next_seq[pkt.flow] = seq_add(pkt.seq, pkt.payload_len)
            kind = LossClass.EXPECTED
        else:
            kind = LossClass.RETRANSMIT
        self.counts[kind] += 1
        return kind
