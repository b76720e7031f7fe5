"""Constant-rate TCP-like senders as generator coroutines.

A flow process yields ``(packet, droppable)`` in non-decreasing time order and
receives a :class:`SendOutcome` for each packet: whether the path delivered it
and the path's one-way delay at send time.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Generator, Mapping

from ..core import ACK, FIN, SYN, FiveTuple, PacketRecord, seq_add

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000
RTO_FLOOR_NS = 200 * NS_PER_MS


@dataclass(frozen=True)
class FlowSpec:
    packets: int
    payload_bytes: int = 1000
    pkt_rate_per_s: float = 100.0

    @property
    def interval_ns(self) -> int:
        return max(1, round(NS_PER_S / self.pkt_rate_per_s))


@dataclass(frozen=True, slots=True)
class SendOutcome:
    delivered: bool
    one_way_ns: int


def rto_ns(rtt_ns: int) -> int:
    return max(RTO_FLOOR_NS, 3 * rtt_ns)


FlowProcess = Generator[tuple[PacketRecord, bool], SendOutcome, None]


def tcp_flow_process(spec: FlowSpec, flow: FiveTuple, prefix_id: str, start_ns: int, isn: int) -> FlowProcess:
    """SYN (retried after RTO when lost), handshake ACK one RTT later, `packets` payload
    packets at a constant rate, one retransmission per lost payload packet after RTO,
    then FIN once everything was delivered. Retransmissions are never dropped."""
    t = start_ns
    while True:
        out = yield PacketRecord(flow, t, SYN, isn, 0, prefix_id), True
        rtt = 2 * out.one_way_ns
        rto = rto_ns(rtt)
        if out.delivered:
            break
        t += rto
    t += rtt
    seq = seq_add(isn, 1)
    yield PacketRecord(flow, t, ACK, seq, 0, prefix_id), False
    step = spec.interval_ns
    size = spec.payload_bytes
    retx: list[tuple[int, int]] = []  # (due ns, seq)
    next_new = t + step
    sent = 0
    last = t
    while sent < spec.packets or retx:
        if retx and (sent >= spec.packets or retx[0][0] <= next_new):
            due, rseq = heapq.heappop(retx)
            last = max(last, due)
            yield PacketRecord(flow, last, ACK, rseq, size, prefix_id), False
            continue
        last = next_new
        out = yield PacketRecord(flow, last, ACK, seq, size, prefix_id), True
        if not out.delivered:
            heapq.heappush(retx, (last + rto, seq))
        seq = seq_add(seq, size)
        sent += 1
        next_new += step
    yield PacketRecord(flow, last + step, FIN | ACK, seq, 0, prefix_id), False


def sample_packets(spec, rng: random.Random) -> int:
    """Packets per flow: a fixed count, or a {'dist': ..., 'mean': ...} mapping."""
    if not isinstance(spec, Mapping):
        return int(spec)
    dist = spec.get("dist", "fixed")
    mean = float(spec.get("mean", 10))
    lo = int(spec.get("min", 1))
    hi = int(spec.get("max", 10**6))
    if dist == "fixed":
        n = round(mean)
    elif dist == "geometric":
        p = 1.0 / mean
        n = 1
        while rng.random() > p:
            n += 1
    else:
        shape = float(spec.get("shape", 1.5))
        xm = mean * (shape - 1) / shape
        n = round(xm * rng.paretovariate(shape))
    return max(lo, min(hi, n))


class TupleAllocator:
    """Draws fresh 5-tuples per prefix; a tuple is not reused while its flow is live."""

    def __init__(self, rng: random.Random, prefix_ids: list[str]):
        self.rng = rng
        self.dst = {p: (198 << 24) | (18 << 16) | (i << 4) | 1 for i, p in enumerate(prefix_ids)}
        self.live: set[FiveTuple] = set()

    def draw(self, prefix_id: str) -> FiveTuple:
        rng = self.rng
        while True:
            ft = FiveTuple((10 << 24) | rng.getrandbits(20), self.dst[prefix_id], rng.randint(1024, 65535), 443)
            if ft not in self.live:
                self.live.add(ft)
                return ft

    def release(self, ft: FiveTuple) -> None:
        self.live.discard(ft)
