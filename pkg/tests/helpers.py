"""Workload builders shared by the monitor tests."""
import random

from routescout.core import ACK, FIN, SYN, FiveTuple, PacketRecord, seq_add

MS = 1_000_000


def random_flow(rng: random.Random) -> FiveTuple:
    return FiveTuple((10 << 24) | rng.getrandbits(22), (93 << 24) | rng.getrandbits(24), rng.randint(1024, 65535), 443)


def find_flow(indexes_of, want, rng=None, tries=10**6):
    """Pre-image search: a flow whose index list satisfies `want`."""
    rng = rng or random.Random(0)
    for _ in range(tries):
        f = random_flow(rng)
        if want(indexes_of(f)):
            return f
    raise AssertionError("no flow found")


def clean_stream(flow, start_ns, isn, n, size=1000, step_ns=MS, fin=True, prefix="p"):
    """Handshake, n in-order payload packets, optional FIN."""
    pkts = [PacketRecord(flow, start_ns, SYN, isn, 0, prefix)]
    seq = seq_add(isn, 1)
    t = start_ns + 20 * MS
    pkts.append(PacketRecord(flow, t, ACK, seq, 0, prefix))
    for _ in range(n):
        t += step_ns
        pkts.append(PacketRecord(flow, t, ACK, seq, size, prefix))
        seq = seq_add(seq, size)
    if fin:
        pkts.append(PacketRecord(flow, t + step_ns, FIN | ACK, seq, 0, prefix))
    return pkts


def interleave(streams, rng):
    """Merge per-flow streams in a random global order that keeps each flow's order."""
    pos = [0] * len(streams)
    out = []
    live = [i for i, s in enumerate(streams) if s]
    while live:
        i = rng.choice(live)
        out.append(streams[i][pos[i]])
        pos[i] += 1
        if pos[i] == len(streams[i]):
            live.remove(i)
    return out
