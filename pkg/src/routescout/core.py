"""Shared types: flows, packets, the seeded hash family, 16-bit timestamps, trace I/O."""
from __future__ import annotations

import enum
import hashlib
import ipaddress
import struct
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

TCP = 6
MASK64 = (1 << 64) - 1
TS16_MOD = 1 << 16
NS_PER_MS = 1_000_000


class UsageError(ValueError):
    pass


class TraceError(ValueError):
    """Malformed packet-record input. Carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class FiveTuple(NamedTuple):
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    protocol: int = TCP

    def key(self) -> bytes:
        return struct.pack("!IIHHB", *self)

    def __str__(self) -> str:
        return (
            f"{ipaddress.IPv4Address(self.src_addr)}:{self.src_port}->"
            f"{ipaddress.IPv4Address(self.dst_addr)}:{self.dst_port}/{self.protocol}"
        )


class Flag(enum.IntFlag):
    NONE = 0
    SYN = 1
    ACK = 2
    FIN = 4
    RST = 8


# plain-int aliases; packet records carry ints so hot paths avoid enum arithmetic
SYN, ACK, FIN, RST = int(Flag.SYN), int(Flag.ACK), int(Flag.FIN), int(Flag.RST)

_FLAG_CHARS = (("S", SYN), ("A", ACK), ("F", FIN), ("R", RST))


def flags_to_str(flags: int) -> str:
    return "".join(c for c, f in _FLAG_CHARS if flags & f)


def flags_from_str(text: str) -> int:
    flags = 0
    for ch in text:
        for c, f in _FLAG_CHARS:
            if ch == c:
                flags |= f
                break
        else:
            raise ValueError(f"unknown flag {ch!r}")
    return flags


@dataclass(frozen=True, slots=True)
class PacketRecord:
    flow: FiveTuple
    ts: int  # simulated time, ns
    flags: int  # bitwise OR of SYN/ACK/FIN/RST
    seq: int
    payload_len: int
    prefix_id: str

    @property
    def is_syn(self) -> bool:
        return self.flags & (SYN | ACK) == SYN

    @property
    def is_terminal(self) -> bool:
        return bool(self.flags & (FIN | RST))


# -- hashing -----------------------------------------------------------------

def mix64(z: int) -> int:
    """splitmix64 finalizer; bijective on 64-bit ints."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def digest64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class HashFamily:
    """k seeded hash functions over byte strings.

    Each input is digested once to 64 bits; hash i then mixes that digest with
    seed i, so evaluating all k functions costs one digest plus k mixes.
    """

    __slots__ = ("k", "seeds")

    def __init__(self, k: int, seed: int = 0, seeds: Sequence[int] | None = None):
        if seeds is not None:
            if len(seeds) != k:
                raise UsageError(f"expected {k} seeds, got {len(seeds)}")
            self.seeds = tuple(int(s) & MASK64 for s in seeds)
        else:
            if k < 1:
                raise UsageError("k must be >= 1")
            state = seed & MASK64
            out = []
            for _ in range(k):
                state = (state + 0x9E3779B97F4A7C15) & MASK64
                out.append(mix64(state))
            self.seeds = tuple(out)
        self.k = k

    def index(self, i: int, data: bytes, m: int) -> int:
        if not 0 <= i < self.k:
            raise UsageError(f"hash slot {i} out of range for k={self.k}")
        if m <= 0:
            raise UsageError("table size must be positive")
        return mix64(digest64(data) ^ self.seeds[i]) % m

    def indexes(self, data: bytes, m: int) -> list[int]:
        base = digest64(data)
        return [mix64(base ^ s) % m for s in self.seeds]

    def __repr__(self) -> str:
        return f"HashFamily(k={self.k}, seeds={self.seeds})"


def hash_index(h: HashFamily, i: int, data: bytes, m: int) -> int:
    return h.index(i, data, m)


def fingerprint(flow: FiveTuple, seq: int) -> bytes:
    """<5-tuple, seq> key used by the loss monitor."""
    return flow.key() + struct.pack("!I", seq & 0xFFFFFFFF)


# -- 16-bit millisecond timestamps ---------------------------------------------

def ts16(now_ns: int) -> int:
    return (now_ns // NS_PER_MS) % TS16_MOD


def delay16(start: int, end: int) -> int:
    """Elapsed ms between two truncated timestamps; exact below 65,536 ms."""
    return (end - start) % TS16_MOD


def seq_add(seq: int, n: int) -> int:
    return (seq + n) & 0xFFFFFFFF


# -- packet-record trace format ----------------------------------------------

FIELDS = ("ts_ns", "src_addr", "dst_addr", "src_port", "dst_port", "flags", "seq", "payload_len", "prefix_id")


def _parse_addr(text: str) -> int:
    text = text.strip()
    if text.isdigit():
        value = int(text)
        if value >= 1 << 32:
            raise ValueError("address out of 32-bit range")
        return value
    return int(ipaddress.IPv4Address(text))


def _parse_uint(text: str, bits: int) -> int:
    value = int(text.strip())
    if not 0 <= value < (1 << bits):
        raise ValueError(f"out of {bits}-bit range")
    return value


def _parse_prefix(text: str) -> str:
    text = text.strip()
    if not text:
        raise ValueError("empty prefix id")
    return text


def parse_record(line: str, lineno: int | None = None) -> PacketRecord:
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != len(FIELDS):
        raise TraceError(f"expected {len(FIELDS)} fields, got {len(parts)}", lineno, None)
    values = dict(zip(FIELDS, parts))
    parsers = {
        "ts_ns": lambda s: _parse_uint(s, 63),
        "src_addr": _parse_addr,
        "dst_addr": _parse_addr,
        "src_port": lambda s: _parse_uint(s, 16),
        "dst_port": lambda s: _parse_uint(s, 16),
        "flags": lambda s: flags_from_str(s.strip().upper()),
        "seq": lambda s: _parse_uint(s, 32),
        "payload_len": lambda s: _parse_uint(s, 32),
        "prefix_id": _parse_prefix,
    }
    parsed = {}
    for name in FIELDS:
        try:
            parsed[name] = parsers[name](values[name])
        except ValueError as exc:
            raise TraceError(f"bad {name} {values[name]!r}: {exc}", lineno, name) from None
    flags = parsed["flags"]
    if flags & SYN and parsed["payload_len"] != 0:
        raise TraceError("SYN must carry no payload", lineno, "payload_len")
    return PacketRecord(
        flow=FiveTuple(parsed["src_addr"], parsed["dst_addr"], parsed["src_port"], parsed["dst_port"], TCP),
        ts=parsed["ts_ns"],
        flags=flags,
        seq=parsed["seq"],
        payload_len=parsed["payload_len"],
        prefix_id=parsed["prefix_id"],
    )


def format_record(pkt: PacketRecord) -> str:
    f = pkt.flow
    return ",".join(
        (
            str(pkt.ts),
            str(ipaddress.IPv4Address(f.src_addr)),
            str(ipaddress.IPv4Address(f.dst_addr)),
            str(f.src_port),
            str(f.dst_port),
            flags_to_str(pkt.flags),
            str(pkt.seq),
            str(pkt.payload_len),
            pkt.prefix_id,
        )
    )


def iter_trace(source: Iterable[str], prefixes: Iterable[str] | None = None) -> Iterator[PacketRecord]:
    known = set(prefixes) if prefixes is not None else None
    last_ts = -1
    for lineno, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        pkt = parse_record(line, lineno)
        if known is not None and pkt.prefix_id not in known:
            raise TraceError(f"unknown prefix {pkt.prefix_id!r}", lineno, "prefix_id")
        if pkt.ts < last_ts:
            raise TraceError(f"timestamp {pkt.ts} precedes {last_ts}", lineno, "ts_ns")
        last_ts = pkt.ts
        yield pkt


def read_trace(source: Iterable[str], prefixes: Iterable[str] | None = None) -> list[PacketRecord]:
    """Parse packet records, one per line. Blank lines and '#' comments are skipped."""
    return list(iter_trace(source, prefixes))


def write_trace(packets: Iterable[PacketRecord], out: IO[str]) -> int:
    n = 0
    for pkt in packets:
        out.write(format_record(pkt))
        out.write("\n")
        n += 1
    return n
