"""Per-(prefix, next-hop) delay and loss accumulators with snapshot-and-reset."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping

from .loss_monitor import LossClass, loss_rate


class AggregatorError(LookupError):
    pass


class EpochMismatch(AggregatorError):
    """The index map handed to a snapshot does not describe the live entries."""


@dataclass
class AggregatorEntry:
    delay_sum_ms: int = 0
    delay_count: int = 0
    expected: int = 0
    unexpected: int = 0

    def is_zero(self) -> bool:
        return not (self.delay_sum_ms or self.delay_count or self.expected or self.unexpected)


@dataclass(frozen=True)
class PairStats:
    prefix_id: str
    next_hop: str
    delay_sum_ms: int
    delay_count: int
    expected: int
    unexpected: int

    @property
    def mean_delay_ms(self) -> float | None:
        if not self.delay_count:
            return None
        return self.delay_sum_ms / self.delay_count

    @property
    def mean_delay_exact(self) -> Fraction | None:
        return Fraction(self.delay_sum_ms, self.delay_count) if self.delay_count else None

    @property
    def loss_rate(self) -> float:
        return loss_rate(self.expected, self.unexpected)

    @property
    def loss_samples(self) -> int:
        return self.expected + self.unexpected

    def report_line(self) -> str:
        mean = self.mean_delay_ms
        mean_s = "" if mean is None else f"{mean:.3f}"
        return (
            f"{self.prefix_id},{self.next_hop},{mean_s},{self.loss_rate:.6f},"
            f"{self.delay_count},{self.expected},{self.unexpected}"
        )


REPORT_HEADER = "prefix,next_hop,mean_delay_ms,loss_rate,delay_count,expected,unexpected"


def format_report(stats: Iterable[PairStats]) -> str:
    return "\n".join([REPORT_HEADER, *(s.report_line() for s in stats)]) + "\n"


def merge_stats(a: PairStats, b: PairStats) -> PairStats:
    if (a.prefix_id, a.next_hop) != (b.prefix_id, b.next_hop):
        raise ValueError("can only merge stats of the same pair")
    return PairStats(
        a.prefix_id,
        a.next_hop,
        a.delay_sum_ms + b.delay_sum_ms,
        a.delay_count + b.delay_count,
        a.expected + b.expected,
        a.unexpected + b.unexpected,
    )


class Aggregator:
    """Fixed-size array of entries addressed by aggregator index (0..size-1)."""

    def __init__(self, size: int):
        if size < 0:
            raise ValueError("size must be non-negative")
        self.entries = [AggregatorEntry() for _ in range(size)]

    def __len__(self) -> int:
        return len(self.entries)

    def _entry(self, index: int) -> AggregatorEntry:
        if not isinstance(index, int) or not 0 <= index < len(self.entries):
            raise AggregatorError(f"aggregator index {index!r} out of range [0, {len(self.entries)})")
        return self.entries[index]

    def record_delay(self, index: int, delay_ms: int) -> AggregatorEntry:
        if delay_ms < 0:
            raise ValueError("delay must be non-negative")
        e = self._entry(index)
        e.delay_sum_ms += delay_ms
        e.delay_count += 1
        return e

    def record_loss(self, index: int, kind: LossClass) -> AggregatorEntry:
        e = self._entry(index)
        if kind is LossClass.EXPECTED:
            e.expected += 1
        elif kind is LossClass.RETRANSMIT:
            e.unexpected += 1
        else:
            raise ValueError(f"cannot aggregate classification {kind}")
        return e

    def snapshot_and_reset(self, index_map: Mapping[int, tuple[Hashable, Hashable]]) -> list[PairStats]:
        """Stats for every mapped index, in index order; all entries are zeroed.

        A map that omits an index holding samples, or names an index that does
        not exist, belongs to a different epoch.
        """
        n = len(self.entries)
        for idx in index_map:
            if not isinstance(idx, int) or not 0 <= idx < n:
                raise EpochMismatch(f"index map names unknown aggregator index {idx!r}")
        for idx, e in enumerate(self.entries):
            if idx not in index_map and not e.is_zero():
                raise EpochMismatch(f"aggregator index {idx} holds samples but is missing from the index map")
        out = []
        for idx in sorted(index_map):
            e = self.entries[idx]
            prefix, hop = index_map[idx]
            out.append(PairStats(str(prefix), str(hop), e.delay_sum_ms, e.delay_count, e.expected, e.unexpected))
        self.entries = [AggregatorEntry() for _ in range(n)]
        return out

    def resize(self, size: int) -> None:
        """Start a new epoch with a different number of entries. Pending samples must be snapshotted first."""
        if any(not e.is_zero() for e in self.entries):
            raise AggregatorError("resize with unsnapshotted samples")
        self.entries = [AggregatorEntry() for _ in range(size)]
