"""Staged packet-pipeline emulation with mechanical access-constraint checks.

A pass visits stages in increasing order. Every memory chunk lives in exactly
one stage and may be touched at most once per pass. Work that needs a second
touch must recirculate the packet, bounded by a per-packet pass budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Literal, Sequence

AccessKind = Literal["read", "write", "rmw"]


class PipelineViolation(RuntimeError):
    def __init__(self, packet: object, stage: int | None, chunk: Hashable, reason: str):
        self.packet = packet
        self.stage = stage
        self.chunk = chunk
        self.reason = reason
        super().__init__(f"packet={packet} stage={stage} chunk={chunk}: {reason}")

    def diagnostic(self) -> str:
        return f"VIOLATION packet={self.packet} stage={self.stage} chunk={self.chunk} reason={self.reason}"


@dataclass
class StagePlan:
    """Ordered stages, each owning a set of chunk names."""

    stages: list[list[Hashable]]
    chunk_stage: dict[Hashable, int] = field(init=False)

    def __post_init__(self) -> None:
        self.chunk_stage = {}
        for i, chunks in enumerate(self.stages):
            for c in chunks:
                if c in self.chunk_stage:
                    raise ValueError(f"chunk {c!r} assigned to stages {self.chunk_stage[c]} and {i}")
                self.chunk_stage[c] = i

    @classmethod
    def from_groups(cls, groups: Iterable[Sequence[Hashable]]) -> "StagePlan":
        return cls([list(g) for g in groups])


@dataclass
class AccessLog:
    """Accesses made by one packet during the current pass."""

    packet: object = None
    touched: set = field(default_factory=set)
    last_stage: int = -1
    entries: list[tuple[int, Hashable, int, str]] = field(default_factory=list)

    def reset(self, packet: object = None) -> None:
        self.packet = packet
        self.touched.clear()
        self.last_stage = -1
        self.entries.clear()


def check_access(log: AccessLog, stage: int, chunk: Hashable, index: int, kind: AccessKind) -> bool:
    if stage < log.last_stage:
        raise PipelineViolation(log.packet, stage, chunk, f"stage {stage} visited after stage {log.last_stage}")
    if chunk in log.touched:
        raise PipelineViolation(log.packet, stage, chunk, f"second {kind} of chunk in one pass (index {index})")
    log.touched.add(chunk)
    log.last_stage = stage
    log.entries.append((stage, chunk, index, kind))
    return True


@dataclass
class RecirculationBudget:
    max_passes: int = 2
    packets: int = 0
    recirculations: int = 0


class Pipeline:
    """Per-packet sequential pipeline: a packet and its recirculations finish before the next packet."""

    def __init__(self, plan: StagePlan, max_passes: int = 2, checked: bool = True):
        self.plan = plan
        self.checked = checked
        self.budget = RecirculationBudget(max_passes=max_passes)
        self.log = AccessLog()
        self.violations: list[str] = []
        self._passes = 0

    @property
    def recirculations(self) -> int:
        return self.budget.recirculations

    @property
    def packets(self) -> int:
        return self.budget.packets

    def begin(self, packet: object = None) -> None:
        self.budget.packets += 1
        self._passes = 1
        if self.checked:
            self.log.reset(packet)

    def access(self, chunk: Hashable, index: int, kind: AccessKind) -> None:
        if not self.checked:
            return
        stage = self.plan.chunk_stage.get(chunk)
        if stage is None:
            self._fail(PipelineViolation(self.log.packet, None, chunk, "chunk not placed in any stage"))
        try:
            check_access(self.log, stage, chunk, index, kind)
        except PipelineViolation as exc:
            self._fail(exc)

    def recirculate(self) -> None:
        """Send the current packet back to stage 0 for another pass."""
        if self._passes >= self.budget.max_passes:
            self._fail(PipelineViolation(self.log.packet, None, None, f"recirculation budget of {self.budget.max_passes} passes exceeded"))
        self._passes += 1
        self.budget.recirculations += 1
        if self.checked:
            self.log.reset(self.log.packet)

    def _fail(self, exc: PipelineViolation) -> None:
        self.violations.append(exc.diagnostic())
        raise exc

    def reset_counters(self) -> None:
        self.budget.packets = 0
        self.budget.recirculations = 0
        self.violations.clear()
