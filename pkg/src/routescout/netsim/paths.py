"""Per-(prefix, next-hop) delay/loss schedules and per-next-hop congestion drops."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .scenario import EventSpec, Scenario

NS_PER_S = 1_000_000_000


class InjectError(ValueError):
    pass


@dataclass
class Schedule:
    """Piecewise-constant value over time: value changes only at the listed times."""

    times: list[int] = field(default_factory=list)  # ns, ascending; times[0] == 0
    values: list[float] = field(default_factory=list)

    def at(self, t_ns: int) -> float:
        return self.values[bisect.bisect_right(self.times, t_ns) - 1]

    def set_from(self, t_ns: int, value: float) -> None:
        """Value from t onward; later breakpoints are superseded."""
        i = bisect.bisect_left(self.times, t_ns)
        del self.times[i:], self.values[i:]
        self.times.append(t_ns)
        self.values.append(value)


class PathModel:
    def __init__(self, scenario: Scenario):
        self.delay: dict[tuple[str, str], Schedule] = {}
        self.loss: dict[tuple[str, str], Schedule] = {}
        for p in scenario.paths:
            self.delay[(p.prefix, p.next_hop)] = Schedule([0], [p.delay_ms])
            self.loss[(p.prefix, p.next_hop)] = Schedule([0], [p.loss])
        self.capacity_pps = {n: v["capacity_pps"] for n, v in scenario.next_hops.items()}
        self.now_ns = 0

    def delay_ms(self, pair: tuple[str, str], t_ns: int) -> float:
        return self.delay[pair].at(t_ns)

    def loss_rate(self, pair: tuple[str, str], t_ns: int) -> float:
        return self.loss[pair].at(t_ns)

    def pairs_for(self, ev: EventSpec) -> list[tuple[str, str]]:
        return [pr for pr in self.delay if (ev.prefix is None or pr[0] == ev.prefix) and (ev.next_hop is None or pr[1] == ev.next_hop)]

    def inject(self, ev: EventSpec) -> list[tuple[str, str]]:
        """Amend the schedules of every matching path from the event time on."""
        t = round(ev.at_s * NS_PER_S)
        if t < self.now_ns:
            raise InjectError(f"event at {ev.at_s}s is in the past (now {self.now_ns / NS_PER_S}s)")
        hit = self.pairs_for(ev)
        for pr in hit:
            if ev.loss is not None:
                self.loss[pr].set_from(t, ev.loss)
            if ev.delay_ms is not None:
                self.delay[pr].set_from(t, ev.delay_ms)
            elif ev.delay_scale is not None:
                self.delay[pr].set_from(t, self.delay[pr].at(t) * ev.delay_scale)
        return hit

    def advance(self, t_ns: int) -> None:
        self.now_ns = max(self.now_ns, t_ns)


class CongestionModel:
    """Drops a uniform random share of packets on a next-hop whose offered rate in the
    previous bin exceeded its capacity; no queueing delay is modelled."""

    def __init__(self, capacity_pps: dict[str, float | None], bin_ns: int = NS_PER_S // 10):
        self.capacity = capacity_pps
        self.bin_ns = bin_ns
        self.bin = 0
        self.count: dict[str, int] = {n: 0 for n in capacity_pps}
        self.drop_p: dict[str, float] = {n: 0.0 for n in capacity_pps}

    def offer(self, hop: str, t_ns: int) -> float:
        """Register one packet on `hop`; returns the current drop probability for it."""
        b = t_ns // self.bin_ns
        if b != self.bin:
            secs = self.bin_ns / NS_PER_S
            for n, cap in self.capacity.items():
                if cap is None:
                    continue
                # a skipped bin means nothing was offered in the previous one
                rate = self.count[n] / secs if b == self.bin + 1 else 0.0
                self.drop_p[n] = max(0.0, 1.0 - cap / rate) if rate > cap else 0.0
            self.count = dict.fromkeys(self.count, 0)
            self.bin = b
        self.count[hop] = self.count.get(hop, 0) + 1
        return self.drop_p.get(hop, 0.0)
