"""Slot-by-slot transition between allocations, and the guard that pauses a shift."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

from ..aggregator import PairStats
from .model import Pair, SolverError


class SlotMove(NamedTuple):
    prefix: str
    src: str
    dst: str


class PlanDeadlock(SolverError):
    """No single-slot move keeps every next-hop within capacity (e.g. a swap between two full next-hops)."""


def _loads(alloc: Mapping[Pair, int]) -> dict[str, int]:
    out: dict[str, int] = {}
    for (_, n), c in alloc.items():
        out[n] = out.get(n, 0) + c
    return out


def apply_move(alloc: dict[Pair, int], move: SlotMove) -> None:
    src = (move.prefix, move.src)
    if alloc.get(src, 0) <= 0:
        raise SolverError(f"move {move} takes a slot from an empty pair")
    alloc[src] -= 1
    dst = (move.prefix, move.dst)
    alloc[dst] = alloc.get(dst, 0) + 1


def plan_moves(
    old: Mapping[Pair, int],
    new: Mapping[Pair, int],
    capacities: Mapping[str, int] | None = None,
    max_states: int = 200_000,
) -> list[SlotMove]:
    """Order single-slot moves from `old` to `new` so every intermediate state respects capacity.

    Only moves from a pair above its target to a pair of the same prefix below
    its target are used, so the plan has the minimum length. Without explicit
    capacities each next-hop may hold max(old load, new load).

    Depth-first search over states; moves that free room on a full next-hop some
    pending move is waiting for go first, which in practice needs no backtracking.
    Raises PlanDeadlock when no order exists (or the search exceeds `max_states`).
    """
    if capacities is None:
        lo, ln = _loads(old), _loads(new)
        capacities = {n: max(lo.get(n, 0), ln.get(n, 0)) for n in set(lo) | set(ln)}
    prefixes: dict[str, None] = {}
    for p, _ in list(old) + list(new):
        prefixes.setdefault(p, None)
    pairs: list[Pair] = []
    groups: list[list[int]] = []
    for p in prefixes:
        hops = sorted({n for q, n in list(old) + list(new) if q == p})
        groups.append(list(range(len(pairs), len(pairs) + len(hops))))
        pairs += [(p, n) for n in hops]
        if sum(old.get((p, n), 0) for n in hops) != sum(new.get((p, n), 0) for n in hops):
            raise SolverError(f"prefix {p}: allocations carry different slot totals")
    cur = [old.get(pr, 0) for pr in pairs]
    goal = [new.get(pr, 0) for pr in pairs]
    hop = [n for _, n in pairs]
    load = _loads(old)
    for n, c in load.items():
        if c > capacities.get(n, 0):
            raise SolverError(f"starting allocation overloads next-hop {n}")

    def room(n: str) -> int:
        return capacities.get(n, 0) - load.get(n, 0)

    def candidates() -> list[tuple[int, int]]:
        wanted = {hop[j] for j in range(len(pairs)) if cur[j] < goal[j] and room(hop[j]) <= 0}
        out = []
        for g in groups:
            srcs = [i for i in g if cur[i] > goal[i]]
            if not srcs:
                continue
            dsts = [j for j in g if cur[j] < goal[j] and room(hop[j]) > 0]
            out += [(i, j) for i in srcs for j in dsts]
        out.sort(key=lambda m: (hop[m[0]] not in wanted, -room(hop[m[1]]), m))
        return out

    def step(i: int, j: int, sign: int) -> None:
        cur[i] -= sign
        cur[j] += sign
        load[hop[i]] -= sign
        load[hop[j]] = load.get(hop[j], 0) + sign

    remaining = sum(max(0, c - g) for c, g in zip(cur, goal))
    path: list[tuple[int, int]] = []
    stack = [candidates()]
    dead: set[tuple[int, ...]] = set()
    while len(path) < remaining:
        if not stack[-1]:
            dead.add(tuple(cur))
            stack.pop()
            if not path:
                raise PlanDeadlock(f"{remaining} slots cannot move without overloading a next-hop")
            step(*path.pop(), -1)
            continue
        i, j = stack[-1].pop(0)
        step(i, j, 1)
        if tuple(cur) in dead:
            step(i, j, -1)
            continue
        if len(dead) > max_states:
            raise PlanDeadlock(f"move ordering search gave up after {max_states} dead states")
        path.append((i, j))
        stack.append(candidates())
    return [SlotMove(pairs[i][0], hop[i], hop[j]) for i, j in path]


def replay(old: Mapping[Pair, int], moves: list[SlotMove], capacities: Mapping[str, int]) -> dict[Pair, int]:
    """Apply moves in order, checking capacity after each one."""
    alloc = dict(old)
    for mv in moves:
        apply_move(alloc, mv)
        load = _loads(alloc)
        if load.get(mv.dst, 0) > capacities.get(mv.dst, 0):
            raise SolverError(f"move {mv} overloads {mv.dst}")
    return alloc


@dataclass(frozen=True)
class GuardThresholds:
    loss_margin: float = 0.01  # absolute loss-rate increase tolerated
    delay_margin: float = 0.5  # relative mean-delay increase tolerated
    min_samples: int = 1  # fewer loss or delay samples during the shift: no verdict on that metric


def actuation_guard(during: PairStats, baseline: PairStats, thresholds: GuardThresholds = GuardThresholds()) -> str:
    """'pause' when the target pair degrades beyond the margins, else 'continue'."""
    if during.loss_samples >= thresholds.min_samples and during.loss_rate > baseline.loss_rate + thresholds.loss_margin:
        return "pause"
    mean, base = during.mean_delay_ms, baseline.mean_delay_ms
    if (
        mean is not None
        and base is not None
        and during.delay_count >= thresholds.min_samples
        and mean > base * (1 + thresholds.delay_margin)
    ):
        return "pause"
    return "continue"
