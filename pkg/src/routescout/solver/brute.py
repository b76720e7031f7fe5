"""Exhaustive lexicographic optimizer for small instances, used to validate the MILP.

Written independently of the MILP path: it recomputes cost normalization,
exclusions and objective values over every composition of every prefix's demand.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .model import Allocation, Objective, OracleRefused, Pair, SolverInfeasible, SolverInput

MAX_STATES = 10**7
CHUNK = 1 << 20


def compositions(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length `parts` summing to `total` (stars and bars)."""
    if parts == 0:
        return np.zeros((1 if total == 0 else 0, 0), dtype=np.int64)
    rows = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(total + parts - 2 - prev)
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(len(rows), parts)


def _filled(pairs: list[Pair], table: dict[Pair, float]) -> np.ndarray:
    vals = [table.get(pr) for pr in pairs]
    known = sorted(v for v in vals if v is not None)
    if known:
        mid = len(known) // 2
        prior = known[mid] if len(known) % 2 else (known[mid - 1] + known[mid]) / 2
    else:
        prior = 0.0
    return np.array([prior if v is None else float(v) for v in vals])


class _Space:
    def __init__(self, inp: SolverInput):
        hops = list(inp.capacities)
        self.hops = hops
        hop_ix = {n: i for i, n in enumerate(hops)}
        adm = set(inp.admissible)
        pairs = [(p, n) for p in inp.demands for n in hops if (p, n) in adm]
        self.pairs = pairs
        loss = _filled(pairs, inp.loss)
        delay = _filled(pairs, inp.delay)
        self.loss_n = loss / loss.max() if len(pairs) and loss.max() > 0 else np.zeros(len(pairs))
        self.delay_n = delay / delay.max() if len(pairs) and delay.max() > 0 else np.zeros(len(pairs))
        usable = []
        for i, (p, n) in enumerate(pairs):
            bad = (p in inp.max_loss and loss[i] > inp.max_loss[p]) or (p in inp.max_delay and delay[i] > inp.max_delay[p])
            usable.append(not bad)
        prev = inp.previous or {}
        self.prev_outside = sum(v for pr, v in prev.items() if pr not in adm)
        self.prefix_parts = []  # (pair positions, hop indexes, feasible compositions)
        self.states = 1
        for p, d in inp.demands.items():
            pos = [i for i, (q, _) in enumerate(pairs) if q == p and usable[i]]
            comps = compositions(d, len(pos))
            if p in inp.max_nhs and len(comps):
                comps = comps[(comps > 0).sum(axis=1) <= inp.max_nhs[p]]
            self.prefix_parts.append((pos, [hop_ix[pairs[i][1]] for i in pos], comps))
            self.states *= len(comps)
        self.prev_vec = np.array([prev.get(pr, 0) for pr in pairs], dtype=np.int64)
        self.caps = np.array([inp.capacities[n] for n in hops], dtype=np.int64)


def count_states(inp: SolverInput) -> int:
    return _Space(inp).states


def brute_force_solve(inp: SolverInput, max_states: int = MAX_STATES, tie_break_moves: bool = True) -> Allocation:
    sp = _Space(inp)
    if sp.states > max_states:
        raise OracleRefused(f"{sp.states} states exceed the oracle limit of {max_states}")
    if sp.states == 0:
        raise SolverInfeasible(["some prefix has no composition over its usable next-hops"])
    shape = tuple(len(c) for _, _, c in sp.prefix_parts)
    n_pairs = len(sp.pairs)
    keep_F = []
    for start in range(0, sp.states, CHUNK):
        flat = np.arange(start, min(sp.states, start + CHUNK))
        picks = np.unravel_index(flat, shape) if shape else ()
        F = np.zeros((len(flat), n_pairs), dtype=np.int64)
        for (pos, _, comps), pick in zip(sp.prefix_parts, picks):
            if pos:
                F[:, pos] = comps[pick]
        loads = np.zeros((len(flat), len(sp.hops)), dtype=np.int64)
        for i, (_, n) in enumerate(sp.pairs):
            loads[:, sp.hops.index(n)] += F[:, i]
        ok = (loads <= sp.caps).all(axis=1)
        keep_F.append(F[ok])
    F = np.concatenate(keep_F) if keep_F else np.zeros((0, n_pairs), dtype=np.int64)
    if len(F) == 0:
        raise SolverInfeasible(["no composition of demands fits next-hop capacities"])

    loads = np.zeros((len(F), len(sp.hops)), dtype=np.int64)
    for i, (_, n) in enumerate(sp.pairs):
        loads[:, sp.hops.index(n)] += F[:, i]
    moves = np.maximum(sp.prev_vec - F, 0).sum(axis=1) + sp.prev_outside
    imbalance = loads.max(axis=1) - loads.min(axis=1) if len(sp.hops) else np.zeros(len(F), dtype=np.int64)

    def values(obj) -> np.ndarray:
        if obj.kind == "performance":
            cost = obj.w_loss * sp.loss_n + obj.w_delay * sp.delay_n
            return (F * cost).sum(axis=1)
        return (moves if obj.kind == "moves" else imbalance).astype(float)

    stages = list(inp.objectives)
    if tie_break_moves and inp.previous and all(o.kind != "moves" for o in stages):
        stages.append(Objective("moves"))
    alive = np.ones(len(F), dtype=bool)
    optima = []
    for obj in stages:
        v_all = values(obj)
        best = v_all[alive].min()
        optima.append(float(best) if obj.kind == "performance" else int(best))
        limit = best * (1 + obj.tol) if best != 0 else obj.tol
        limit += 1e-9 * max(1.0, abs(best))
        if obj.kind != "performance":
            limit = math.floor(limit)
        alive &= v_all <= limit
    cand = F[alive]
    # lexicographically smallest F in (prefix, next-hop) order
    order = np.lexsort(cand.T[::-1]) if n_pairs else np.array([0])
    chosen = cand[order[0]]
    slots = {pr: int(c) for pr, c in zip(sp.pairs, chosen)}
    i = np.flatnonzero(alive)[order[0]]
    vec = tuple(float(values(o)[i]) if o.kind == "performance" else int(values(o)[i]) for o in inp.objectives)
    return Allocation(slots, vec, tuple(o.label() for o in inp.objectives), 0.0, tuple(optima[: len(inp.objectives)]))
