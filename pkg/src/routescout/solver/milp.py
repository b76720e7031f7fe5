"""Lexicographic slot allocation as a sequence of mixed-integer programs (HiGHS via scipy)."""
from __future__ import annotations

import math
import time

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

from .model import (
    Allocation,
    Objective,
    Pair,
    SolverError,
    SolverInfeasible,
    SolverInput,
    check_feasible,
    evaluate,
    excluded_pairs,
    performance_costs,
    quick_infeasibility,
    stage_bound,
)


class _Program:
    """Column layout: x (one per usable pair) | m (moves aux) | U, L | y (hop indicators)."""

    def __init__(self, inp: SolverInput):
        self.inp = inp
        excl = excluded_pairs(inp)
        self.pairs: list[Pair] = [pr for pr in inp.ordered_pairs() if pr not in excl]
        prev = inp.previous or {}
        nx = len(self.pairs)
        col = {pr: j for j, pr in enumerate(self.pairs)}
        self.col = col
        self.move_cols = {}  # pair -> column of its moves aux var
        self.moves_const = 0
        for pr, v in prev.items():
            if v <= 0:
                continue
            if pr in col:
                self.move_cols[pr] = nx + len(self.move_cols)
            else:
                self.moves_const += v
        self.u_col = nx + len(self.move_cols)
        self.l_col = self.u_col + 1
        nvar = self.l_col + 1

        by_prefix: dict[str, list[int]] = {p: [] for p in inp.demands}
        by_hop: dict[str, list[int]] = {n: [] for n in inp.capacities}
        for j, (p, n) in enumerate(self.pairs):
            by_prefix[p].append(j)
            by_hop[n].append(j)
        self.y_cols: dict[int, int] = {}
        capped = [p for p, k in inp.max_nhs.items() if k < len(by_prefix[p])]
        for p in capped:
            for j in by_prefix[p]:
                self.y_cols[j] = nvar
                nvar += 1
        self.nvar = nvar

        lo = np.zeros(nvar)
        hi = np.full(nvar, np.inf)
        integrality = np.zeros(nvar)
        for j, (p, n) in enumerate(self.pairs):
            hi[j] = min(inp.demands[p], inp.capacities[n])
            integrality[j] = 1
        for pr, c in self.move_cols.items():
            hi[c] = prev[pr]
        lo[self.l_col] = -np.inf
        lo[self.u_col] = -np.inf
        for c in self.y_cols.values():
            hi[c] = 1
            integrality[c] = 1
        self.bounds = Bounds(lo, hi)
        self.integrality = integrality

        rows, cols, vals, rlo, rhi = [], [], [], [], []

        def row(entries, a, b):
            r = len(rlo)
            for c, v in entries:
                rows.append(r)
                cols.append(c)
                vals.append(v)
            rlo.append(a)
            rhi.append(b)

        for p, js in by_prefix.items():
            row([(j, 1.0) for j in js], inp.demands[p], inp.demands[p])
        for n, js in by_hop.items():
            if js:
                row([(j, 1.0) for j in js], -np.inf, inp.capacities[n])
            row([(self.u_col, 1.0)] + [(j, -1.0) for j in js], 0.0, np.inf)
            row([(self.l_col, 1.0)] + [(j, -1.0) for j in js], -np.inf, 0.0)
        for pr, c in self.move_cols.items():
            row([(c, 1.0), (col[pr], 1.0)], prev[pr], np.inf)
        for p in capped:
            js = by_prefix[p]
            for j in js:
                row([(j, 1.0), (self.y_cols[j], -float(inp.demands[p]))], -np.inf, 0.0)
            row([(self.y_cols[j], 1.0) for j in js], -np.inf, inp.max_nhs[p])
        self.rows, self.cols, self.vals, self.rlo, self.rhi = rows, cols, vals, rlo, rhi

    def coefficients(self, obj: Objective) -> tuple[np.ndarray, float]:
        c = np.zeros(self.nvar)
        if obj.kind == "performance":
            costs = performance_costs(self.inp, obj)
            for j, pr in enumerate(self.pairs):
                c[j] = costs[pr]
            return c, 0.0
        if obj.kind == "moves":
            for col in self.move_cols.values():
                c[col] = 1.0
            return c, float(self.moves_const)
        c[self.u_col] = 1.0
        c[self.l_col] = -1.0
        return c, 0.0

    def add_bound(self, c: np.ndarray, const: float, bound: float) -> None:
        r = len(self.rlo)
        for j in np.flatnonzero(c):
            self.rows.append(r)
            self.cols.append(int(j))
            self.vals.append(float(c[j]))
        self.rlo.append(-np.inf)
        self.rhi.append(bound - const)

    def _matrix(self) -> LinearConstraint:
        A = coo_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rlo), self.nvar)).tocsr()
        return LinearConstraint(A, np.array(self.rlo), np.array(self.rhi))

    def _milp(self, c, cons, bounds, integrality, time_limit):
        options = {"mip_rel_gap": 0.0, "presolve": True}
        if time_limit is not None:
            options["time_limit"] = time_limit
        return milp(c, constraints=cons, integrality=integrality, bounds=bounds, options=options)

    def solve(self, c: np.ndarray, integral: bool, time_limit: float | None):
        """Exact stage solve.

        The constraint matrix is a transportation network plus a few side rows
        (stage bounds, indicators), so the LP optimum is nearly integral. Fix every
        prefix whose LP values are already integral and solve the small residual
        MIP; when the residual optimum meets the LP bound (rounded up for integral
        objectives) it is optimal for the full problem. Otherwise fall back to the
        full MIP.
        """
        cons = self._matrix()
        lp = self._milp(c, cons, self.bounds, np.zeros(self.nvar), time_limit)
        if lp.status != 0 or lp.x is None:
            return self._milp(c, cons, self.bounds, self.integrality, time_limit)
        x = lp.x
        frac = np.abs(x - np.round(x)) > 1e-6
        frac &= self.integrality > 0
        if not frac.any():
            return lp
        free_prefix = {self.pairs[j][0] for j in np.flatnonzero(frac[: len(self.pairs)])}
        free_prefix |= {self.pairs[j][0] for j, col in self.y_cols.items() if frac[col]}
        lo, hi = self.bounds.lb.copy(), self.bounds.ub.copy()
        for j, (p, _) in enumerate(self.pairs):
            if p not in free_prefix:
                v = round(x[j])
                lo[j] = hi[j] = v
                if j in self.y_cols:
                    yv = round(x[self.y_cols[j]]) if v == 0 else 1
                    lo[self.y_cols[j]] = hi[self.y_cols[j]] = yv
        sub = self._milp(c, cons, Bounds(lo, hi), self.integrality, time_limit)
        if sub.status == 0 and sub.x is not None:
            target = math.ceil(lp.fun - 1e-6) if integral else lp.fun + 1e-9 * max(1.0, abs(lp.fun))
            if sub.fun <= target + 1e-9:
                return sub
        return self._milp(c, cons, self.bounds, self.integrality, time_limit)

    def lexmin(self, x: np.ndarray, time_limit: float | None) -> np.ndarray:
        """Among solutions meeting every bound so far, the lexicographically smallest
        allocation in (prefix, next-hop) order: minimize each pair in turn and fix it."""
        lo, hi = self.bounds.lb.copy(), self.bounds.ub.copy()
        cons = self._matrix()
        open_in_prefix: dict[str, int] = {}
        for p, _ in self.pairs:
            open_in_prefix[p] = open_in_prefix.get(p, 0) + 1
        for j, (p, _) in enumerate(self.pairs):
            open_in_prefix[p] -= 1
            # already at its floor, or the last open pair of its prefix (forced by demand)
            if round(x[j]) > lo[j] and open_in_prefix[p] > 0:
                c = np.zeros(self.nvar)
                c[j] = 1.0
                res = self._milp(c, cons, Bounds(lo, hi), self.integrality, time_limit)
                if res.status == 0 and res.x is not None:
                    x = res.x
            lo[j] = hi[j] = round(x[j])
        return x

    def allocation(self, x: np.ndarray) -> dict[Pair, int]:
        return {pr: int(round(x[j])) for j, pr in enumerate(self.pairs)}


LEXMIN_MAX_PAIRS = 64


def solve(
    inp: SolverInput, time_limit: float | None = None, tie_break_moves: bool = True, canonical: bool | None = None
) -> Allocation:
    """Optimize the objectives in priority order; each optimized objective is then held
    within its tolerance while the later ones are optimized.

    With `canonical` (default: instances of at most LEXMIN_MAX_PAIRS usable pairs) the
    remaining ties are broken towards the lexicographically smallest allocation, which
    costs one extra MIP per undecided pair. Larger instances return the last stage's
    optimum as found.
    """
    t0 = time.perf_counter()
    reasons = quick_infeasibility(inp)
    if reasons:
        raise SolverInfeasible(reasons)
    prog = _Program(inp)
    if canonical is None:
        canonical = len(prog.pairs) <= LEXMIN_MAX_PAIRS
    stages = list(inp.objectives)
    if tie_break_moves and inp.previous and all(o.kind != "moves" for o in stages):
        stages.append(Objective("moves"))
    if not stages:
        stages = [Objective("imbalance")]  # any feasible point; imbalance keeps it deterministic
    alloc: dict[Pair, int] | None = None
    optima = []
    proven = True
    for i, obj in enumerate(stages):
        c, const = prog.coefficients(obj)
        res = prog.solve(c, obj.integral, time_limit)
        if res.status == 2 or res.x is None and res.status != 1:
            if i == 0:
                raise SolverInfeasible(["no allocation meets demand, capacity and max_nhs together (proven by the MILP)"])
            raise SolverError(f"stage {i} ({obj.label()}) infeasible after earlier bounds: {res.message}")
        if res.x is None:
            raise SolverError(f"stage {i} ({obj.label()}) hit the time limit without a solution")
        proven &= res.status == 0
        x = res.x
        alloc = prog.allocation(x)
        v = evaluate(inp, alloc, obj)
        optima.append(v)
        if i < len(stages) - 1 or canonical:
            prog.add_bound(c, const, stage_bound(v, obj.tol, obj.integral))
    if canonical:
        alloc = prog.allocation(prog.lexmin(x, time_limit))
    problems = check_feasible(inp, alloc)
    if problems:
        raise SolverError("solver returned an infeasible allocation: " + "; ".join(problems))
    # report the final allocation's objective vector, which respects every stage bound
    final = tuple(evaluate(inp, alloc, o) for o in inp.objectives)
    labels = tuple(o.label() for o in inp.objectives)
    return Allocation(alloc, final, labels, time.perf_counter() - t0, tuple(optima[: len(inp.objectives)]), proven)
