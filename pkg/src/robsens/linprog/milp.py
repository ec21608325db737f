"""Best-first branch and bound over binary variables."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from ..errors import NodeLimitExceeded
from .problem import LpProblem, LpSolution, Status
from .simplex import solve_lp

INT_TOL = 1e-6
NODE_LIMIT = 10**6


@dataclass
class Relaxation:
    """Outcome of one node relaxation.

    ``values`` holds the relaxed values of the branching variables and
    ``payload`` whatever the caller wants back for the incumbent.
    """

    status: Status
    value: float = float("nan")
    values: np.ndarray | None = None
    payload: Any = None
    iterations: int = 0


@dataclass
class BranchResult:
    status: Status
    value: float
    payload: Any
    fixed: np.ndarray | None
    nodes: int
    iterations: int
    gap: float


def _fractionality(v):
    return np.minimum(v - np.floor(v), np.ceil(v) - v)


def branch_and_bound(relax: Callable[[np.ndarray], Relaxation], n_bin: int, sense: str,
                     gap_tol: float = 1e-6, node_limit: int = NODE_LIMIT, int_tol: float = INT_TOL,
                     heuristics: Callable | None = None) -> BranchResult:
    """Generic best-first search over ``n_bin`` binaries.

    ``relax(fixed)`` solves the relaxation with ``fixed[j] in {-1, 0, 1}``
    (-1 = free) and must be exact when nothing is free. Nodes are taken in
    order of their bound; the most fractional variable is branched on,
    lowest index first on ties. Rounding heuristics (nearest, ceiling and
    the optional ``heuristics(fixed, values)`` candidates) supply
    incumbents.
    """
    sign = 1.0 if sense == "min" else -1.0
    iters = 0
    incumbent = None
    inc_val = np.inf

    def consider(fixed_full):
        nonlocal incumbent, inc_val, iters
        r = relax(fixed_full)
        iters += r.iterations
        if r.status is Status.OPTIMAL and sign * r.value < inc_val - 1e-12:
            incumbent, inc_val = (r, fixed_full.copy()), sign * r.value

    root_fixed = np.full(n_bin, -1, dtype=np.int8)
    root = relax(root_fixed)
    iters += root.iterations
    if root.status is not Status.OPTIMAL:
        return BranchResult(root.status, root.value, None, None, 1, iters, 0.0)

    counter = itertools.count()
    heap = [(sign * root.value, next(counter), root_fixed, root)]
    nodes = 0
    best_bound = sign * root.value
    while heap:
        bound, _, fixed, node = heapq.heappop(heap)
        best_bound = bound
        if incumbent is not None and _closed(inc_val, bound, gap_tol):
            break
        nodes += 1
        if nodes > node_limit:
            raise NodeLimitExceeded(f"branch and bound exceeded {node_limit} nodes")
        v = node.values
        frac = _fractionality(v)
        frac[fixed >= 0] = 0.0
        if frac.max(initial=0.0) <= int_tol:
            full = fixed.copy()
            free = full < 0
            full[free] = np.round(v[free]).astype(np.int8)
            consider(full)
            continue
        if incumbent is None or nodes % 10 == 1:
            cands = []
            free = fixed < 0
            for rounded in (np.round(v), (v > int_tol).astype(float)):
                full = fixed.copy()
                full[free] = rounded[free].astype(np.int8)
                cands.append(full)
            if heuristics is not None:
                cands.extend(heuristics(fixed, v))
            for full in cands:
                consider(np.asarray(full, dtype=np.int8))
            if incumbent is not None and _closed(inc_val, bound, gap_tol):
                break
        j = int(np.argmax(frac))  # argmax picks the lowest index on ties
        for side in (0, 1):
            child_fixed = fixed.copy()
            child_fixed[j] = side
            child = relax(child_fixed)
            iters += child.iterations
            if child.status is not Status.OPTIMAL:
                continue
            cb = sign * child.value
            if incumbent is not None and cb >= inc_val - gap_tol * max(1.0, abs(inc_val)):
                continue
            heapq.heappush(heap, (cb, next(counter), child_fixed, child))
    else:
        best_bound = inc_val

    if incumbent is None:
        return BranchResult(Status.INFEASIBLE, float("nan"), None, None, nodes, iters, 0.0)
    gap = abs(inc_val - min(best_bound, inc_val)) / max(1.0, abs(inc_val))
    r, fixed = incumbent
    return BranchResult(Status.OPTIMAL, r.value, r.payload, fixed, nodes, iters, gap)


def _closed(inc_val, bound, gap_tol):
    return inc_val - bound <= gap_tol * max(1.0, abs(inc_val))


def solve_milp(problem: LpProblem, gap_tol: float = 1e-6, node_limit: int = NODE_LIMIT,
               int_tol: float = INT_TOL) -> LpSolution:
    """Optimise ``problem`` with the variables in ``problem.binary`` restricted to {0, 1}.

    Node relaxations are LPs with the fixed binaries' bounds collapsed;
    stops once the relative gap between incumbent and best open bound is
    at most ``gap_tol``.
    """
    mask = problem.binary.copy()
    if not mask.any():
        return solve_lp(problem)
    if np.any(problem.lo[mask] < 0) or np.any(problem.hi[mask] > 1):
        raise ValueError("binary variables must have bounds within [0, 1]")
    idx = np.flatnonzero(mask)

    def relax(fixed):
        lo, hi = problem.lo.copy(), problem.hi.copy()
        f = fixed >= 0
        lo[idx[f]] = np.maximum(lo[idx[f]], fixed[f])
        hi[idx[f]] = np.minimum(hi[idx[f]], fixed[f])
        if np.any(lo > hi):
            return Relaxation(Status.INFEASIBLE)
        sol = solve_lp(problem.with_bounds(lo, hi))
        if sol.status is not Status.OPTIMAL:
            return Relaxation(sol.status, sol.objective_value, iterations=sol.iterations)
        return Relaxation(Status.OPTIMAL, sol.objective_value, sol.x[idx], sol, sol.iterations)

    res = branch_and_bound(relax, idx.size, problem.sense, gap_tol, node_limit, int_tol)
    if res.status is not Status.OPTIMAL:
        return LpSolution(res.status, objective_value=res.value, iterations=res.iterations, nodes=res.nodes)
    sol = res.payload
    return LpSolution(Status.OPTIMAL, x=sol.x, objective_value=sol.objective_value,
                      iterations=res.iterations, nodes=res.nodes, gap=res.gap)
