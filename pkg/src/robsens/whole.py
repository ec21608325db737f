"""Whole-population sensitivity model.

At most a ``delta`` share of all ``n`` units may be unboundedly confounded,
so ``B = ceil(n (1 - delta))`` units must be bounded in total. The
feasible set is the union over allocations ``(l, B - l)`` of separate-group
feasible sets, so bounds are envelopes over an allocation grid.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .bounds import (RELAXED, BoundsProblem, BoundsResult, ceil_budget, check_mode, infeasible_result,
                     solve_bounds, solve_fixed)
from .errors import ConfigError, EmptyGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WholeParams:
    lam: float = 1.0
    delta: float = 0.0
    lambda_gap: float = 0.0

    def __post_init__(self):
        if not self.lam >= 1:
            raise ConfigError(f"lambda must be >= 1, got {self.lam}")
        if not 0 <= self.delta <= 1:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.lambda_gap >= 0:
            raise ConfigError(f"lambda_gap must be >= 0, got {self.lambda_gap}")

    def lambda_prime(self) -> float:
        return self.lam * math.exp(self.lambda_gap)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "delta": self.delta, "lambda_gap": self.lambda_gap}


@dataclass(frozen=True)
class AllocationGrid:
    total_budget: int
    cells: tuple

    @classmethod
    def build(cls, n1: int, n0: int, total_budget: int) -> "AllocationGrid":
        lo, hi = max(0, total_budget - n0), min(n1, total_budget)
        return cls(total_budget, tuple((l, total_budget - l) for l in range(lo, hi + 1)))

    @classmethod
    def from_delta(cls, n1: int, n0: int, delta: float) -> "AllocationGrid":
        return cls.build(n1, n0, ceil_budget(n1 + n0, delta))


def base_problem(dataset, fit, lam: float, k=None) -> BoundsProblem:
    """Boxes at ``lam`` for both arms; budgets are filled in per cell."""
    return BoundsProblem.from_fit(dataset, fit, _sep(lam), k=k, budgets=(0, 0))


def _sep(lam):
    from .bounds import SensitivityParams
    return SensitivityParams(lam, lam, 0.0, 0.0)


def envelope(base: BoundsProblem, grid: AllocationGrid, mode: str = RELAXED):
    """Solve every cell; returns ``(BoundsResult, {cell: BoundsResult})``."""
    mode = check_mode(mode)
    if not grid.cells:
        raise EmptyGrid("allocation grid is empty")
    t0 = time.perf_counter()
    per_cell = {}
    best_min = best_max = None
    for cell in grid.cells:
        r = solve_bounds(base.with_budgets(cell), mode)
        per_cell[cell] = r
        if not r.feasible:
            log.info("allocation cell %s is infeasible", cell)
            continue
        if best_min is None or r.tau_min < best_min[0]:
            best_min = (r.tau_min, r.weights_min, r.delta_min, cell)
        if best_max is None or r.tau_max > best_max[0]:
            best_max = (r.tau_max, r.weights_max, r.delta_max, cell)
    stats = {"cells": len(grid.cells), "feasible_cells": sum(r.feasible for r in per_cell.values()),
             "mode": mode, "seconds": time.perf_counter() - t0}
    if best_min is None:
        return infeasible_result(stats), per_cell
    stats["argmin_cell"] = list(best_min[3])
    stats["argmax_cell"] = list(best_max[3])
    status = "Exact" if mode != RELAXED else "Relaxed"
    res = BoundsResult(best_min[0], best_max[0], status, stats,
                       best_min[1], best_max[1], best_min[2], best_max[2])
    return res, per_cell


def solve_whole_bounds(dataset, fit, params: WholeParams, k=None, mode: str = RELAXED,
                       inflate_lambda: bool = False, total_budget: int | None = None) -> BoundsResult:
    """Envelope of separate-group bounds over the allocation grid."""
    lam = params.lambda_prime() if inflate_lambda else params.lam
    if total_budget is None:
        total_budget = ceil_budget(dataset.n, params.delta)
    grid = AllocationGrid.build(dataset.n1, dataset.n0, total_budget)
    res, per_cell = envelope(base_problem(dataset, fit, lam, k), grid, mode)
    res.solver_stats["total_budget"] = total_budget
    res.solver_stats["per_cell"] = {f"{a},{b}": [r.tau_min, r.tau_max] for (a, b), r in per_cell.items()
                                    if r.feasible}
    return res


def _top_fixed(delta, units, count):
    """Pin the ``count`` units of ``units`` with the largest indicator share to one."""
    fixed = np.full(delta.size, -1)
    if count <= 0:
        return fixed
    order = units[np.argsort(-delta[units], kind="stable")]
    fixed[order[:count]] = 1
    return fixed


def adhoc_tighten(relaxed: BoundsResult, base: BoundsProblem, budget) -> BoundsResult:
    """Inner interval from rounding a relaxed solution.

    ``budget`` is the total ``B`` (whole population) or a pair ``(b1, b0)``
    (separate groups). For each of the min and max solutions the ``K``
    units with the largest ``Delta_bar / t`` are pinned to one, where
    ``K = max(B, round(sum Delta_bar / t))`` (per arm for pairs), and the
    remaining program is re-solved. The pinned solution is feasible for
    the exact problem, so the result lies inside the exact interval and
    hence inside the relaxed one.
    """
    if not relaxed.feasible:
        return infeasible_result({"adhoc": True})
    out = {}
    for side, dl in (("min", relaxed.delta_min), ("max", relaxed.delta_max)):
        if isinstance(budget, (tuple, list)):
            fixed = np.full(base.n, -1)
            for arm, b in ((1, budget[0]), (0, budget[1])):
                units = np.flatnonzero(base.z == arm)
                K = max(int(b), int(round(float(dl[units].sum()))))
                fixed = np.maximum(fixed, _top_fixed(dl, units, K))
            budgets = (int(np.sum(fixed[base.z == 1] == 1)), int(np.sum(fixed[base.z == 0] == 1)))
        else:
            units = np.arange(base.n)
            K = max(int(budget), int(round(float(dl.sum()))))
            fixed = _top_fixed(dl, units, K)
            budgets = (int(np.sum(fixed[base.z == 1] == 1)), int(np.sum(fixed[base.z == 0] == 1)))
        r = solve_fixed(base.with_budgets(budgets), fixed)
        out[side] = r
    lo = out["min"].tau_min if out["min"].feasible else math.nan
    hi = out["max"].tau_max if out["max"].feasible else math.nan
    return BoundsResult(lo, hi, "Exact", {"adhoc": True},
                        out["min"].weights_min, out["max"].weights_max,
                        out["min"].delta_min, out["max"].delta_max)


def sharper_ci_bounds(per_cell_quantiles: dict) -> tuple:
    """``(min over cells of L, max over cells of U)``."""
    if not per_cell_quantiles:
        raise EmptyGrid("no cells to combine")
    L = min(v[0] for v in per_cell_quantiles.values())
    U = max(v[1] for v in per_cell_quantiles.values())
    return L, U


def scan_continuous_allocation(base: BoundsProblem, total_budget: float, steps_per_unit: int = 16,
                               refine: int = 40):
    """Bounds of the single-constraint relaxation ``sum_i Delta_i >= B``.

    With fractional indicators the treated share ``s`` of the budget is
    continuous. ``s`` is scanned on a grid of ``steps_per_unit`` points per
    unit (plus every integer), then each extreme is polished by a
    golden-section search on the neighbouring grid interval. Meant for
    cross-checking the integer allocation grid, not for production use.
    """
    n1, n0 = base.n1, base.n0
    lo, hi = max(0.0, total_budget - n0), min(float(n1), float(total_budget))
    ss = np.unique(np.concatenate([np.linspace(lo, hi, int(round((hi - lo) * steps_per_unit)) + 1),
                                   np.arange(math.ceil(lo), math.floor(hi) + 1)]))

    def at(s):
        return solve_bounds(base.with_budgets((float(s), float(total_budget - s))))

    res = [at(s) for s in ss]
    tmin = min((r.tau_min for r in res if r.feasible), default=math.inf)
    tmax = max((r.tau_max for r in res if r.feasible), default=-math.inf)
    if not math.isfinite(tmin) or refine <= 0 or ss.size < 2:
        return tmin, tmax
    for sign in (1.0, -1.0):   # +1 polishes the max, -1 the min
        vals = np.array([sign * (r.tau_max if sign > 0 else r.tau_min) if r.feasible else -math.inf
                         for r in res])
        j = int(np.argmax(vals))
        a, b = ss[max(j - 1, 0)], ss[min(j + 1, ss.size - 1)]
        best = vals[j]
        g = (math.sqrt(5.0) - 1.0) / 2.0

        def f(s):
            r = at(s)
            return sign * (r.tau_max if sign > 0 else r.tau_min) if r.feasible else -math.inf

        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(refine):
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = f(d)
        best = max(best, fc, fd)
        if sign > 0:
            tmax = max(tmax, best)
        else:
            tmin = min(tmin, -best)
    return tmin, tmax
