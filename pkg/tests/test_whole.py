import itertools
import math

import numpy as np
import pytest

from robsens.bounds import BoundsProblem, SensitivityParams, solve_bounds, solve_fixed
from robsens.errors import ConfigError, EmptyGrid
from robsens.whole import (AllocationGrid, WholeParams, adhoc_tighten, base_problem, envelope,
                           scan_continuous_allocation, sharper_ci_bounds, solve_whole_bounds)


def test_grid_cells():
    g = AllocationGrid.build(3, 5, 6)
    assert g.cells == ((1, 5), (2, 4), (3, 3))
    assert AllocationGrid.from_delta(3, 5, 0.0).cells == ((3, 5),)
    assert AllocationGrid.build(3, 5, 0).cells == ((0, 0),)


def test_zero_delta_is_single_cell(sim50):
    ds, fit = sim50
    r = solve_whole_bounds(ds, fit, WholeParams(2.0, 0.0))
    assert r.solver_stats["cells"] == 1
    sep = solve_bounds(BoundsProblem.from_fit(ds, fit, SensitivityParams(2.0, 2.0, 0.0, 0.0)))
    assert (r.tau_min, r.tau_max) == pytest.approx((sep.tau_min, sep.tau_max), abs=1e-12)


def test_params_validation():
    with pytest.raises(ConfigError):
        WholeParams(0.9)
    with pytest.raises(ConfigError):
        WholeParams(2.0, -0.1)
    with pytest.raises(EmptyGrid):
        sharper_ci_bounds({})


def test_six_unit_enumeration(rng):
    for _ in range(10):
        n = 6
        z = np.array([1, 1, 1, 0, 0, 0], dtype=np.int8)
        base = BoundsProblem.from_linear(rng.normal(size=n), rng.normal(size=n) * 4, z, rng.normal(size=(n, 1)),
                                         *np.exp(rng.uniform(0.2, 1.5, 2)), (0, 0))
        B = int(rng.integers(1, 6))
        lo, hi = math.inf, -math.inf
        for bits in itertools.product((0, 1), repeat=n):
            f = np.array(bits)
            if f.sum() < B:
                continue
            r = solve_fixed(base.with_budgets((int(f[:3].sum()), int(f[3:].sum()))), f, "compact")
            if r.feasible:
                lo, hi = min(lo, r.tau_min), max(hi, r.tau_max)
        grid = AllocationGrid.build(3, 3, B)
        exact, _ = envelope(base, grid, "milp")
        if not exact.feasible:
            assert lo == math.inf
            continue
        assert (exact.tau_min, exact.tau_max) == pytest.approx((lo, hi), abs=1e-9)
        relaxed, _ = envelope(base, grid)
        assert relaxed.tau_min <= lo + 1e-9 and relaxed.tau_max >= hi - 1e-9


def test_envelope_is_extreme_over_cells(sim50):
    ds, fit = sim50
    base = base_problem(ds, fit, math.e)
    grid = AllocationGrid.from_delta(ds.n1, ds.n0, 0.1)
    env, per_cell = envelope(base, grid)
    assert env.tau_min == min(r.tau_min for r in per_cell.values() if r.feasible)
    assert env.tau_max == max(r.tau_max for r in per_cell.values() if r.feasible)
    assert len(per_cell) == len(grid.cells)


def test_continuous_scan_never_inside_grid(sim50):
    # the single-constraint relaxation can only widen the integer-allocation envelope
    ds, fit = sim50
    base = base_problem(ds, fit, math.e)
    B = AllocationGrid.from_delta(ds.n1, ds.n0, 0.1).total_budget
    env = solve_whole_bounds(ds, fit, WholeParams(math.e, 0.1))
    lo, hi = scan_continuous_allocation(base, B, steps_per_unit=4, refine=10)
    assert lo <= env.tau_min + 1e-9 and hi >= env.tau_max - 1e-9


def test_adhoc_inside_relaxed(rng, sim50):
    ds, fit = sim50
    for lam, delta in ((math.e, 0.1), (2.0, 0.2), (4.0, 0.05)):
        base = base_problem(ds, fit, lam)
        grid = AllocationGrid.from_delta(ds.n1, ds.n0, delta)
        relaxed, _ = envelope(base, grid)
        inner = adhoc_tighten(relaxed, base, grid.total_budget)
        assert relaxed.tau_min - 1e-9 <= inner.tau_min <= inner.tau_max <= relaxed.tau_max + 1e-9
        P = BoundsProblem.from_fit(ds, fit, SensitivityParams.symmetric(lam, delta))
        rel = solve_bounds(P)
        inner = adhoc_tighten(rel, P, P.budgets)
        assert rel.tau_min - 1e-9 <= inner.tau_min <= inner.tau_max <= rel.tau_max + 1e-9
        exact = solve_bounds(P, "milp")
        assert exact.tau_min - 1e-7 <= inner.tau_min and inner.tau_max <= exact.tau_max + 1e-7


def test_adhoc_integral_solution_unchanged():
    P = BoundsProblem.from_linear(np.zeros(4), np.array([1.0, 3, 0, 0]), np.array([1, 1, 0, 0]), None,
                                  2.0, 2.0, (2, 2))
    rel = solve_bounds(P)
    inner = adhoc_tighten(rel, P, P.budgets)
    assert (inner.tau_min, inner.tau_max) == pytest.approx((rel.tau_min, rel.tau_max), abs=1e-12)


def test_sharper_combination():
    assert sharper_ci_bounds({(1, 2): (1.0, 4.0), (2, 1): (0.5, 5.0)}) == (0.5, 5.0)
    assert sharper_ci_bounds({(3, 3): (-1.0, 2.0)}) == (-1.0, 2.0)
