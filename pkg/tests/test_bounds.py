import itertools
import math

import numpy as np
import pytest

from robsens.bounds import (BoundsProblem, SensitivityParams, adjust_propensity, build_charnes_cooper,
                            ceil_budget, hajek, overlap_weights, point_estimate, solve_bounds, solve_fixed,
                            solve_side, unit_box)
from robsens.errors import BoundaryInput, ConfigError, ZeroMass
from robsens.linprog import Status, solve_lp

FORMULATIONS = ("colgen", "compact", "literal")


@pytest.mark.parametrize("e,psi,expected", [(0.5, 0.0, 0.5), (0.5, math.log(2), 2 / 3),
                                            (0.1, math.log(9), 0.5)])
def test_adjust_propensity(e, psi, expected):
    assert adjust_propensity(e, psi) == pytest.approx(expected, abs=1e-15)


def test_adjust_propensity_boundary():
    with pytest.raises(BoundaryInput):
        adjust_propensity(1.0, 0.0)
    assert adjust_propensity(0.3, math.inf) == 1.0


@pytest.mark.parametrize("e,z,lam,lo,hi", [(0.5, 1, 1.0, 0.5, 0.5), (0.5, 1, 2.0, 1 / 3, 2 / 3),
                                           (0.5, 0, 2.0, 1 / 3, 2 / 3)])
def test_unit_box(e, z, lam, lo, hi):
    b = unit_box(e, z, lam)
    assert b.a_low == pytest.approx(lo, abs=1e-15) and b.a_up == pytest.approx(hi, abs=1e-15)


def test_unit_box_is_inverse_propensity_range(rng):
    # treated: 1/e ranges over 1 + (1/e_hat - 1) * [1/L, L]; a = 1 - e_true spans the box
    for _ in range(20):
        e, lam = rng.uniform(0.05, 0.95), rng.uniform(1, 5)
        b = unit_box(e, 1, lam)
        ends = sorted(1 - adjust_propensity(e, s * math.log(lam)) for s in (-1, 1))
        assert (b.a_low, b.a_up) == pytest.approx(tuple(ends), abs=1e-14)


def test_hajek_examples():
    z = np.array([1, 1, 0, 0])
    assert hajek(np.full(4, 0.5), [3, 1, 0, 0], z) == pytest.approx(2.0)
    assert hajek([1 / 3, 2 / 3, 1, 1], [1, 3, 0, 0], z) == pytest.approx(7 / 3)


def test_hajek_multiplicity_equals_resample(rng):
    w, y = rng.uniform(0.1, 1, 6), rng.normal(size=6)
    z = np.array([1, 1, 1, 0, 0, 0])
    k = np.array([2, 0, 1, 1, 3, 1])
    idx = np.repeat(np.arange(6), k)
    assert hajek(w, y, z, k) == pytest.approx(hajek(w[idx], y[idx], z[idx]), abs=1e-14)
    with pytest.raises(ZeroMass):
        hajek(w, y, z, np.array([0, 0, 0, 1, 1, 1]))


def test_ceil_budget():
    assert ceil_budget(10, 0.1) == 9
    assert ceil_budget(10, 0.0) == 10
    assert ceil_budget(10, 0.7) == 3     # 10 * (1 - 0.7) is 3.0000000000000004 in floating point
    assert ceil_budget(100, 1.0) == 0


def test_params_validation():
    with pytest.raises(ConfigError):
        SensitivityParams(0.5)
    with pytest.raises(ConfigError):
        SensitivityParams(delta1=1.5)
    assert SensitivityParams(2, 3, lambda_gap=math.log(2)).lambda_prime() == pytest.approx((4, 6))


def toy(lam=2.0, budgets=(2, 2), y=(1.0, 3.0, 0.0, 0.0), k=None, g=None):
    return BoundsProblem.from_linear(np.zeros(4), np.array(y), np.array([1, 1, 0, 0]), g, lam, lam, budgets, k)


def test_literal_program_dimensions():
    lp = build_charnes_cooper(toy(), "max", "relaxed")
    assert lp.c.size == 10
    groups = lp.row_groups
    assert groups["normalization"][2] - groups["normalization"][1] == 2
    assert groups["counting"][2] - groups["counting"][1] == 2
    box = (groups["box_lower"][2] - groups["box_lower"][1]) + (groups["box_upper"][2] - groups["box_upper"][1])
    assert box == 8
    assert lp.A_eq.shape[0] == 2


@pytest.mark.parametrize("formulation", FORMULATIONS)
@pytest.mark.parametrize("mode", ["relaxed", "milp"])
def test_two_by_two_example(formulation, mode):
    r = solve_bounds(toy(), mode, formulation)
    assert (r.tau_min, r.tau_max) == pytest.approx((5 / 3, 7 / 3), abs=1e-9)


def test_two_by_two_vertex_oracle():
    # linear-fractional extrema sit at box vertices: enumerate treated weights directly
    lo, hi = 1 / 3, 2 / 3
    vals = [(a * 1 + b * 3) / (a + b) for a, b in itertools.product((lo, hi), repeat=2)]
    assert (min(vals), max(vals)) == pytest.approx((5 / 3, 7 / 3))


def test_glover_rows_pin_delta():
    P = toy(budgets=(1, 1))
    lp = build_charnes_cooper(P, "max", "milp")
    n = P.n
    lo, hi = lp.lo.copy(), lp.hi.copy()
    lo[2 * n + 2] = hi[2 * n + 2] = 1.0          # indicator of unit 0 fixed on
    sol = solve_lp(lp.with_bounds(lo, hi))
    assert sol.status is Status.OPTIMAL
    assert sol.x[n] == pytest.approx(sol.x[2 * n], abs=1e-9)


def test_zero_multiplicity_gets_zero_weight():
    P = toy(k=np.array([0.0, 1.0, 1.0, 1.0]), budgets=(1, 2))
    for formulation in FORMULATIONS:
        r = solve_bounds(P, "relaxed", formulation)
        assert r.weights_max[0] == pytest.approx(0.0, abs=1e-12)
        assert r.weights_min[0] == pytest.approx(0.0, abs=1e-12)
        assert r.tau_min == pytest.approx(3.0) and r.tau_max == pytest.approx(3.0)


def test_unconstrained_range_at_full_slack(rng):
    y = rng.normal(size=8) * 5
    z = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    P = BoundsProblem.from_linear(rng.normal(size=8), y, z, None, 1.5, 1.5, (0, 0))
    r = solve_bounds(P)
    assert r.tau_max == pytest.approx(y[:4].max() - y[4:].min(), abs=1e-9)
    assert r.tau_min == pytest.approx(y[:4].min() - y[4:].max(), abs=1e-9)


def test_collapse_at_no_confounding(sim200):
    ds, fit = sim200
    P = BoundsProblem.from_fit(ds, fit, SensitivityParams())
    tau = point_estimate(ds, fit)
    for formulation in FORMULATIONS:
        r = solve_bounds(P, "relaxed", formulation)
        assert r.tau_min == pytest.approx(tau, abs=1e-6) and r.tau_max == pytest.approx(tau, abs=1e-6)
    assert hajek(overlap_weights(fit.linear, ds.z), ds.y, ds.z) == tau


def test_formulations_agree(sim50, rng):
    ds, fit = sim50
    for _ in range(5):
        lam, delta = rng.uniform(1, 4), rng.uniform(0, 0.3)
        P = BoundsProblem.from_fit(ds, fit, SensitivityParams.symmetric(lam, delta))
        rs = [solve_bounds(P, "relaxed", f) for f in FORMULATIONS]
        for r in rs[1:]:
            assert r.tau_min == pytest.approx(rs[0].tau_min, abs=1e-7)
            assert r.tau_max == pytest.approx(rs[0].tau_max, abs=1e-7)


def test_weights_reproduce_objective(sim50):
    ds, fit = sim50
    P = BoundsProblem.from_fit(ds, fit, SensitivityParams.symmetric(2.0, 0.1))
    r = solve_bounds(P)
    sgn = np.where(P.z == 1, 1.0, -1.0)
    assert float(np.sum(r.weights_max * sgn * P.y)) == pytest.approx(r.tau_max, abs=1e-8)
    for w in (r.weights_min, r.weights_max):
        assert w[P.z == 1].sum() == pytest.approx(1.0) and w[P.z == 0].sum() == pytest.approx(1.0)
        bal = (w * sgn) @ P.g
        assert np.allclose(bal, 0.0, atol=1e-8)


def test_nesting_along_both_axes(sim50):
    ds, fit = sim50
    lams, deltas = (1.0, 1.5, 2.0, 3.0), (0.0, 0.05, 0.1, 0.2)
    res = {(l, d): solve_bounds(BoundsProblem.from_fit(ds, fit, SensitivityParams.symmetric(l, d)))
           for l in lams for d in deltas}
    for (l, d), r in res.items():
        for (l2, d2), r2 in res.items():
            if l2 >= l and d2 >= d:
                assert r2.tau_min <= r.tau_min + 1e-9 and r2.tau_max >= r.tau_max - 1e-9


def _brute(P):
    lo, hi = math.inf, -math.inf
    z = P.z
    for bits in itertools.product((0, 1), repeat=P.n):
        f = np.array(bits)
        if f[z == 1].sum() < P.budgets[0] or f[z == 0].sum() < P.budgets[1]:
            continue
        r = solve_fixed(P, f, "compact")
        if r.feasible:
            lo, hi = min(lo, r.tau_min), max(hi, r.tau_max)
    return lo, hi


def test_milp_matches_enumeration(rng):
    for _ in range(8):
        n = int(rng.integers(5, 10))
        z = np.r_[np.ones(n // 2), np.zeros(n - n // 2)].astype(np.int8)
        P = BoundsProblem.from_linear(rng.normal(size=n), rng.normal(size=n) * 3, z, rng.normal(size=(n, 1)),
                                      *np.exp(rng.uniform(0, 1.5, 2)),
                                      (int(rng.integers(0, n // 2 + 1)), int(rng.integers(0, n - n // 2 + 1))))
        lo, hi = _brute(P)
        m = solve_bounds(P, "milp")
        if not m.feasible:
            assert lo == math.inf
            continue
        assert (m.tau_min, m.tau_max) == pytest.approx((lo, hi), abs=1e-6)
        lit = solve_bounds(P, "milp", "literal")
        assert (lit.tau_min, lit.tau_max) == pytest.approx((lo, hi), abs=1e-6)
        rel = solve_bounds(P)
        assert rel.tau_min <= lo + 1e-9 and rel.tau_max >= hi - 1e-9


def test_solve_side_matches_solve_bounds(sim50):
    ds, fit = sim50
    P = BoundsProblem.from_fit(ds, fit, SensitivityParams(2.0, 3.0, 0.1, 0.05))
    r = solve_bounds(P)
    assert solve_side(P, "min")[0] == pytest.approx(r.tau_min, abs=1e-9)
    assert solve_side(P, "max")[0] == pytest.approx(r.tau_max, abs=1e-9)
    with pytest.raises(ConfigError):
        solve_side(P, "middle")


def test_infeasible_balance():
    # treated covariates all exceed every control covariate: no weighting balances them
    g = np.array([[2.0], [3.0], [0.0], [1.0]])
    P = toy(g=g, lam=1.5)
    r = solve_bounds(P)
    assert r.status == "Infeasible" and not r.feasible
    assert r.to_dict()["tau_min"] == "inf"


def test_bad_budgets():
    with pytest.raises(ConfigError):
        toy(budgets=(3, 0))
    with pytest.raises(ConfigError):
        solve_bounds(toy(), "quadratic")
