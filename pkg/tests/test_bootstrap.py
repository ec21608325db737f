import csv
import math

import numpy as np
import pytest

from oracles import binomial_quantiles
from robsens.bootstrap import (BootstrapConfig, binomial_quantile, build_replicates, draw_multinomial,
                               empirical_quantile, inflate_delta, inflated_counts, quantile_rank,
                               replicate_rng, run_ci, write_draws_csv)
from robsens.bounds import SensitivityParams, hajek, overlap_weights
from robsens.dataset import TransformSpec, build_designs, from_arrays
from robsens.errors import ConfigError, TooManyFailedReplicates
from robsens.logistic import fit_logistic
from robsens.whole import WholeParams


def test_binomial_quantile_examples():
    assert binomial_quantile(10, 0.5, 0.5) == 5
    assert binomial_quantile(37, 0.0, 0.9) == 0
    assert binomial_quantile(37, 0.3, 1.0) == 37
    assert binomial_quantile(37, 1.0, 0.2) == 37
    assert binomial_quantile(0, 0.3, 0.9) == 0
    with pytest.raises(ConfigError):
        binomial_quantile(5, 1.2, 0.5)
    with pytest.raises(ConfigError):
        binomial_quantile(5, 0.2, 0.0)


def test_binomial_quantile_exact_ties():
    # Bin(n, 1/2) with odd n has CDF exactly 1/2 at (n-1)/2
    for n in (1, 3, 11, 101, 1001):
        assert binomial_quantile(n, 0.5, 0.5) == (n - 1) // 2


def test_binomial_quantile_oracle_small_n():
    levels = (0.5, math.sqrt(0.95), 0.95, 0.975, 1.0)
    for n in range(0, 301):
        for p in (0.0, 0.05, 0.1, 0.5, 1.0):
            ref = binomial_quantiles(n, p, levels)
            assert [binomial_quantile(n, p, lv) for lv in levels] == ref, (n, p)


def test_binomial_quantile_large_n():
    levels = (0.5, math.sqrt(0.95), 0.95, 0.975, 1.0)
    for n in (1000, 4321, 10000):
        for p in (0.05, 0.1, 0.5):
            assert [binomial_quantile(n, p, lv) for lv in levels] == binomial_quantiles(n, p, levels)


def test_inflation_examples():
    p = SensitivityParams(2, 2, 0.0, 0.0)
    assert inflate_delta(p, 40, 60, 0.3) == p
    full = inflate_delta(SensitivityParams(2, 2, 0.1, 0.2), 40, 60, 0.0)
    assert (full.delta1, full.delta0) == (1.0, 1.0)
    w = inflate_delta(WholeParams(2.0, 0.1), 40, 60, 0.05)
    assert w.delta == binomial_quantile(100, 0.1, 0.95) / 100
    assert inflated_counts(WholeParams(2.0, 0.1), 40, 60, 0.05) == binomial_quantile(100, 0.1, 0.95)


def test_inflation_monotone_and_vanishing():
    prev = math.inf
    for n in (100, 1000, 10000):
        q = inflate_delta(SensitivityParams(1, 1, 0.1, 0.05), n, n, 0.025)
        assert q.delta1 >= 0.1 and q.delta0 >= 0.05
        excess = max(q.delta1 - 0.1, q.delta0 - 0.05)
        assert excess < prev
        prev = excess
    assert prev < 0.01


def test_quantile_ranks():
    draws = np.arange(1, 101, dtype=float)
    assert empirical_quantile(draws, 0.05) == 5
    assert empirical_quantile(draws, 0.95) == 95
    assert empirical_quantile([3.5], 0.01) == 3.5 and empirical_quantile([3.5], 0.99) == 3.5
    assert quantile_rank(1000, 0.0125) == 13
    assert quantile_rank(200, 1 - 0.0125) == 198
    assert quantile_rank(10, 0.0) == 1
    assert quantile_rank(100, 0.07) == 7     # 0.07 * 100 is 7.000000000000001
    d = np.r_[np.arange(1, 99, dtype=float), np.inf, np.inf]
    assert empirical_quantile(d, 0.99) == math.inf
    with pytest.raises(ConfigError):
        empirical_quantile([1.0, np.nan], 0.5)


def test_multinomial_draws():
    assert draw_multinomial(1, replicate_rng(0, 0)).tolist() == [1]
    rng = np.random.default_rng(2)
    k1 = np.array([draw_multinomial(10, rng)[0] for _ in range(10**5)])
    assert abs(k1.mean() - 1.0) <= 3 * math.sqrt(0.9 / 10**5)
    a = draw_multinomial(50, replicate_rng(7, 3))
    b = draw_multinomial(50, replicate_rng(7, 3))
    assert a.sum() == 50 and a.tobytes() == b.tobytes()
    assert a.tobytes() != draw_multinomial(50, replicate_rng(7, 4)).tobytes()


def test_config_validation():
    for bad in ({"B": 0}, {"alpha": 0.6}, {"zeta": -0.1}, {"alpha": 0.3, "zeta": 0.3}, {"seed": -1},
                {"threads": 0}, {"mode": "both"}, {"relaxation": "sdp"}):
        with pytest.raises(ConfigError):
            BootstrapConfig(**bad)


def test_collapse_is_percentile_bootstrap(sim50):
    ds, fit = sim50
    cfg = BootstrapConfig(B=60, alpha=0.05, zeta=0.0, seed=11)
    res = run_ci(ds, None, SensitivityParams(), cfg, fit=fit)
    ref = []
    for b in range(cfg.B):
        k = draw_multinomial(ds.n, replicate_rng(cfg.seed, b))
        f = fit_logistic(ds.s_design, ds.z, k)
        ref.append(hajek(overlap_weights(f.linear, ds.z), ds.y, ds.z, k))
    ref = np.array(ref)
    assert np.allclose(res.draws_min, ref, atol=1e-6) and np.allclose(res.draws_max, ref, atol=1e-6)
    assert res.L_alpha == pytest.approx(np.sort(ref)[2], abs=1e-6)      # rank ceil(0.05 * 60) = 3
    assert res.U_alpha == pytest.approx(np.sort(ref)[56], abs=1e-6)     # rank ceil(0.95 * 60) = 57
    assert res.infeasible_count == 0


def test_ci_nesting_on_shared_replicates(sim50):
    ds, fit = sim50
    cfg = BootstrapConfig(B=40, alpha=0.05, zeta=0.025, seed=3)
    cache = build_replicates(ds, fit, cfg.B, cfg.seed)
    prev = None
    for lam, delta in ((1.0, 0.0), (1.5, 0.0), (1.5, 0.1), (2.5, 0.1), (2.5, 0.2)):
        r = run_ci(ds, None, SensitivityParams.symmetric(lam, delta), cfg, cache=cache, fit=fit)
        assert r.L_alpha <= r.point_bounds.tau_min and r.point_bounds.tau_max <= r.U_alpha or lam == 1.0
        if prev is not None:
            assert r.L_alpha <= prev.L_alpha + 1e-9 and r.U_alpha >= prev.U_alpha - 1e-9
            assert np.all(r.draws_min <= prev.draws_min + 1e-9)
        prev = r


def test_whole_sharper_inside_pooled(sim50):
    ds, fit = sim50
    cfg = BootstrapConfig(B=30, alpha=0.05, zeta=0.025, seed=5, mode="whole")
    r = run_ci(ds, None, WholeParams(2.0, 0.1), cfg, fit=fit)
    pooled_L, pooled_U = r.diagnostics["pooled"]
    assert r.L_alpha >= pooled_L - 1e-12 and r.U_alpha <= pooled_U + 1e-12
    assert len(r.delta_inflated) == 1
    with pytest.raises(ConfigError):
        run_ci(ds, None, WholeParams(2.0, 0.1), BootstrapConfig(B=5), fit=fit)


def test_thread_count_does_not_change_results(sim50):
    ds, fit = sim50
    params = SensitivityParams(2.0, 3.0, 0.1, 0.05)
    a = run_ci(ds, None, params, BootstrapConfig(B=16, seed=9, threads=1), fit=fit)
    b = run_ci(ds, None, params, BootstrapConfig(B=16, seed=9, threads=2), fit=fit)
    assert a.draws_min.tobytes() == b.draws_min.tobytes()
    assert a.draws_max.tobytes() == b.draws_max.tobytes()
    assert (a.L_alpha, a.U_alpha) == (b.L_alpha, b.U_alpha)


def test_too_many_failures():
    x = np.array([0.0, 1, 2, 3, 4, 5, 6, 7])
    z = np.array([0, 0, 0, 1, 0, 1, 1, 1])
    ds = build_designs(from_arrays(x, z, x[:, None], columns=["x"]), TransformSpec.identity(["x"]))
    with pytest.raises(TooManyFailedReplicates):
        run_ci(ds, None, SensitivityParams(), BootstrapConfig(B=50, alpha=0.05))


def test_draws_csv(tmp_path, sim50):
    ds, fit = sim50
    r = run_ci(ds, None, SensitivityParams.symmetric(1.5, 0.1), BootstrapConfig(B=8, alpha=0.2), fit=fit)
    p = tmp_path / "draws.csv"
    write_draws_csv(r, p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["b", "tau_min", "tau_max"] and len(rows) == 9
    assert float(rows[1][1]) == r.draws_min[0]
    d = r.to_dict(include_draws=True)
    assert len(d["draws_max"]) == 8
