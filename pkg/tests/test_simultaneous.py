import csv
import math

import numpy as np
import pytest

from robsens.bootstrap import BootstrapConfig, build_replicates
from robsens.dataset import TransformSpec, build_designs, from_arrays
from robsens.errors import ConfigError
from robsens.logistic import fit_mle
from robsens.simultaneous import (LOG_LAMBDA_MAX, REJECT, RETAIN, lambda_threshold, prediction_curve,
                                  region_grid, test_confounding_hypothesis, write_region_csv)

CFG = BootstrapConfig(B=40, alpha=0.025, zeta=0.0, seed=8)


def null_data(n=120, seed=0):
    """Treatment depends on x only; the outcome ignores treatment."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, n)
    z = (rng.random(n) < 1 / (1 + np.exp(-(x - 0.5)))).astype(int)
    y = rng.normal(size=n) + x
    ds = build_designs(from_arrays(y, z, x[:, None], columns=["x"]), TransformSpec.identity(["x"]))
    return ds, fit_mle(ds)


@pytest.fixture(scope="module")
def confounded(sim200):
    ds, fit = sim200
    return ds, fit, build_replicates(ds, fit, CFG.B, CFG.seed)


def test_null_curve_is_flat():
    ds, fit = null_data()
    curve = prediction_curve(ds, [0.25, 0.5, 0.75, 0.9, 1.0], CFG, fit=fit)
    assert np.all(curve.lower_bounds == 1.0)
    assert lambda_threshold(ds, 1.0, CFG, fit=fit).value == 1.0


def test_strong_confounding_rejects_no_confounding(confounded):
    ds, fit, cache = confounded
    assert test_confounding_hypothesis(ds, (1, 1), (1, 1), CFG, cache=cache) == REJECT


def test_unbounded_strength_retains(confounded):
    ds, fit, cache = confounded
    assert test_confounding_hypothesis(ds, (1, 1), (math.inf, math.inf), CFG, cache=cache) == RETAIN


def test_curve_monotone_and_reproducible(confounded):
    ds, fit, cache = confounded
    q = np.linspace(0.5, 1.0, 6)
    a = prediction_curve(ds, q, CFG, cache=cache)
    assert np.all(np.diff(a.lower_bounds) >= 0) and np.all(a.lower_bounds >= 1)
    assert a.lower_bounds[-1] > 1.0
    assert a.alpha == pytest.approx(2 * CFG.alpha)
    b = prediction_curve(ds, q, CFG, fit=fit)          # fresh cache from the same seed
    assert a.lower_bounds.tobytes() == b.lower_bounds.tobytes()


def test_duality_with_hypothesis_test(confounded):
    ds, fit, cache = confounded
    for q in (0.9, 1.0):
        th = lambda_threshold(ds, q, CFG, cache=cache)
        if th.index < 0:
            continue
        step = LOG_LAMBDA_MAX / 4096
        below = math.exp(th.index * step)
        above = math.exp((th.index + 1) * step)
        assert th.value == pytest.approx(below)
        assert test_confounding_hypothesis(ds, (q, q), (below, below), CFG, cache=cache) == REJECT
        assert test_confounding_hypothesis(ds, (q, q), (above, above), CFG, cache=cache) == RETAIN


def test_xi_scales_threshold(confounded):
    ds, fit, cache = confounded
    base = lambda_threshold(ds, 1.0, CFG, cache=cache)
    scaled = lambda_threshold(ds, 1.0, CFG, xi=1.5, cache=cache)
    assert scaled.value <= base.value + 1e-12
    assert scaled.value == pytest.approx(max(1.0, base.value / 1.5), rel=3e-3)


def test_whole_curve_monotone(sim50):
    ds, fit = sim50
    cfg = BootstrapConfig(B=20, alpha=0.025, zeta=0.0, seed=2, mode="whole")
    curve = prediction_curve(ds, [0.6, 0.8, 1.0], cfg, fit=fit, tol=0.01)
    assert np.all(np.diff(curve.lower_bounds) >= 0)
    assert curve.mode == "whole"


def test_region_grid(confounded, tmp_path):
    ds, fit, cache = confounded
    grid = [1.0, 2.0, 8.0, 50.0]
    ret = region_grid(ds, (1.0, 1.0), grid, grid, CFG, cache=cache)
    # retention can only switch on as either strength grows
    assert np.all(np.diff(ret.astype(int), axis=0) >= 0) and np.all(np.diff(ret.astype(int), axis=1) >= 0)
    p = tmp_path / "region.csv"
    write_region_csv(p, grid, grid, ret)
    assert len(list(csv.reader(p.open()))) == 17


def test_validation(confounded):
    ds, fit, cache = confounded
    with pytest.raises(ConfigError):
        prediction_curve(ds, [0.5, 0.4], CFG, cache=cache)
    with pytest.raises(ConfigError):
        lambda_threshold(ds, 1.2, CFG, cache=cache)
    with pytest.raises(ConfigError):
        lambda_threshold(ds, 0.5, CFG, xi=0.5, cache=cache)
    assert lambda_threshold(ds, 0.0, CFG, cache=cache).value == 1.0
