"""Inference on quantiles of confounding strength under a zero-effect null.

For a unit, confounding strength is the larger of the odds ratio between
its true and modelled propensity and the reciprocal. Saying the ``q``-th
sample quantile of strength is at most ``Lambda`` is the same as bounding
at least ``ceil(q n_z)`` units of arm ``z`` by ``Lambda``, so a bound
interval at ``(Lambda, delta = 1 - q)`` that excludes zero rejects that
statement. The smallest ``Lambda`` that is not rejected is a lower
prediction bound for the quantile, and scanning ``q`` gives a curve that
is valid for all ``q`` at once.

All tests share one replicate cache (common random numbers), which makes
the retained set monotone in ``Lambda`` and ``q`` replicate by replicate.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import (SEPARATE, WHOLE, BootstrapConfig, ReplicateCache, Workers, build_replicates,
                        cell_draws, cell_quantiles, draw_state, quantile_rank, side_draws)
from .bounds import ceil_budget
from .dataset import Dataset
from .errors import ConfigError
from .logistic import fit_mle
from .whole import AllocationGrid

LOG_LAMBDA_MAX = 4.0
LOG_TOL = 1e-3
REJECT = "Reject"
RETAIN = "Retain"
AT_ONE = "not_rejectable_at_one"
AT_MAX = "not_covered_at_max"


@dataclass
class QuantileCurve:
    """Lower prediction bounds ``q -> Lambda*``; ``alpha`` is the two-sided level."""

    q_grid: np.ndarray
    lower_bounds: np.ndarray
    alpha: float
    xi: float
    mode: str
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"q": [float(q) for q in self.q_grid], "lambda_lower": [float(v) for v in self.lower_bounds],
                "alpha": self.alpha, "xi": self.xi, "mode": self.mode, "flags": list(self.flags),
                "diagnostics": self.diagnostics}

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "lambda_lower"])
            for q, v in zip(self.q_grid, self.lower_bounds):
                w.writerow([repr(float(q)), repr(float(v))])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


class _Tester:
    """Zero-in-interval tests over one shared replicate cache."""

    def __init__(self, dataset: Dataset, cache: ReplicateCache, config: BootstrapConfig, workers: Workers):
        self.ds = dataset
        self.cache = cache
        self.cfg = config
        self.w = workers
        B = cache.B
        self.need_low = quantile_rank(B, config.alpha)                 # draws_min <= 0 needed
        self.need_up = B - quantile_rank(B, 1.0 - config.alpha) + 1    # draws_max >= 0 needed
        self.wave = max(16, 8 * workers.threads)
        self.solves = 0
        self.failed_or_empty = 0

    def _side_ok(self, lam_pair, cell, sense):
        """Count replicates on the near side of zero, stopping once the answer is settled."""
        B = self.cache.B
        need = self.need_low if sense == "min" else self.need_up
        hits = 0
        for start in range(0, B, self.wave):
            idx = range(start, min(B, start + self.wave))
            vals = side_draws(self.w, lam_pair, cell, [(b, sense) for b in idx], self.cfg.relaxation)
            self.solves += len(vals)
            nan = np.isnan(vals)   # failed refit or empty feasible set: conservative
            self.failed_or_empty += int(nan.sum())
            hits += int(np.sum(nan | ((vals <= 0) if sense == "min" else (vals >= 0))))
            done = min(B, start + self.wave)
            if hits >= need:
                return True
            if hits + (B - done) < need:
                return False
        return hits >= need

    def retains_separate(self, lam_pair, q_pair) -> bool:
        cell = (ceil_budget(self.ds.n1, 1.0 - q_pair[0]), ceil_budget(self.ds.n0, 1.0 - q_pair[1]))
        return self._side_ok(lam_pair, cell, "min") and self._side_ok(lam_pair, cell, "max")

    def retains_whole(self, lam, q) -> bool:
        grid = AllocationGrid.build(self.ds.n1, self.ds.n0, int(math.ceil(q * self.ds.n - 1e-9)))
        per_cell = cell_draws(self.w, (lam, lam), grid.cells, self.cfg.relaxation, B=self.cache.B)
        self.solves += per_cell.shape[0] * per_cell.shape[1]
        cq = cell_quantiles(per_cell, grid.cells, self.cfg.alpha)
        L = min(v[0] for v in cq.values())
        U = max(v[1] for v in cq.values())
        return L <= 0.0 <= U

    def retains(self, lam_box: float, q: float) -> bool:
        if self.cfg.mode == WHOLE:
            return self.retains_whole(lam_box, q)
        return self.retains_separate((lam_box, lam_box), (q, q))


def _setup(dataset, config, cache, fit):
    if dataset.s_design is None:
        raise ConfigError("dataset has no designs; call build_designs first")
    if cache is None:
        fit = fit_mle(dataset) if fit is None else fit
        cache = build_replicates(dataset, fit, config.B, config.seed, config.threads)
    elif cache.B != config.B or cache.seed != config.seed:
        raise ConfigError("replicate cache does not match the bootstrap config")
    return cache


def test_confounding_hypothesis(dataset: Dataset, q_pair, lambda_pair, config: BootstrapConfig,
                                xi: float = 1.0, cache: ReplicateCache | None = None, fit=None) -> str:
    """``"Reject"`` iff zero lies outside the interval at ``(xi * Lambda, 1 - q)``.

    Separate groups take per-arm pairs; the whole-population model uses
    the first entries of both pairs. ``config.alpha`` is the tail level
    per side. No prediction-set inflation is applied: the statement is
    about the sample itself.
    """
    if xi < 1:
        raise ConfigError("xi must be >= 1")
    cache = _setup(dataset, config, cache, fit)
    with Workers(config.threads, draw_state(dataset, cache)) as w:
        t = _Tester(dataset, cache, config, w)
        lams = tuple(xi * float(v) for v in lambda_pair)
        if config.mode == WHOLE:
            ok = t.retains_whole(lams[0], float(q_pair[0]))
        else:
            ok = t.retains_separate(lams, tuple(float(q) for q in q_pair))
    return RETAIN if ok else REJECT


test_confounding_hypothesis.__test__ = False   # not a pytest test despite the name


@dataclass(frozen=True)
class Threshold:
    value: float
    flag: str
    index: int      # grid index of the largest rejected log-Lambda (-1: retained at one)


def _search(tester, q, xi, n_grid, log_max, start=0):
    """Largest grid index whose box parameter is rejected, by binary search.

    Grid point ``i`` is ``log Lambda_box = i * log_max / n_grid``; retention
    is monotone in ``i``. ``start`` is a grid index known to be rejected.
    """
    step = log_max / n_grid
    if start == 0 and tester.retains(1.0, q):
        return Threshold(1.0, AT_ONE, -1)
    if not tester.retains(math.exp(log_max), q):
        return Threshold(max(1.0, math.exp(log_max) / xi), AT_MAX, n_grid)
    lo, hi = start, n_grid   # lo rejected, hi retained
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tester.retains(math.exp(mid * step), q):
            hi = mid
        else:
            lo = mid
    return Threshold(max(1.0, math.exp(lo * step) / xi), "", lo)


def _grid_size(log_max, tol):
    return 2 ** max(1, math.ceil(math.log2(log_max / tol)))


def lambda_threshold(dataset: Dataset, q: float, config: BootstrapConfig, xi: float = 1.0,
                     log_lambda_max: float = LOG_LAMBDA_MAX, tol: float = LOG_TOL,
                     cache: ReplicateCache | None = None, fit=None) -> Threshold:
    """Smallest ``Lambda`` (on a dyadic log grid of spacing <= ``tol``) not rejected at quantile ``q``.

    The reported value is the largest rejected grid point divided by
    ``xi``, i.e. the conservative end of the final bracket.
    """
    if not 0 <= q <= 1:
        raise ConfigError("q must lie in [0, 1]")
    if xi < 1:
        raise ConfigError("xi must be >= 1")
    if q == 0:
        return Threshold(1.0, AT_ONE, -1)
    cache = _setup(dataset, config, cache, fit)
    with Workers(config.threads, draw_state(dataset, cache)) as w:
        return _search(_Tester(dataset, cache, config, w), q, xi, _grid_size(log_lambda_max, tol),
                       log_lambda_max)


def prediction_curve(dataset: Dataset, q_grid, config: BootstrapConfig, xi: float = 1.0,
                     log_lambda_max: float = LOG_LAMBDA_MAX, tol: float = LOG_TOL,
                     cache: ReplicateCache | None = None, fit=None) -> QuantileCurve:
    """Thresholds over an increasing ``q_grid`` on shared replicates.

    Each search starts from the previous quantile's rejected grid point,
    which is still rejected at a larger ``q``. Any decrease (only possible
    through solver round-off) is repaired by a running maximum and counted
    in the diagnostics.
    """
    q = np.asarray(q_grid, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any(np.diff(q) <= 0) or q[0] < 0 or q[-1] > 1:
        raise ConfigError("q grid must be strictly increasing within [0, 1]")
    if xi < 1:
        raise ConfigError("xi must be >= 1")
    t0 = time.perf_counter()
    cache = _setup(dataset, config, cache, fit)
    n_grid = _grid_size(log_lambda_max, tol)
    values, flags = [], []
    with Workers(config.threads, draw_state(dataset, cache)) as w:
        tester = _Tester(dataset, cache, config, w)
        start = 0
        for qi in q:
            if qi == 0:
                th = Threshold(1.0, AT_ONE, -1)
            else:
                th = _search(tester, float(qi), xi, n_grid, log_lambda_max, start=max(start, 0))
            start = max(start, th.index)
            values.append(th.value)
            flags.append(th.flag)
        solves = tester.solves
        nan_draws = tester.failed_or_empty
    raw = np.array(values)
    fixed = np.maximum.accumulate(np.maximum(raw, 1.0))
    diag = {"grid_points": int(n_grid), "log_lambda_max": log_lambda_max,
            "monotone_repairs": int(np.sum(fixed != raw)), "solves": int(solves),
            "conservative_draws": int(nan_draws), "failed_refits": int(cache.failed.sum()),
            "config": config.to_dict(), "seconds": time.perf_counter() - t0}
    return QuantileCurve(q, fixed, 2.0 * config.alpha, float(xi),
                         "whole" if config.mode == WHOLE else "separate", flags, diag)


def region_grid(dataset: Dataset, q_pair, lambda1_grid, lambda0_grid, config: BootstrapConfig,
                xi: float = 1.0, cache: ReplicateCache | None = None, fit=None) -> np.ndarray:
    """Boolean raster: ``[i, j]`` is True when ``(lambda1_grid[i], lambda0_grid[j])`` is retained."""
    if config.mode != SEPARATE:
        raise ConfigError("the two-arm region is defined for separate groups only")
    cache = _setup(dataset, config, cache, fit)
    out = np.zeros((len(lambda1_grid), len(lambda0_grid)), dtype=bool)
    with Workers(config.threads, draw_state(dataset, cache)) as w:
        t = _Tester(dataset, cache, config, w)
        for i, l1 in enumerate(lambda1_grid):
            for j, l0 in enumerate(lambda0_grid):
                out[i, j] = t.retains_separate((xi * l1, xi * l0), tuple(q_pair))
    return out


def write_region_csv(path, lambda1_grid, lambda0_grid, retained) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda1", "lambda0", "retained"])
        for i, l1 in enumerate(lambda1_grid):
            for j, l0 in enumerate(lambda0_grid):
                w.writerow([repr(float(l1)), repr(float(l0)), int(retained[i, j])])


__all__ = ["QuantileCurve", "Threshold", "lambda_threshold", "prediction_curve", "region_grid",
           "test_confounding_hypothesis", "write_region_csv", "REJECT", "RETAIN"]
