"""Augmented percentile bootstrap for the bound statistics.

Each replicate redraws multinomial multiplicities ``k``, refits the
propensity model with those weights and re-solves the bound programs.
The objective and balance rows see only resampled units; the counting
budget still refers to all ``n`` original units, with ``delta`` inflated
to a binomial quantile so the sample constraint set covers the truth with
probability at least ``1 - zeta``.

Replicate ``b`` draws from ``SeedSequence([seed, b])``, so results do not
depend on how replicates are spread over worker processes.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bounds import (MILP, RELAXED, BoundsProblem, BoundsResult, SensitivityParams, box_from_linear,
                     ceil_budget, check_mode, solve_bounds, solve_side)
from .dataset import Dataset, TransformSpec, build_designs
from .errors import ConfigError, FitError, TooManyFailedReplicates, ZeroMass
from .logistic import fit_logistic, fit_mle
from .whole import AllocationGrid, WholeParams, solve_whole_bounds

log = logging.getLogger(__name__)

SEPARATE = "separate"
WHOLE = "whole"
MAX_FAILED_SHARE = 0.2


def check_model(model: str) -> str:
    m = str(model).lower()
    if m not in (SEPARATE, WHOLE):
        raise ConfigError(f"model must be 'separate' or 'whole', got {model!r}")
    return m


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    alpha: float = 0.0125
    zeta: float = 0.025
    seed: int = 0
    threads: int = 1
    mode: str = SEPARATE
    relaxation: str = RELAXED

    def __post_init__(self):
        if not (isinstance(self.B, (int, np.integer)) and self.B >= 1):
            raise ConfigError(f"B must be a positive integer, got {self.B!r}")
        if not 0 < self.alpha < 0.5:
            raise ConfigError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0 <= self.zeta < 0.5:
            raise ConfigError(f"zeta must lie in [0, 0.5), got {self.zeta}")
        if not self.alpha + self.zeta < 0.5:
            raise ConfigError("alpha + zeta must be below 0.5")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an integer in [0, 2^64), got {self.seed!r}")
        if not self.threads >= 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        object.__setattr__(self, "mode", check_model(self.mode))
        object.__setattr__(self, "relaxation", check_mode(self.relaxation))

    def to_dict(self) -> dict:
        return {"B": int(self.B), "alpha": self.alpha, "zeta": self.zeta, "seed": int(self.seed),
                "threads": int(self.threads), "mode": self.mode, "relaxation": self.relaxation}


@dataclass
class CiResult:
    point_bounds: BoundsResult
    draws_min: np.ndarray
    draws_max: np.ndarray
    L_alpha: float
    U_alpha: float
    delta_inflated: tuple
    infeasible_count: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, include_draws: bool = False) -> dict:
        d = {"point_bounds": self.point_bounds.to_dict(),
             "L_alpha": _jf(self.L_alpha), "U_alpha": _jf(self.U_alpha),
             "delta_inflated": list(self.delta_inflated),
             "infeasible_count": int(self.infeasible_count),
             "diagnostics": self.diagnostics}
        if include_draws:
            d["draws_min"] = [_jf(v) for v in self.draws_min]
            d["draws_max"] = [_jf(v) for v in self.draws_max]
        return d


def _jf(v):
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# --------------------------------------------------------------------------
# building blocks


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def draw_multinomial(n: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial(n; 1/n, ..., 1/n) counts from ``n`` uniform index draws."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    return np.bincount(rng.integers(0, n, size=n), minlength=n)


def binomial_quantile(n: int, p: float, level: float) -> int:
    """Smallest ``m`` with ``P(Binomial(n, p) <= m) >= level``.

    The CDF is accumulated in log space. Where it lands within a relative
    ``1e-9`` of ``level`` (exact ties such as odd ``n`` at ``p = 1/2``), the
    comparison is redone in exact integer arithmetic on the binary value
    of ``p``.
    """
    if not 0 <= p <= 1:
        raise ConfigError(f"p must lie in [0, 1], got {p}")
    if not 0 < level <= 1:
        raise ConfigError(f"level must lie in (0, 1], got {level}")
    n = int(n)
    if n == 0 or p == 0:
        return 0
    if p == 1 or level >= 1:
        return n
    j = np.arange(n, dtype=float)
    step = np.log(n - j) - np.log(j + 1.0) + (math.log(p) - math.log1p(-p))
    logpmf = np.concatenate(([n * math.log1p(-p)], n * math.log1p(-p) + np.cumsum(step)))
    logcdf = np.logaddexp.accumulate(logpmf)
    target = math.log(level)
    m = int(np.searchsorted(logcdf, target - _TIE_BAND))
    exact = None
    while m < n and logcdf[m] < target + _TIE_BAND:
        if exact is None:
            exact = _ExactCdf(n, p)
        if exact.at_least(m, level):
            return m
        m += 1
    return min(m, n)


_TIE_BAND = 1e-9


class _ExactCdf:
    """``P(Binomial(n, p) <= m)`` compared against a float, in integers.

    With ``p = a / 2^s`` every term ``C(n, j) a^j (2^s - a)^(n - j)`` is an
    integer over the common denominator ``2^(s n)``.
    """

    def __init__(self, n, p):
        num, den = float(p).as_integer_ratio()
        self.n, self.a, self.b, self.den = n, num, den - num, den
        self.j = 0
        self.term = self.b ** n
        self.total = self.term

    def at_least(self, m, level):
        while self.j < m:
            self.term = self.term * (self.n - self.j) * self.a // ((self.j + 1) * self.b)
            self.j += 1
            self.total += self.term
        ln, ld = float(level).as_integer_ratio()
        return self.total * ld >= ln * self.den ** self.n


def inflate_delta(params, n1: int, n0: int, zeta: float):
    """Prediction-set inflation of ``delta``.

    Separate groups use the ``sqrt(1 - zeta)`` binomial quantile per arm,
    the whole population the ``1 - zeta`` quantile of ``Binomial(n, delta)``.
    Returns params of the same type with ``delta`` replaced by ``m / n``.
    """
    if not 0 <= zeta < 1:
        raise ConfigError(f"zeta must lie in [0, 1), got {zeta}")
    if isinstance(params, WholeParams):
        n = n1 + n0
        m = binomial_quantile(n, params.delta, 1.0 - zeta)
        return replace(params, delta=m / n)
    level = math.sqrt(1.0 - zeta)
    m1 = binomial_quantile(n1, params.delta1, level)
    m0 = binomial_quantile(n0, params.delta0, level)
    return replace(params, delta1=m1 / n1, delta0=m0 / n0)


def inflated_counts(params, n1: int, n0: int, zeta: float):
    """Unbounded-unit allowances ``m`` behind :func:`inflate_delta` (a pair or an int)."""
    if isinstance(params, WholeParams):
        return binomial_quantile(n1 + n0, params.delta, 1.0 - zeta)
    level = math.sqrt(1.0 - zeta)
    return (binomial_quantile(n1, params.delta1, level), binomial_quantile(n0, params.delta0, level))


def quantile_rank(B: int, level: float) -> int:
    """1-based order-statistic rank ``max(1, ceil(level * B))``."""
    x = level * B
    return min(B, max(1, int(math.ceil(x - 1e-9 * max(1.0, x)))))


def empirical_quantile(draws, level: float) -> float:
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise ConfigError("no draws")
    if np.isnan(draws).any():
        raise ConfigError("draws contain NaN")
    return float(np.sort(draws)[quantile_rank(draws.size, level) - 1])


# --------------------------------------------------------------------------
# replicate cache: multiplicities and refitted linear predictors


@dataclass(frozen=True, eq=False)
class ReplicateCache:
    """Per-replicate multiplicities and refitted linear predictors.

    A row of ``linear`` is NaN where the refit failed; ``reasons`` says why.
    """

    seed: int
    k: np.ndarray
    linear: np.ndarray
    failed: np.ndarray
    reasons: tuple

    @property
    def B(self) -> int:
        return int(self.k.shape[0])


_STATE: dict = {}


def _install(state):
    _STATE.clear()
    _STATE.update(state)


class Workers:
    """Runs chunked tasks in-process (``threads == 1``) or on a process pool.

    ``state`` is shipped to each worker once; results come back in task
    order, so the outcome never depends on ``threads``.
    """

    def __init__(self, threads: int, state: dict):
        self.threads = max(1, int(threads))
        self.state = state
        self._ex = None

    def __enter__(self):
        if self.threads > 1:
            self._ex = ProcessPoolExecutor(max_workers=self.threads, initializer=_install,
                                           initargs=(self.state,))
        else:
            _install(self.state)
        return self

    def __exit__(self, *exc):
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None
        else:
            _STATE.clear()

    def map(self, fn, items, extra=()):
        """``fn((extra, chunk))`` over chunks of ``items``; flattened results in order."""
        items = list(items)
        if not items:
            return []
        size = max(1, math.ceil(len(items) / (4 * self.threads)))
        payloads = [(extra, items[i:i + size]) for i in range(0, len(items), size)]
        if self._ex is None:
            parts = [fn(p) for p in payloads]
        else:
            parts = list(self._ex.map(fn, payloads))
        return [r for part in parts for r in part]


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _refit_chunk(payload):
    _, bs = payload
    S, z, beta0, seed = _STATE["S"], _STATE["z"], _STATE["beta0"], _STATE["seed"]
    n = z.shape[0]
    out = []
    with threadpool_limits(1):
        for b in bs:
            k = draw_multinomial(n, replicate_rng(seed, b))
            if k[z == 1].sum() == 0 or k[z == 0].sum() == 0:
                out.append((k, None, "empty arm"))
                continue
            try:
                fit = fit_logistic(S, z, k, beta0=beta0)
            except FitError as exc:
                out.append((k, None, type(exc).__name__))
                continue
            out.append((k, fit.linear, ""))
    return out


def build_replicates(dataset: Dataset, fit, B: int, seed: int, threads: int = 1) -> ReplicateCache:
    """Draw ``B`` multiplicity vectors and refit the propensity model on each.

    Newton starts from the original-sample coefficients.
    """
    state = {"S": dataset.s_design, "z": dataset.z, "beta0": fit.beta, "seed": int(seed)}
    with Workers(threads, state) as w:
        rows = w.map(_refit_chunk, range(B))
    n = dataset.n
    k = np.empty((B, n), dtype=np.int64)
    linear = np.full((B, n), np.nan)
    reasons = []
    for b, (kb, lin, why) in enumerate(rows):
        k[b] = kb
        if lin is not None:
            linear[b] = lin
        reasons.append(why)
    failed = np.array([bool(r) for r in reasons], dtype=bool)
    return ReplicateCache(int(seed), k, linear, failed, tuple(reasons))


# --------------------------------------------------------------------------
# bound draws


def draw_state(dataset, cache: ReplicateCache) -> dict:
    """Worker state for bound draws over ``cache``."""
    return {"y": dataset.y, "z": dataset.z, "g": dataset.g_design, "k": cache.k, "linear": cache.linear}


def _replicate_problem(b, lam_pair, budgets):
    st = _STATE
    a_low, a_up = box_from_linear(st["linear"][b], st["z"], *lam_pair)
    return BoundsProblem(a_low, a_up, st["y"], st["z"], st["g"], st["k"][b].astype(float), budgets)


def _cells_chunk(payload):
    """Per replicate and cell: ``(min, max)``; NaN marks an infeasible cell."""
    (lam_pair, cells, mode), bs = payload
    out = []
    with threadpool_limits(1):
        for b in bs:
            res = np.full((len(cells), 2), np.nan)
            if not np.isnan(_STATE["linear"][b, 0]):
                for j, cell in enumerate(cells):
                    try:
                        r = solve_bounds(_replicate_problem(b, lam_pair, cell), mode)
                    except ZeroMass:
                        continue
                    if r.feasible:
                        res[j] = (r.tau_min, r.tau_max)
            out.append(res)
    return out


def _sides_chunk(payload):
    """``(b, sense)`` tasks for a single cell; NaN marks an infeasible replicate."""
    (lam_pair, cell, mode), tasks = payload
    out = []
    with threadpool_limits(1):
        for b, sense in tasks:
            if np.isnan(_STATE["linear"][b, 0]):
                out.append(math.nan)
                continue
            r = solve_side(_replicate_problem(b, lam_pair, cell), sense, mode)
            out.append(math.nan if r is None else float(r[0]))
    return out


def cell_draws(workers: Workers, lam_pair, cells, mode=RELAXED, replicates=None, B=None) -> np.ndarray:
    """``(len(replicates), cells, 2)`` replicate bounds per budget cell; NaN = infeasible.

    Failed refits produce all-NaN rows. ``workers`` must carry
    :func:`draw_state`.
    """
    idx = list(range(B)) if replicates is None else list(replicates)
    cells = [tuple(c) for c in cells]
    rows = workers.map(_cells_chunk, idx, (tuple(lam_pair), cells, check_mode(mode)))
    return np.array(rows).reshape(len(idx), len(cells), 2)


def side_draws(workers: Workers, lam_pair, cell, tasks, mode=RELAXED) -> np.ndarray:
    """Values of single-sense solves for ``tasks = [(b, sense), ...]``; NaN = infeasible."""
    vals = workers.map(_sides_chunk, tasks, (tuple(lam_pair), tuple(cell), check_mode(mode)))
    return np.array(vals, dtype=float)


def envelope_draws(per_cell: np.ndarray):
    """Collapse cell draws to replicate draws.

    A replicate's minimum is the smallest over feasible cells (largest for
    the maximum). Replicates with no feasible cell become ``(-inf, +inf)``.
    Returns ``(draws_min, draws_max, infeasible_mask)``.
    """
    feasible = ~np.isnan(per_cell[:, :, 0])
    none = ~feasible.any(axis=1)
    lo = np.where(feasible, per_cell[:, :, 0], np.inf).min(axis=1)
    hi = np.where(feasible, per_cell[:, :, 1], -np.inf).max(axis=1)
    lo[none], hi[none] = -np.inf, np.inf
    return lo, hi, none


def cell_quantiles(per_cell: np.ndarray, cells, alpha: float) -> dict:
    """Per-cell ``(L_alpha, U_alpha)`` with the conventions of :func:`envelope_draws`.

    An infeasible cell contributes ``(+inf, -inf)`` (empty set) for that
    replicate, unless every cell is infeasible, in which case the
    replicate is ``(-inf, +inf)`` in every cell.
    """
    feasible = ~np.isnan(per_cell[:, :, 0])
    none = ~feasible.any(axis=1)
    out = {}
    for j, cell in enumerate(cells):
        lo = np.where(feasible[:, j], per_cell[:, j, 0], np.inf)
        hi = np.where(feasible[:, j], per_cell[:, j, 1], -np.inf)
        lo[none], hi[none] = -np.inf, np.inf
        out[tuple(cell)] = (empirical_quantile(lo, alpha), empirical_quantile(hi, 1.0 - alpha))
    return out


# --------------------------------------------------------------------------
# confidence intervals


def _prepare(dataset: Dataset, transform: TransformSpec | None) -> Dataset:
    if transform is not None:
        return build_designs(dataset, transform)
    if dataset.s_design is None:
        raise ConfigError("dataset has no designs; pass a transform spec")
    return dataset


def _budget_cells(params, dataset, counts):
    """Budget cells after inflation: one pair (separate) or the allocation grid (whole)."""
    if isinstance(params, WholeParams):
        grid = AllocationGrid.build(dataset.n1, dataset.n0, dataset.n - counts)
        return list(grid.cells)
    return [(dataset.n1 - counts[0], dataset.n0 - counts[1])]


def run_ci(dataset: Dataset, transform: TransformSpec | None, params, config: BootstrapConfig,
           cache: ReplicateCache | None = None, fit=None) -> CiResult:
    """Bootstrap confidence interval for the bounds at ``params``.

    ``params`` is :class:`SensitivityParams` (separate groups) or
    :class:`WholeParams` (whole population; the interval then uses the
    sharper per-cell combination, and the pooled one is kept in the
    diagnostics). Failed refits and infeasible replicates count as
    ``(-inf, +inf)``; more than 20% of them raises
    :class:`TooManyFailedReplicates`.
    """
    t0 = time.perf_counter()
    ds = _prepare(dataset, transform)
    whole = isinstance(params, WholeParams)
    if whole != (config.mode == WHOLE):
        raise ConfigError(f"config mode {config.mode!r} does not match {type(params).__name__}")
    fit = fit_mle(ds) if fit is None else fit
    t_fit = time.perf_counter()
    if whole:
        point = solve_whole_bounds(ds, fit, params, mode=config.relaxation)
        lam_pair = (params.lambda_prime(),) * 2
    else:
        point = solve_bounds(BoundsProblem.from_fit(ds, fit, params), config.relaxation)
        lam_pair = params.lambda_prime()
    t_point = time.perf_counter()
    if cache is None:
        cache = build_replicates(ds, fit, config.B, config.seed, config.threads)
    elif cache.B != config.B or cache.seed != config.seed:
        raise ConfigError("replicate cache does not match the bootstrap config")
    t_refit = time.perf_counter()

    counts = inflated_counts(params, ds.n1, ds.n0, config.zeta)
    inflated = inflate_delta(params, ds.n1, ds.n0, config.zeta)
    cells = _budget_cells(params, ds, counts)
    with Workers(config.threads, draw_state(ds, cache)) as w:
        per_cell = cell_draws(w, lam_pair, cells, config.relaxation, B=cache.B)
    draws_min, draws_max, bad = envelope_draws(per_cell)
    t_solve = time.perf_counter()

    n_fail = int(bad.sum())
    if n_fail > MAX_FAILED_SHARE * config.B:
        raise TooManyFailedReplicates(f"{n_fail} of {config.B} replicates failed "
                                      f"({int(cache.failed.sum())} refits)")
    L = empirical_quantile(draws_min, config.alpha)
    U = empirical_quantile(draws_max, 1.0 - config.alpha)
    diag = {"lambda_used": list(lam_pair), "failed_refits": int(cache.failed.sum()),
            "infeasible_solves": int(n_fail - cache.failed.sum()),
            "budgets": [list(c) for c in cells] if whole else list(cells[0]),
            "rank_lower": quantile_rank(config.B, config.alpha),
            "rank_upper": quantile_rank(config.B, 1.0 - config.alpha),
            "config": config.to_dict(), "params": params.to_dict()}
    if whole:
        cq = cell_quantiles(per_cell, cells, config.alpha)
        diag["pooled"] = [_jf(L), _jf(U)]
        diag["cell_quantiles"] = {f"{a},{b}": [_jf(v[0]), _jf(v[1])] for (a, b), v in cq.items()}
        L = min(v[0] for v in cq.values())
        U = max(v[1] for v in cq.values())
        delta_inf = (inflated.delta,)
    else:
        delta_inf = (inflated.delta1, inflated.delta0)
    diag["seconds"] = {"fit": t_fit - t0, "point": t_point - t_fit, "refit": t_refit - t_point,
                       "solve": t_solve - t_refit, "total": time.perf_counter() - t0}
    return CiResult(point, draws_min, draws_max, L, U, delta_inf, n_fail, diag)


def write_draws_csv(result: CiResult, path) -> None:
    """``b, tau_min_b, tau_max_b`` rows for external plotting."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "tau_min", "tau_max"])
        for b, (lo, hi) in enumerate(zip(result.draws_min, result.draws_max)):
            w.writerow([b, repr(float(lo)), repr(float(hi))])


__all__ = ["BootstrapConfig", "CiResult", "ReplicateCache", "binomial_quantile", "build_replicates",
           "cell_draws", "draw_multinomial", "empirical_quantile", "inflate_delta", "run_ci",
           "side_draws", "Workers", "draw_state", "write_draws_csv", "SEPARATE", "WHOLE", "MILP", "RELAXED", "SensitivityParams"]
