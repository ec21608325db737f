"""Separate-group sensitivity bounds on the overlap-weighted effect.

Each unit's overlap weight ``omega_i`` may move inside a box
``[a_low_i, a_up_i]`` when its logit shift is bounded (``Delta_i = 1``) and
anywhere in ``[0, 1]`` otherwise; at least ``budget_z`` units per arm must
be bounded. The extremes of the weighted difference in means are found by
linear programming after the Charnes-Cooper substitution
``omega_bar = k * omega * t_z`` with ``t_z = 1 / sum_{arm z} k * omega``.

Three solution paths exist:

* ``build_charnes_cooper`` writes the program literally, with variables
  ``(omega_bar, Delta_bar, t1, t0[, Delta_tilde])`` and big-M rows for
  the binary indicators. ``MILP`` mode solves it by branch and bound.
* the compact encoding describes each unit's relaxed region by its three
  nonzero vertices ``(omega, Delta) in {(1, 0), (a_low, 1), (a_up, 1)}``
  (the fourth is the origin), which cuts the row count from about ``4n``
  to ``n``; it is solved by the simplex.
* column generation (``colgen``, the default for the relaxed program)
  keeps only the balance and normalisation rows in a master problem.

Units with ``k_i = 0`` are dropped and counted as bounded in the last two.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryInput, ConfigError, DimensionMismatch, SolverError, ZeroMass
from .colgen import ColumnGeneration, solve_colgen
from .linprog import LpProblem, Status, solve_lp, solve_milp
from .linprog.milp import Relaxation, branch_and_bound
from .logistic import expit

RELAXED = "relaxed"
MILP = "milp"
MODES = (RELAXED, MILP)
BIG_M_SAFETY = 1.01
BIG_M_CAP = 1e8


def check_mode(mode: str) -> str:
    m = str(mode).lower().replace("_", "").replace("-", "")
    if m in ("relaxed", "relaxedlp", "lp"):
        return RELAXED
    if m in ("milp", "exact"):
        return MILP
    raise ConfigError(f"unknown relaxation mode {mode!r}")


def ceil_budget(n_z: int, delta_z: float) -> int:
    """``ceil(n_z * (1 - delta_z))``, immune to representation error in ``delta_z``."""
    return int(math.ceil(n_z * (1.0 - delta_z) - 1e-9))


@dataclass(frozen=True)
class SensitivityParams:
    lambda1: float = 1.0
    lambda0: float = 1.0
    delta1: float = 0.0
    delta0: float = 0.0
    lambda_gap: float = 0.0

    def __post_init__(self):
        for name in ("lambda1", "lambda0"):
            v = getattr(self, name)
            if not v >= 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        for name in ("delta1", "delta0"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not self.lambda_gap >= 0:
            raise ConfigError(f"lambda_gap must be >= 0, got {self.lambda_gap}")

    @classmethod
    def symmetric(cls, lam: float, delta: float, lambda_gap: float = 0.0) -> "SensitivityParams":
        return cls(lam, lam, delta, delta, lambda_gap)

    def lambda_prime(self) -> tuple:
        f = math.exp(self.lambda_gap)
        return (self.lambda1 * f, self.lambda0 * f)

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda0": self.lambda0, "delta1": self.delta1,
                "delta0": self.delta0, "lambda_gap": self.lambda_gap}


@dataclass(frozen=True)
class UnitBox:
    a_low: float
    a_up: float


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def adjust_propensity(e_hat: float, psi: float) -> float:
    """Propensity after shifting ``e_hat`` by ``psi`` on the logit scale."""
    if not 0 < e_hat < 1:
        raise BoundaryInput(f"propensity must lie strictly inside (0, 1), got {e_hat}")
    if psi == math.inf:
        return 1.0
    if psi == -math.inf:
        return 0.0
    return float(expit(np.array([psi + _logit(e_hat)]))[0])


def unit_box(e_hat: float, z: int, lambda_z: float) -> UnitBox:
    if not 0 < e_hat < 1:
        raise BoundaryInput(f"propensity must lie strictly inside (0, 1), got {e_hat}")
    lo, hi = box_from_linear(np.array([_logit(e_hat)]), np.array([z]), lambda_z, lambda_z)
    return UnitBox(float(lo[0]), float(hi[0]))


def box_from_linear(eta, z, lambda1: float, lambda0: float):
    """Vectorised boxes from the fitted linear predictor ``eta = logit(e_hat)``.

    Treated: ``(1 - e_up, 1 - e_low)``; controls: ``(e_low, e_up)`` where
    ``e_low, e_up = expit(eta -/+ log(lambda))``.
    """
    eta = np.asarray(eta, dtype=float)
    z = np.asarray(z)
    a_low = np.empty_like(eta)
    a_up = np.empty_like(eta)
    for arm, lam in ((1, lambda1), (0, lambda0)):
        sel = z == arm
        if not np.any(sel):
            continue
        if math.isinf(lam):
            a_low[sel], a_up[sel] = 0.0, 1.0
            continue
        L = math.log(lam)
        e = eta[sel] if arm == 0 else -eta[sel]
        a_low[sel] = expit(e - L)
        a_up[sel] = expit(e + L)
    return a_low, a_up


def overlap_weights(eta, z):
    """``1 - e_hat`` for treated units and ``e_hat`` for controls."""
    eta = np.asarray(eta, dtype=float)
    return np.where(np.asarray(z) == 1, expit(-eta), expit(eta))


def hajek(weights, y, z, k=None) -> float:
    w = np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    k = np.ones_like(w) if k is None else np.asarray(k, dtype=float)
    if not (w.shape == y.shape == z.shape == k.shape):
        raise DimensionMismatch("weights, outcomes, treatment and multiplicities disagree in length")
    kw = k * w
    t, c = z == 1, z == 0
    m1, m0 = kw[t].sum(), kw[c].sum()
    if not (m1 > 0 and m0 > 0):
        raise ZeroMass("an arm has zero total weight")
    return float((kw[t] @ y[t]) / m1 - (kw[c] @ y[c]) / m0)


def _budget_pair(budgets) -> tuple:
    # integral budgets stay ints; fractional ones are allowed for relaxed programs
    return tuple(int(b) if float(b).is_integer() else float(b) for b in budgets)


@dataclass(frozen=True, eq=False)
class BoundsProblem:
    a_low: np.ndarray
    a_up: np.ndarray
    y: np.ndarray
    z: np.ndarray
    g: np.ndarray
    k: np.ndarray
    budgets: tuple

    def __post_init__(self):
        n = self.y.shape[0]
        for name in ("a_low", "a_up", "z", "k"):
            if getattr(self, name).shape != (n,):
                raise DimensionMismatch(f"{name} must have length {n}")
        if self.g.shape[0] != n:
            raise DimensionMismatch("balance design must have one row per unit")
        if np.any(self.a_low < 0) or np.any(self.a_up > 1) or np.any(self.a_low > self.a_up):
            raise ConfigError("unit boxes must satisfy 0 <= a_low <= a_up <= 1")
        if np.any(self.k < 0):
            raise ConfigError("multiplicities must be nonnegative")
        b1, b0 = self.budgets
        if not (0 <= b1 <= self.n1 and 0 <= b0 <= self.n0):
            raise ConfigError(f"budgets {self.budgets} exceed arm sizes ({self.n1}, {self.n0})")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n1(self) -> int:
        return int(np.sum(self.z == 1))

    @property
    def n0(self) -> int:
        return int(np.sum(self.z == 0))

    @classmethod
    def from_linear(cls, eta, y, z, g, lambda1, lambda0, budgets, k=None) -> "BoundsProblem":
        a_low, a_up = box_from_linear(eta, z, lambda1, lambda0)
        y = np.asarray(y, dtype=float)
        k = np.ones(y.shape[0]) if k is None else np.asarray(k, dtype=float)
        g = np.zeros((y.shape[0], 0)) if g is None else np.asarray(g, dtype=float)
        return cls(a_low, a_up, y, np.asarray(z), g, k, _budget_pair(budgets))

    @classmethod
    def from_fit(cls, dataset, fit, params: SensitivityParams, k=None, inflate_lambda=False,
                 budgets=None) -> "BoundsProblem":
        """Boxes from ``fit`` at ``(lambda1, lambda0)`` (or the gap-inflated
        values); budgets from ``(delta1, delta0)`` over the original arm sizes."""
        lam1, lam0 = params.lambda_prime() if inflate_lambda else (params.lambda1, params.lambda0)
        if budgets is None:
            budgets = (ceil_budget(dataset.n1, params.delta1), ceil_budget(dataset.n0, params.delta0))
        return cls.from_linear(fit.linear, dataset.y, dataset.z, dataset.g_design, lam1, lam0, budgets, k)

    def with_budgets(self, budgets) -> "BoundsProblem":
        return BoundsProblem(self.a_low, self.a_up, self.y, self.z, self.g, self.k, _budget_pair(budgets))

    def hajek_at(self, omega) -> float:
        return hajek(omega, self.y, self.z, self.k)


@dataclass
class BoundsResult:
    tau_min: float
    tau_max: float
    status: str  # "Exact" | "Relaxed" | "Infeasible"
    solver_stats: dict = field(default_factory=dict)
    weights_min: np.ndarray | None = None  # normalised omega_bar at the minimiser
    weights_max: np.ndarray | None = None
    delta_min: np.ndarray | None = None  # Delta_bar / t per unit at the minimiser
    delta_max: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.status != "Infeasible"

    def to_dict(self) -> dict:
        return {"tau_min": _json_float(self.tau_min), "tau_max": _json_float(self.tau_max),
                "status": self.status, "solver_stats": self.solver_stats}


def _json_float(v):
    if v is None:
        return None
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def infeasible_result(stats=None) -> BoundsResult:
    return BoundsResult(math.inf, -math.inf, "Infeasible", stats or {})


# --------------------------------------------------------------------------
# literal encoding


def big_m(problem: BoundsProblem) -> tuple:
    """Per-arm big-M constants for the indicator rows.

    Every exactly feasible point has ``t_z <= 1 / D_z`` where ``D_z`` is
    the sum of the ``budget_z`` smallest values of ``k_i * a_low_i`` in the
    arm, so ``M_z = 1.01 / D_z`` never cuts off a feasible point. ``None``
    marks an arm where ``D_z = 0``; the counting row can then be met at no
    cost and the relaxed rows are already exact there.
    """
    out = []
    for arm, b in ((1, problem.budgets[0]), (0, problem.budgets[1])):
        sel = problem.z == arm
        vals = np.sort(problem.k[sel] * problem.a_low[sel])
        b = int(math.ceil(b - 1e-9))
        D = float(vals[:b].sum()) if b > 0 else 0.0
        if D <= 0:
            out.append(None)
        else:
            out.append(min(BIG_M_SAFETY / D, BIG_M_CAP))
    return tuple(out)


def build_charnes_cooper(problem: BoundsProblem, sense: str = "max", mode: str = RELAXED) -> LpProblem:
    """Literal linear(-integer) program over ``(omega_bar, Delta_bar, t1, t0[, Delta_tilde])``."""
    mode = check_mode(mode)
    P = problem
    n = P.n
    T = (P.z == 1).astype(float)
    C = 1.0 - T
    nv = 2 * n + 2 + (n if mode == MILP else 0)
    iw, idl, it1, it0, idt = 0, n, 2 * n, 2 * n + 1, 2 * n + 2
    tcol = np.where(P.z == 1, it1, it0)
    rows, rhs, groups = [], [], {}

    def add(name, block, b):
        start = len(rows)
        rows.extend(block)
        rhs.extend(b)
        groups[name] = ("le", start, len(rows))

    eye = np.eye(n)
    # k a_low Delta_bar - omega_bar <= 0
    lo_rows = np.zeros((n, nv))
    lo_rows[:, iw:iw + n] = -eye
    lo_rows[:, idl:idl + n] = eye * (P.k * P.a_low)
    add("box_lower", list(lo_rows), [0.0] * n)
    # omega_bar - k t + k (1 - a_up) Delta_bar <= 0
    up_rows = np.zeros((n, nv))
    up_rows[:, iw:iw + n] = eye
    up_rows[:, idl:idl + n] = eye * (P.k * (1.0 - P.a_up))
    up_rows[np.arange(n), tcol] = -P.k
    add("box_upper", list(up_rows), [0.0] * n)
    # budget t - sum Delta_bar <= 0
    cnt = np.zeros((2, nv))
    cnt[0, idl:idl + n] = -T
    cnt[0, it1] = P.budgets[0]
    cnt[1, idl:idl + n] = -C
    cnt[1, it0] = P.budgets[1]
    add("counting", list(cnt), [0.0, 0.0])

    lo = np.zeros(nv)
    hi = np.full(nv, np.inf)
    binary = np.zeros(nv, dtype=bool)
    if mode == RELAXED:
        cap = np.zeros((n, nv))
        cap[:, idl:idl + n] = eye
        cap[np.arange(n), tcol] = -1.0
        add("delta_cap", list(cap), [0.0] * n)
    else:
        M = big_m(P)
        Mi = np.array([M[0] if zi == 1 else M[1] for zi in P.z], dtype=object)
        exact = np.array([m is not None for m in Mi])
        Mv = np.array([m if m is not None else 0.0 for m in Mi], dtype=float)
        # Delta_bar - t <= 0 always
        cap = np.zeros((n, nv))
        cap[:, idl:idl + n] = eye
        cap[np.arange(n), tcol] = -1.0
        add("delta_cap", list(cap), [0.0] * n)
        ex = np.flatnonzero(exact)
        # Delta_bar - M Delta_tilde <= 0
        g1 = np.zeros((ex.size, nv))
        g1[np.arange(ex.size), idl + ex] = 1.0
        g1[np.arange(ex.size), idt + ex] = -Mv[ex]
        add("glover_upper", list(g1), [0.0] * ex.size)
        # t - Delta_bar + M Delta_tilde <= M
        g2 = np.zeros((ex.size, nv))
        g2[np.arange(ex.size), tcol[ex]] = 1.0
        g2[np.arange(ex.size), idl + ex] = -1.0
        g2[np.arange(ex.size), idt + ex] = Mv[ex]
        add("glover_lower", list(g2), list(Mv[ex]))
        hi[idt:] = 1.0
        binary[idt:] = True
        # indicators of arms without a finite M are inert
        hi[idt + np.flatnonzero(~exact)] = 0.0

    A_le = np.array(rows).reshape(len(rows), nv)
    b_le = np.array(rhs, dtype=float)

    d = P.g.shape[1]
    A_eq = np.zeros((2 + d, nv))
    A_eq[0, iw:iw + n] = T
    A_eq[1, iw:iw + n] = C
    A_eq[2:, iw:iw + n] = (P.g * (T - C)[:, None]).T
    b_eq = np.zeros(2 + d)
    b_eq[:2] = 1.0
    groups_eq = {"normalization": ("eq", 0, 2), "balance": ("eq", 2, 2 + d)}

    c = np.zeros(nv)
    c[iw:iw + n] = P.y * (T - C)
    names = ([f"w{i}" for i in range(n)] + [f"d{i}" for i in range(n)] + ["t1", "t0"]
             + ([f"b{i}" for i in range(n)] if mode == MILP else []))
    return LpProblem(c=c, A_eq=A_eq, b_eq=b_eq, A_le=A_le, b_le=b_le, lo=lo, hi=hi,
                     sense=sense, binary=binary, var_names=names,
                     row_groups={**groups_eq, **groups})


def _literal_extract(P: BoundsProblem, x):
    n = P.n
    t = np.where(P.z == 1, x[2 * n], x[2 * n + 1])
    w = x[:n]
    with np.errstate(divide="ignore", invalid="ignore"):
        dl = np.where(t > 0, x[n:2 * n] / t, 0.0)
    return w, dl


# --------------------------------------------------------------------------
# compact encoding


class CompactLP:
    """Vertex-form relaxed program; ``fixed`` pins Delta per unit (-1 free, 0, 1)."""

    def __init__(self, problem: BoundsProblem, fixed=None):
        P = problem
        self.P = P
        n = P.n
        fixed = np.full(n, -1, dtype=int) if fixed is None else np.asarray(fixed, dtype=int)
        active = np.flatnonzero(P.k > 0)
        self.active = active
        m1_zero = int(np.sum((P.k == 0) & (P.z == 1)))
        m0_zero = int(np.sum((P.k == 0) & (P.z == 0)))
        b1 = max(0, P.budgets[0] - m1_zero)
        b0 = max(0, P.budgets[1] - m0_zero)
        self.eff_budgets = (b1, b0)

        na = active.size
        # columns: per active unit p, q, r; then t1, t0
        nv = 3 * na + 2
        it1, it0 = 3 * na, 3 * na + 1
        k = P.k[active]
        z = P.z[active]
        sgn = np.where(z == 1, 1.0, -1.0)
        lo_w = k * P.a_low[active]
        up_w = k * P.a_up[active]
        # omega_bar contribution of each vertex column
        wcol = np.empty(3 * na)
        wcol[0::3] = k
        wcol[1::3] = lo_w
        wcol[2::3] = up_w
        dcol = np.tile([0.0, 1.0, 1.0], na)
        unit_of = np.repeat(np.arange(na), 3)
        self.wcol, self.dcol, self.unit_of = wcol, dcol, unit_of

        c = np.zeros(nv)
        c[: 3 * na] = wcol * (P.y[active] * sgn)[unit_of]

        tcol = np.where(z == 1, it1, it0)
        A_le = np.zeros((na + 2, nv))
        A_le[unit_of, np.arange(3 * na)] = 1.0
        A_le[np.arange(na), tcol] = -1.0
        zc = z[unit_of]
        A_le[na, : 3 * na] = -dcol * (zc == 1)
        A_le[na, it1] = b1
        A_le[na + 1, : 3 * na] = -dcol * (zc == 0)
        A_le[na + 1, it0] = b0
        b_le = np.zeros(na + 2)

        d = P.g.shape[1]
        A_eq = np.zeros((2 + d, nv))
        A_eq[0, : 3 * na] = wcol * (zc == 1)
        A_eq[1, : 3 * na] = wcol * (zc == 0)
        if d:
            A_eq[2:, : 3 * na] = (P.g[active][unit_of] * (wcol * sgn[unit_of])[:, None]).T
        b_eq = np.zeros(2 + d)
        b_eq[:2] = 1.0

        hi = np.full(nv, np.inf)
        fa = fixed[active]
        hi[3 * np.flatnonzero(fa == 1)] = 0.0            # bounded: no p vertex
        for off in (1, 2):
            hi[3 * np.flatnonzero(fa == 0) + off] = 0.0  # unbounded: no q, r vertices
        self.lp = LpProblem(c=c, A_eq=A_eq, b_eq=b_eq, A_le=A_le, b_le=b_le,
                            lo=np.zeros(nv), hi=hi, sense="max",
                            row_groups={"normalization": ("eq", 0, 2), "balance": ("eq", 2, 2 + d),
                                        "unit": ("le", 0, na), "counting": ("le", na, na + 2)})
        self.tcols = (it1, it0)
        self.z_active = z
        # units fixed to 1 must use the whole unit row
        self.force_full = np.flatnonzero(fa == 1)

    def extract(self, x):
        P = self.P
        na = self.active.size
        xv = x[: 3 * na]
        w_act = np.bincount(self.unit_of, weights=xv * self.wcol, minlength=na)
        d_act = np.bincount(self.unit_of, weights=xv * self.dcol, minlength=na)
        t = np.where(self.z_active == 1, x[self.tcols[0]], x[self.tcols[1]])
        w = np.zeros(P.n)
        dl = np.ones(P.n)
        w[self.active] = w_act
        with np.errstate(divide="ignore", invalid="ignore"):
            dl[self.active] = np.where(t > 0, d_act / t, 0.0)
        return w, dl


def _solve_compact(problem: BoundsProblem, fixed=None):
    cl = CompactLP(problem, fixed)
    lp = cl.lp
    if cl.force_full.size:
        # Delta fixed at one means q + r = t exactly: tighten those unit rows to equalities
        lp = _unit_rows_to_eq(lp, cl.force_full)
    out = {}
    warm = None
    iters = 0
    for sense in ("min", "max"):
        sol = solve_lp(lp.with_objective(lp.c, sense), warm_start=warm)
        iters += sol.iterations
        if sol.status is Status.INFEASIBLE:
            return None, iters
        if sol.status is Status.UNBOUNDED:
            out[sense] = (sol.objective_value, None, None)
            continue
        warm = sol.basis
        w, dl = cl.extract(sol.x)
        out[sense] = (sol.objective_value, w, dl)
    return out, iters


def _unit_rows_to_eq(lp: LpProblem, units) -> LpProblem:
    keep = np.ones(lp.A_le.shape[0], dtype=bool)
    keep[units] = False
    A_eq = np.vstack([lp.A_eq, lp.A_le[units]])
    b_eq = np.concatenate([lp.b_eq, lp.b_le[units]])
    return LpProblem(c=lp.c, A_eq=A_eq, b_eq=b_eq, A_le=lp.A_le[keep], b_le=lp.b_le[keep],
                     lo=lp.lo, hi=lp.hi, sense=lp.sense)


def _solve_relaxed(problem: BoundsProblem, formulation: str, fixed=None):
    if formulation == "colgen":
        out, cg = solve_colgen(problem, fixed)
        return out, {"iterations": cg.lp_iterations, "rounds": cg.iterations}
    if formulation == "compact":
        out, iters = _solve_compact(problem, fixed)
        return out, {"iterations": iters}
    raise ConfigError(f"unknown formulation {formulation!r}")


def solve_fixed(problem: BoundsProblem, fixed, formulation: str = "colgen") -> BoundsResult:
    """Bounds with ``Delta_i`` pinned by ``fixed`` (entries 0 or 1; -1 leaves a unit free)."""
    t0 = time.perf_counter()
    out, stats = _solve_relaxed(problem, formulation, fixed)
    stats.update(formulation=formulation, seconds=time.perf_counter() - t0)
    if out is None:
        return infeasible_result(stats)
    return _assemble(out, "Exact" if np.all(np.asarray(fixed) >= 0) else "Relaxed", stats)


def _assemble(out, status, stats) -> BoundsResult:
    vmin, wmin, dmin = out["min"]
    vmax, wmax, dmax = out["max"]
    return BoundsResult(float(vmin), float(vmax), status, stats, wmin, wmax, dmin, dmax)


def solve_bounds(problem: BoundsProblem, mode: str = RELAXED, formulation: str = "colgen",
                 gap_tol: float = 1e-6) -> BoundsResult:
    """Minimum and maximum of the weighted difference in means.

    ``mode`` is ``"relaxed"`` (default) or ``"milp"``. The relaxed program
    is solved by column generation (``formulation="colgen"``), by the
    simplex on the compact encoding (``"compact"``) or on the literal
    encoding (``"literal"``). In MILP mode the literal formulation hands
    the Glover-linearised program to the generic branch and bound; any
    other formulation branches directly on the indicators with column
    generation for the node relaxations.
    """
    mode = check_mode(mode)
    t0 = time.perf_counter()
    if mode == MILP and formulation != "literal":
        return _solve_exact_colgen(problem, gap_tol, t0)
    if mode == RELAXED and formulation != "literal":
        out, stats = _solve_relaxed(problem, formulation)
        stats.update(formulation=formulation, mode=mode, seconds=time.perf_counter() - t0)
        if out is None:
            return infeasible_result(stats)
        return _assemble(out, "Relaxed", stats)

    out = {}
    iters = nodes = 0
    for sense in ("min", "max"):
        lp = build_charnes_cooper(problem, sense, mode)
        sol = solve_milp(lp, gap_tol=gap_tol) if mode == MILP else solve_lp(lp)
        iters += sol.iterations
        nodes += sol.nodes
        if sol.status is Status.INFEASIBLE:
            return infeasible_result({"iterations": iters, "nodes": nodes, "mode": mode})
        if sol.status is Status.UNBOUNDED:
            out[sense] = (sol.objective_value, None, None)
            continue
        w, dl = _literal_extract(problem, sol.x)
        out[sense] = (sol.objective_value, w, dl)
    stats = {"iterations": iters, "nodes": nodes, "formulation": "literal", "mode": mode,
             "seconds": time.perf_counter() - t0}
    status = "Exact" if mode == MILP else "Relaxed"
    if any(v[1] is None for v in out.values()):
        status = "Relaxed"
    return _assemble(out, status, stats)


def _arm_rounding(problem: BoundsProblem, active):
    """Heuristic completions: in each arm bound the free units with the largest relaxed share."""
    z = problem.z[active]
    need = {}
    for arm, b in ((1, problem.budgets[0]), (0, problem.budgets[1])):
        n_zero = int(np.sum((problem.z == arm) & (problem.k == 0)))
        need[arm] = max(0, int(math.ceil(b - n_zero - 1e-9)))

    def heuristic(fixed, values):
        full = fixed.copy()
        for arm in (1, 0):
            in_arm = z == arm
            short = need[arm] - int(np.sum(full[in_arm] == 1))
            free = np.flatnonzero(in_arm & (full < 0))
            order = free[np.argsort(-values[free], kind="stable")]
            full[order[:max(short, 0)]] = 1
            full[order[max(short, 0):]] = 0
        return [full]
    return heuristic


def _exact_side(problem: BoundsProblem, sense: str, gap_tol: float):
    """Branch and bound on the indicators of units with positive multiplicity."""
    active = np.flatnonzero(problem.k > 0)

    def relax(fixed_active):
        fixed = np.full(problem.n, -1, dtype=np.int8)
        fixed[active] = fixed_active
        cg = ColumnGeneration(problem, fixed)
        r = cg.solve(sense)
        if r is None:
            return Relaxation(Status.INFEASIBLE, iterations=cg.lp_iterations)
        return Relaxation(Status.OPTIMAL, r[0], r[2][active], r, cg.lp_iterations)

    return branch_and_bound(relax, active.size, sense, gap_tol=gap_tol,
                            heuristics=_arm_rounding(problem, active))


def _solve_exact_colgen(problem: BoundsProblem, gap_tol: float, t0: float) -> BoundsResult:
    out, gaps = {}, {}
    iters = nodes = 0
    for sense in ("min", "max"):
        res = _exact_side(problem, sense, gap_tol)
        iters += res.iterations
        nodes += res.nodes
        if res.status is not Status.OPTIMAL:
            return infeasible_result({"iterations": iters, "nodes": nodes, "mode": MILP,
                                      "formulation": "colgen"})
        out[sense] = res.payload
        gaps[sense] = res.gap
    stats = {"iterations": iters, "nodes": nodes, "formulation": "colgen", "mode": MILP,
             "gap": max(gaps.values()), "seconds": time.perf_counter() - t0}
    return _assemble(out, "Exact", stats)


def solve_side(problem: BoundsProblem, sense: str, mode: str = RELAXED, gap_tol: float = 1e-6):
    """One end of the interval: ``(value, w, delta)``, or ``None`` when infeasible."""
    mode = check_mode(mode)
    if sense not in ("min", "max"):
        raise ConfigError(f"sense must be 'min' or 'max', got {sense!r}")
    if mode == RELAXED:
        return ColumnGeneration(problem).solve(sense)
    res = _exact_side(problem, sense, gap_tol)
    return res.payload if res.status is Status.OPTIMAL else None


def point_estimate(dataset, fit) -> float:
    """Hajek overlap-weight estimate at the fitted propensity."""
    return hajek(overlap_weights(fit.linear, dataset.z), dataset.y, dataset.z)


def check_solution(problem: BoundsProblem, weights) -> float:
    """Objective implied by normalised weights (for consistency checks)."""
    sgn = np.where(problem.z == 1, 1.0, -1.0)
    return float(np.sum(weights * sgn * problem.y))


__all__ = ["BoundsProblem", "BoundsResult", "SensitivityParams", "UnitBox", "adjust_propensity",
           "box_from_linear", "build_charnes_cooper", "ceil_budget", "hajek", "overlap_weights",
           "point_estimate", "solve_bounds", "solve_fixed", "solve_side", "unit_box", "SolverError"]
