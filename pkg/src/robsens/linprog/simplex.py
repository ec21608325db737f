"""Two-phase bounded revised simplex.

The problem is brought to ``min c @ x, A x = b, 0 <= x <= u`` with row
equilibration; ``<=`` rows get slacks that start basic when their
right-hand side is nonnegative, every other row gets an artificial.
The pivot loop lives in a compiled kernel when available
(``BACKEND == "cython"``) and in NumPy otherwise.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from ..errors import NumericalBreakdown
from . import _kernel_py
from .problem import LpProblem, LpSolution, Status

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
BLAND_AFTER = 500
REFACTOR_EVERY = 100


def _load_backend():
    if os.environ.get("ROBSENS_BACKEND", "").lower() == "python":
        return "python", None
    try:
        from . import _kernel
    except ImportError:  # pragma: no cover - depends on build
        return "python", None
    return "cython", _kernel


BACKEND, _ckernel = _load_backend()


class StandardForm:
    """``problem`` rewritten as ``min c @ x, A x = b, 0 <= x <= u``.

    Column layout: transformed structural columns, then slacks for the
    ``<=`` rows, then artificials. ``recover`` maps a standard-form point
    back to the original variables.
    """

    def __init__(self, problem: LpProblem):
        n = problem.n_vars
        lo, hi = problem.lo, problem.hi
        cols = []       # (orig index, sign)
        offset = np.zeros(n)
        u = []
        for j in range(n):
            if np.isfinite(lo[j]):
                cols.append((j, 1.0))
                offset[j] = lo[j]
                u.append(hi[j] - lo[j])
            elif np.isfinite(hi[j]):
                cols.append((j, -1.0))
                offset[j] = hi[j]
                u.append(np.inf)
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
                u.extend([np.inf, np.inf])
        self.n_orig = n
        self.cols = cols
        self.offset = offset
        idx = np.array([j for j, _ in cols], dtype=int)
        sgn = np.array([s for _, s in cols])
        self.idx, self.sgn = idx, sgn

        A_rows = []
        b_rows = []
        kinds = []
        for A, b, kind in ((problem.A_eq, problem.b_eq, "eq"), (problem.A_le, problem.b_le, "le")):
            if A.shape[0]:
                A_rows.append(A[:, idx] * sgn)
                b_rows.append(b - A @ offset)
                kinds.extend([kind] * A.shape[0])
        if A_rows:
            A0 = np.vstack(A_rows)
            b0 = np.concatenate(b_rows)
        else:
            A0 = np.zeros((0, len(cols)))
            b0 = np.zeros(0)
        kinds = np.array(kinds)

        # empty rows are checked and dropped
        scale = np.abs(A0).max(axis=1) if A0.shape[0] else np.zeros(0)
        empty = scale == 0
        self.trivially_infeasible = bool(
            np.any(empty & (kinds == "eq") & (np.abs(b0) > FEAS_TOL))
            or np.any(empty & (kinds == "le") & (b0 < -FEAS_TOL)))
        keep = ~empty
        self.row_map = np.flatnonzero(keep)
        self.n_rows_orig = kinds.size
        A0, b0, kinds, scale = A0[keep], b0[keep], kinds[keep], scale[keep]
        A0 = A0 / scale[:, None]
        b0 = b0 / scale

        m = A0.shape[0]
        le = np.flatnonzero(kinds == "le")
        n_struct = len(cols)
        slack = np.zeros((m, le.size))
        slack[le, np.arange(le.size)] = 1.0
        flip = b0 < 0
        A1 = np.hstack([A0, slack])
        A1[flip] *= -1.0
        b1 = np.where(flip, -b0, b0)
        self.row_mult = np.where(flip, -1.0, 1.0) / scale
        self.n_eq = problem.A_eq.shape[0]

        basis = np.empty(m, dtype=np.int64)
        need_art = np.ones(m, dtype=bool)
        for k, row in enumerate(le):
            if not flip[row]:
                basis[row] = n_struct + k
                need_art[row] = False
        art_rows = np.flatnonzero(need_art)
        art = np.zeros((m, art_rows.size))
        art[art_rows, np.arange(art_rows.size)] = 1.0
        n_before_art = n_struct + le.size
        basis[art_rows] = n_before_art + np.arange(art_rows.size)

        self.A = np.ascontiguousarray(np.hstack([A1, art]))
        self.b = b1
        self.m = m
        self.n_struct = n_struct
        self.n_art = art_rows.size
        self.art_start = n_before_art
        self.u = np.concatenate([np.asarray(u, dtype=float), np.full(le.size, np.inf), np.zeros(art_rows.size)])
        self.initial_basis = basis
        c_struct = problem.c[idx] * sgn
        self.c_struct = c_struct
        self.c_offset = float(problem.c @ offset)
        self.sense = problem.sense
        if BACKEND == "cython":
            self._csc = _to_csc(self.A)

    def cost(self, problem_c, sense) -> np.ndarray:
        c = np.zeros(self.A.shape[1])
        c[: self.n_struct] = problem_c[self.idx] * self.sgn
        if sense == "max":
            c = -c
        return c

    def recover(self, xs: np.ndarray) -> np.ndarray:
        x = self.offset.copy()
        np.add.at(x, self.idx, self.sgn * xs[: self.n_struct])
        return x


def _to_csc(A):
    m, N = A.shape
    nz_rows, nz_cols = np.nonzero(A.T)
    # np.nonzero on A.T walks columns of A in order
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.add.at(indptr, nz_rows + 1, 1)
    indptr = np.cumsum(indptr)
    indices = nz_cols.astype(np.int64)
    data = A[indices, nz_rows].astype(float)
    return indptr, np.ascontiguousarray(indices), np.ascontiguousarray(data)


class _Engine:
    def __init__(self, sf: StandardForm, basis, status):
        self.sf = sf
        self.basis = np.array(basis, dtype=np.int64)
        self.status = np.array(status, dtype=np.int8)
        m = sf.m
        self.binv = np.eye(m)
        self.xb = np.zeros(m)
        self.counters = np.zeros(4, dtype=np.int64)
        self._y = np.zeros(m)
        self._alpha = np.zeros(m)

    def refactor(self):
        sf = self.sf
        B = sf.A[:, self.basis]
        try:
            self.binv = np.ascontiguousarray(np.linalg.inv(B))
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis matrix") from exc
        at_up = self.status == 1
        rhs = sf.b - sf.A[:, at_up] @ sf.u[at_up]
        self.xb = self.binv @ rhs

    def run(self, c, max_iter):
        """Pivot to optimality for cost ``c``; return kernel status code."""
        sf = self.sf
        while True:
            self.refactor()
            before = int(self.counters[0])
            if before >= max_iter:
                raise NumericalBreakdown(f"simplex exceeded {max_iter} iterations")
            budget = min(max(REFACTOR_EVERY, sf.m // 4), max_iter - before)
            if BACKEND == "cython":
                indptr, indices, data = sf._csc
                code = _ckernel.run_pivots(
                    indptr, indices, data, c, sf.u, self.binv, self.xb, self.basis,
                    self.status, self.counters, budget, DUAL_TOL, PIVOT_TOL, FEAS_TOL,
                    BLAND_AFTER, self._y, self._alpha)
            else:
                code = _kernel_py.run_pivots(
                    sf.A, c, sf.u, self.binv, self.xb, self.basis, self.status,
                    self.counters, budget, DUAL_TOL, PIVOT_TOL, FEAS_TOL, BLAND_AFTER)
            moved = int(self.counters[0]) - before
            if code == _kernel_py.UNBOUNDED:
                return code
            # optimality is only accepted when confirmed on a fresh factorization
            if code == _kernel_py.OPTIMAL and moved == 0:
                return code

    def point(self):
        sf = self.sf
        x = np.where(self.status == 1, sf.u, 0.0)
        x[self.basis] = self.xb
        return x


def solve_lp(problem: LpProblem, warm_start=None, max_iter: int | None = None) -> LpSolution:
    """Solve a linear program (``problem.binary`` is ignored).

    ``warm_start`` may be the ``basis`` of an earlier solution of a
    problem with identical constraints and bounds; phase one is then
    skipped when that basis is still primal feasible.
    """
    sf = StandardForm(problem)
    if sf.trivially_infeasible:
        return LpSolution(Status.INFEASIBLE)
    N = sf.A.shape[1]
    if max_iter is None:
        max_iter = 50 * (sf.m + N) + 1000
    status = np.zeros(N, dtype=np.int8)
    c2 = sf.cost(problem.c, problem.sense)

    eng = None
    if warm_start is not None:
        basis, st = warm_start
        if len(basis) == sf.m and len(st) == N:
            eng = _Engine(sf, basis, st)
            try:
                eng.refactor()
            except NumericalBreakdown:
                eng = None
            else:
                if eng.xb.min(initial=0.0) < -FEAS_TOL or np.any(eng.xb > sf.u[eng.basis] + FEAS_TOL):
                    eng = None
    if eng is None:
        status[sf.initial_basis] = 2
        eng = _Engine(sf, sf.initial_basis, status)
        if sf.n_art:
            c1 = np.zeros(N)
            c1[sf.art_start:] = 1.0
            u_art = sf.u[sf.art_start:].copy()
            sf.u[sf.art_start:] = np.inf
            try:
                eng.run(c1, max_iter)
            finally:
                sf.u[sf.art_start:] = u_art
            eng.refactor()
            infeas = float(eng.point()[sf.art_start:].sum())
            if infeas > FEAS_TOL * max(1.0, sf.m ** 0.5):
                return LpSolution(Status.INFEASIBLE, iterations=int(eng.counters[0]))
            # artificials become fixed at zero for phase two
            nb_art = (np.arange(N) >= sf.art_start) & (eng.status != 2)
            eng.status[nb_art] = 0

    code = eng.run(c2, max_iter)
    iters = int(eng.counters[0])
    if code == _kernel_py.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, iterations=iters,
                          objective_value=np.inf if problem.sense == "max" else -np.inf)
    xs = eng.point()
    x = sf.recover(xs)
    eng.refactor()
    y_sf = c2[eng.basis] @ eng.binv
    duals = np.zeros(sf.n_rows_orig)
    duals[sf.row_map] = y_sf * sf.row_mult
    if problem.sense == "max":
        duals = -duals
    sol = LpSolution(Status.OPTIMAL, x=x, objective_value=problem.objective(x),
                     iterations=iters, basis=(eng.basis.copy(), eng.status.copy()),
                     duals_eq=duals[: sf.n_eq], duals_le=duals[sf.n_eq:])
    return sol
