"""Column generation for the relaxed bound program.

After normalisation each arm's weights range over a polytope ``W_z``
(one per arm, linked only through the balance rows), so the program is

    opt  sum_j lam_j m1_j - sum_l mu_l m0_l
    s.t. sum_j lam_j G1_j = sum_l mu_l G0_l,  sum lam = sum mu = 1

over the vertices ``(m, G)`` (outcome mean, balance-covariate means) of
``W_1`` and ``W_0``. The master has ``d + 2`` rows. Pricing asks for the
vertex of ``W_z`` maximising a weighted mean of some per-unit score,
which is a single-arm linear-fractional problem: Dinkelbach iterations
whose inner step is a greedy choice of the ``budget`` units that lose
least by being held to their box. That inner step is exact for the
relaxed region, so column generation reproduces the relaxed LP optimum.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericalBreakdown
from .linprog import LpProblem, Status, solve_lp

RC_TOL = 1e-9
PHASE1_TOL = 1e-9
MAX_DINKELBACH = 200


class ArmPolytope:
    """Normalised weights of one arm, relaxed indicator region.

    ``k``, ``a_low``, ``a_up`` cover the arm's units with positive
    multiplicity; ``fixed`` pins indicators (-1 free); ``budget`` is the
    number of those units that must be bounded (fractional allowed).
    """

    def __init__(self, k, a_low, a_up, budget: float, fixed=None):
        self.k = np.asarray(k, dtype=float)
        self.a_low = np.asarray(a_low, dtype=float)
        self.a_up = np.asarray(a_up, dtype=float)
        n = self.k.size
        fixed = np.full(n, -1) if fixed is None else np.asarray(fixed)
        self.free = np.flatnonzero(fixed < 0)
        self.one = fixed == 1
        self.zero = fixed == 0
        self.need = max(0.0, float(budget) - float(self.one.sum()))
        self.feasible = n > 0 and self.need <= self.free.size + 1e-12

    def greedy(self, d):
        """Maximise ``sum k_i omega_i d_i`` over the (unnormalised) region."""
        up = d >= 0
        w0 = up.astype(float)                         # unbounded unit: 0 or 1
        w1 = np.where(up, self.a_up, self.a_low)      # bounded unit: box end
        loss = self.k * d * (w0 - w1)
        delta = self.one.astype(float)
        free = self.free
        need = self.need
        if need > 0:
            order = free[np.argsort(loss[free], kind="stable")]
            whole = int(math.floor(need + 1e-12))
            delta[order[:whole]] = 1.0
            frac = need - whole
            if frac > 1e-12 and whole < order.size:
                delta[order[whole]] = frac
        omega = (1.0 - delta) * w0 + delta * w1
        omega[self.zero] = w0[self.zero]
        return omega, delta

    def maximize(self, v):
        """Vertex of the normalised polytope maximising ``sum w_i v_i``.

        Returns ``(value, w, delta, t)`` with ``w = k omega / D`` and
        ``t = 1 / D``.
        """
        theta = float(v.min())
        best = None
        for _ in range(MAX_DINKELBACH):
            omega, delta = self.greedy(v - theta)
            kw = self.k * omega
            D = float(kw.sum())
            if not D > 0:
                break
            new = float(kw @ v) / D
            best = (new, kw / D, delta, 1.0 / D)
            if new <= theta + 1e-15 * (1.0 + abs(theta)):
                break
            theta = new
        else:
            raise NumericalBreakdown("Dinkelbach iterations did not settle")
        if best is None:
            raise NumericalBreakdown("arm polytope has no positive-mass vertex")
        return best


class _Column:
    __slots__ = ("arm", "w", "delta", "t", "m", "G")

    def __init__(self, arm, w, delta, t, y, g):
        self.arm, self.w, self.delta, self.t = arm, w, delta, t
        self.m = float(w @ y)
        self.G = g.T @ w


class ColumnGeneration:
    """Relaxed bounds for one ``BoundsProblem`` (optionally with pinned indicators)."""

    def __init__(self, problem, fixed=None):
        P = problem
        self.P = P
        fixed = np.full(P.n, -1) if fixed is None else np.asarray(fixed)
        self.arms = {}
        for arm, b in ((1, P.budgets[0]), (0, P.budgets[1])):
            sel = np.flatnonzero((P.z == arm) & (P.k > 0))
            n_zero = int(np.sum((P.z == arm) & (P.k == 0)))
            poly = ArmPolytope(P.k[sel], P.a_low[sel], P.a_up[sel], max(0.0, b - n_zero), fixed[sel])
            self.arms[arm] = (sel, poly, P.y[sel], P.g[sel])
        self.d = P.g.shape[1]
        self.iterations = 0
        self.lp_iterations = 0
        gscale = float(np.abs(P.g).max()) if P.g.size else 1.0
        self.gscale = max(1.0, gscale)

    @property
    def feasible_arms(self) -> bool:
        return all(poly.feasible for _, poly, _, _ in self.arms.values())

    def _price(self, arm, score):
        sel, poly, y, g = self.arms[arm]
        val, w, delta, t = poly.maximize(score)
        return val, _Column(arm, w, delta, t, y, g)

    def _master(self, cols, art, cost):
        """Solve the restricted master; ``art`` adds +/- artificials on balance rows."""
        d = self.d
        n_art = 2 * d if art else 0
        nv = len(cols) + n_art
        A = np.zeros((d + 2, nv))
        c = np.zeros(nv)
        for j, col in enumerate(cols):
            s = 1.0 if col.arm == 1 else -1.0
            A[:d, j] = s * col.G
            A[d if col.arm == 1 else d + 1, j] = 1.0
            c[j] = cost(col)
        if art:
            A[:d, len(cols):len(cols) + d] = np.eye(d)
            A[:d, len(cols) + d:] = -np.eye(d)
            c[len(cols):] = 1.0
        b = np.zeros(d + 2)
        b[d:] = 1.0
        return LpProblem(c=c, A_eq=A, b_eq=b)

    def _loop(self, cols, sense, art, cost, phase_two):
        """Add priced columns until none improves; returns the final master solution."""
        seen = set()
        max_rounds = 200 * (self.d + 2) + 200
        sign = 1.0 if sense == "max" else -1.0
        for _ in range(max_rounds):
            self.iterations += 1
            lp = self._master(cols, art, cost)
            lp.sense = sense
            sol = solve_lp(lp)
            self.lp_iterations += sol.iterations
            if sol.status is not Status.OPTIMAL:
                return sol
            pi = sol.duals_eq[: self.d]
            sig = sol.duals_eq[self.d:]
            added = False
            for arm in (1, 0):
                sel, poly, y, g = self.arms[arm]
                s = 1.0 if arm == 1 else -1.0
                # reduced cost of a column w: sum_i w_i v_i - sigma_arm
                v = (s * y if phase_two else np.zeros_like(y)) - s * (g @ pi)
                val, col = self._price(arm, sign * v)
                scale = 1.0 + float(np.abs(v).max(initial=0.0))
                if val - sign * sig[0 if arm == 1 else 1] > RC_TOL * scale:
                    key = (arm, col.w.tobytes())
                    if key in seen:
                        continue
                    seen.add(key)
                    cols.append(col)
                    added = True
            if not added:
                return sol
        raise NumericalBreakdown("column generation did not converge")

    def solve(self, sense: str):
        """Return ``(value, w, delta)`` over all units, or ``None`` if infeasible."""
        if not self.feasible_arms:
            return None
        cols = []
        for arm in (1, 0):
            _, col = self._price(arm, np.zeros(self.arms[arm][2].size))
            cols.append(col)
            # a second, outcome-driven start column per arm
            s = 1.0 if arm == 1 else -1.0
            _, col = self._price(arm, s * self.arms[arm][2] * (1.0 if sense == "max" else -1.0))
            cols.append(col)
        if self.d:
            sol = self._loop(cols, "min", True, lambda col: 0.0, phase_two=False)
            if sol.status is not Status.OPTIMAL or sol.objective_value > PHASE1_TOL * self.gscale:
                return None
            # keep the columns; artificials are dropped for phase two
        sol = self._loop(cols, sense, False, lambda col: col.m if col.arm == 1 else -col.m, phase_two=True)
        if sol.status is Status.INFEASIBLE:
            return None
        if sol.status is Status.UNBOUNDED:  # pragma: no cover - convexity rows rule this out
            return (math.inf if sense == "max" else -math.inf), None, None
        lam = sol.x
        return sol.objective_value, *self._combine(cols, lam)

    def _combine(self, cols, lam):
        P = self.P
        w = np.zeros(P.n)
        dl = np.ones(P.n)
        for arm in (1, 0):
            sel, poly, _, _ = self.arms[arm]
            ws = np.zeros(sel.size)
            num = np.zeros(sel.size)
            den = 0.0
            for col, l in zip(cols, lam):
                if col.arm != arm or l <= 0:
                    continue
                ws += l * col.w
                num += l * col.t * col.delta
                den += l * col.t
            w[sel] = ws
            dl[sel] = num / den if den > 0 else 0.0
        return w, dl


def solve_colgen(problem, fixed=None):
    """``{"min": (value, w, delta), "max": ...}`` or ``None`` when infeasible."""
    cg = ColumnGeneration(problem, fixed)
    out = {}
    for sense in ("min", "max"):
        r = cg.solve(sense)
        if r is None:
            return None, cg
        out[sense] = r
    return out, cg
