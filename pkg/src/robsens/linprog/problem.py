"""Problem and solution containers for the embedded LP/MILP solver."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class LpProblem:
    """``min``/``max`` of ``c @ x`` subject to ``A_eq x = b_eq``,
    ``A_le x <= b_le`` and ``lo <= x <= hi``.

    ``binary`` marks variables restricted to {0, 1}; leave it empty for a
    pure LP. ``row_groups`` optionally names contiguous blocks of rows
    (``{"name": ("le" | "eq", start, stop)}``) for reporting and dumps.
    """

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_le: np.ndarray | None = None
    b_le: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    sense: str = "min"
    binary: np.ndarray | None = None
    var_names: list[str] | None = None
    row_groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "eq")
        self.A_le, self.b_le = _rows(self.A_le, self.b_le, n, "le")
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).ravel().copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel().copy()
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bounds do not match the number of variables")
        if np.any(self.lo > self.hi):
            raise ValueError("lower bound exceeds upper bound")
        if self.binary is None:
            self.binary = np.zeros(n, dtype=bool)
        else:
            self.binary = np.asarray(self.binary, dtype=bool).ravel()
            if self.binary.size != n:
                raise ValueError("binary mask does not match the number of variables")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def with_objective(self, c, sense: str) -> "LpProblem":
        return LpProblem(
            c, self.A_eq, self.b_eq, self.A_le, self.b_le, self.lo, self.hi,
            sense, self.binary, self.var_names, dict(self.row_groups),
        )

    def with_bounds(self, lo, hi) -> "LpProblem":
        return LpProblem(
            self.c, self.A_eq, self.b_eq, self.A_le, self.b_le, lo, hi,
            self.sense, self.binary, self.var_names, dict(self.row_groups),
        )

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float))

    def max_violation(self, x, scaled: bool = True) -> float:
        """Largest constraint or bound violation at ``x``.

        With ``scaled`` each row is divided by its largest absolute entry,
        matching the equilibration the solver applies.
        """
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for A, b, kind in ((self.A_eq, self.b_eq, "eq"), (self.A_le, self.b_le, "le")):
            if A.shape[0] == 0:
                continue
            r = A @ x - b
            if kind == "le":
                r = np.maximum(r, 0.0)
            if scaled:
                s = np.abs(A).max(axis=1)
                s[s == 0] = 1.0
                r = r / s
            worst = max(worst, float(np.abs(r).max()))
        worst = max(worst, float(np.max(np.maximum(self.lo - x, 0.0), initial=0.0)))
        worst = max(worst, float(np.max(np.maximum(x - self.hi, 0.0), initial=0.0)))
        return worst


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None = None
    objective_value: float = float("nan")
    iterations: int = 0
    nodes: int = 0
    basis: tuple | None = None
    gap: float = 0.0
    duals_eq: np.ndarray | None = None  # d objective / d b_eq
    duals_le: np.ndarray | None = None  # d objective / d b_le

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _rows(A, b, n, kind):
    if A is None:
        if b is not None and np.size(b):
            raise ValueError(f"b_{kind} given without A_{kind}")
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n)), np.zeros(0)
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[1] != n or A.shape[0] != b.size:
        raise ValueError(f"A_{kind} has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


def _fmt(v: float) -> str:
    return repr(float(v))


def to_lp_format(problem: LpProblem, name: str = "robsens") -> str:
    """Render ``problem`` in CPLEX LP text format for external cross-checks."""
    names = problem.var_names or [f"x{j}" for j in range(problem.n_vars)]
    names = [_sanitize(s) for s in names]

    def linear(coefs):
        parts = []
        for j in np.flatnonzero(coefs):
            v = coefs[j]
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_fmt(abs(v))} {names[j]}")
        if not parts:
            return "0 " + names[0]
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else text

    label = {}
    for group, (kind, start, stop) in problem.row_groups.items():
        for i in range(start, stop):
            label[(kind, i)] = f"{_sanitize(group)}_{i - start}"

    out = [f"\\ {name}", "Maximize" if problem.sense == "max" else "Minimize", f" obj: {linear(problem.c)}", "Subject To"]
    for i in range(problem.A_eq.shape[0]):
        out.append(f" {label.get(('eq', i), f'e{i}')}: {linear(problem.A_eq[i])} = {_fmt(problem.b_eq[i])}")
    for i in range(problem.A_le.shape[0]):
        out.append(f" {label.get(('le', i), f'l{i}')}: {linear(problem.A_le[i])} <= {_fmt(problem.b_le[i])}")
    out.append("Bounds")
    for j in range(problem.n_vars):
        lo, hi = problem.lo[j], problem.hi[j]
        if np.isinf(lo) and np.isinf(hi):
            out.append(f" {names[j]} free")
        elif lo == hi:
            out.append(f" {names[j]} = {_fmt(lo)}")
        else:
            lo_s = "-inf" if np.isinf(lo) else _fmt(lo)
            hi_s = "+inf" if np.isinf(hi) else _fmt(hi)
            out.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    if problem.binary.any():
        out.append("Binary")
        out.extend(f" {names[j]}" for j in np.flatnonzero(problem.binary))
    out.append("End")
    return "\n".join(out) + "\n"


def _sanitize(s: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "_." else "_" for ch in s)
