"""Observational data, CSV ingestion and covariate design construction.

Rows are stored treated-first (stable within each arm). ``original_index``
remembers where every row came from so reports can refer back to the
input file.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (AllTreatedOrAllControl, ConfigError, MissingColumn, NonBinaryTreatment,
                     NonNumericValue, RankDeficientDesign)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Observation:
    y: float
    z: int
    x: tuple


@dataclass(frozen=True)
class Transform:
    """One design column: ``identity`` or ``standardize`` of a raw column,
    or ``product`` of two raw columns."""

    kind: str
    columns: tuple

    def __post_init__(self):
        arity = {"identity": 1, "standardize": 1, "product": 2}
        if self.kind not in arity:
            raise ConfigError(f"unknown transform {self.kind!r}")
        if len(self.columns) != arity[self.kind]:
            raise ConfigError(f"{self.kind} takes {arity[self.kind]} column(s), got {self.columns}")

    @classmethod
    def parse(cls, item) -> "Transform":
        """Accepts ``"x1"``, ``"std:x1"``, ``"x1*x2"`` or a mapping such as
        ``{"standardize": "x1"}`` / ``{"product": ["x1", "x2"]}``."""
        if isinstance(item, Transform):
            return item
        if isinstance(item, str):
            if item.startswith("std:"):
                return cls("standardize", (item[4:],))
            if "*" in item:
                a, b = item.split("*", 1)
                return cls("product", (a.strip(), b.strip()))
            return cls("identity", (item,))
        if isinstance(item, dict) and len(item) == 1:
            (kind, cols), = item.items()
            cols = (cols,) if isinstance(cols, str) else tuple(cols)
            return cls(kind, cols)
        raise ConfigError(f"cannot parse transform {item!r}")

    @property
    def label(self) -> str:
        if self.kind == "identity":
            return self.columns[0]
        if self.kind == "standardize":
            return f"std:{self.columns[0]}"
        return "*".join(self.columns)


@dataclass(frozen=True)
class TransformSpec:
    s_columns: tuple
    g_columns: tuple

    @classmethod
    def from_lists(cls, s: Iterable, g: Iterable) -> "TransformSpec":
        return cls(tuple(Transform.parse(t) for t in s), tuple(Transform.parse(t) for t in g))

    @classmethod
    def identity(cls, columns: Sequence[str]) -> "TransformSpec":
        """Every raw covariate enters both the propensity model and the balance rows."""
        return cls.from_lists(columns, columns)

    def validate(self, columns: Sequence[str]) -> None:
        known = set(columns)
        for t in self.s_columns + self.g_columns:
            for c in t.columns:
                if c not in known:
                    raise MissingColumn(f"transform {t.label!r} refers to unknown column {c!r}")

    def to_dict(self) -> dict:
        return {"s": [t.label for t in self.s_columns], "g": [t.label for t in self.g_columns]}


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    columns: tuple
    original_index: np.ndarray
    s_design: np.ndarray | None = None
    g_design: np.ndarray | None = None
    s_labels: tuple = field(default=())
    g_labels: tuple = field(default=())

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def observations(self) -> list:
        return [Observation(float(yi), int(zi), tuple(xi)) for yi, zi, xi in zip(self.y, self.z, self.x)]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.x[:, self.columns.index(name)]
        except ValueError:
            raise MissingColumn(f"no covariate column {name!r}") from None


def from_arrays(y, z, x=None, columns: Sequence[str] | None = None, original_index=None) -> Dataset:
    """Validate raw arrays and return them in treated-first order."""
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.shape[0]
    z_raw = np.asarray(z)
    if z_raw.shape != (n,):
        raise NonBinaryTreatment("treatment must be a vector with one entry per outcome")
    try:
        zf = z_raw.astype(float)
    except (TypeError, ValueError):
        raise NonNumericValue("treatment column is not numeric") from None
    if not np.all((zf == 0) | (zf == 1)):
        bad = zf[(zf != 0) & (zf != 1)][0]
        raise NonBinaryTreatment(f"treatment must be 0 or 1, found {bad!r}")
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float).reshape(n, -1)
    if columns is None:
        columns = tuple(f"x{j + 1}" for j in range(x.shape[1]))
    columns = tuple(columns)
    if len(columns) != x.shape[1]:
        raise ConfigError("number of column names does not match covariate matrix")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise NonNumericValue("outcomes and covariates must be finite")
    zi = zf.astype(np.int8)
    n1 = int(zi.sum())
    if n1 == 0 or n1 == n:
        raise AllTreatedOrAllControl(f"need both arms, got n1={n1}, n0={n - n1}")
    order = np.argsort(1 - zi, kind="stable")
    if original_index is None:
        original_index = np.arange(n)
    original_index = np.asarray(original_index)[order]
    return Dataset(y=y[order], z=zi[order], x=np.ascontiguousarray(x[order]), columns=columns,
                   original_index=original_index)


def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise NonNumericValue(f"non-numeric value {text!r} at {where}") from None
    if not math.isfinite(v):
        raise NonNumericValue(f"non-finite value {text!r} at {where}")
    return v


def load_csv(path, y: str = "y", z: str = "z", x: Sequence[str] | None = None,
             delimiter: str = ",") -> Dataset:
    """Read a headed CSV. ``x`` defaults to every column except ``y`` and ``z``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path} is empty") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    for name in [y, z] + list(x or []):
        if name not in header:
            raise MissingColumn(f"column {name!r} not found in {path}")
    if x is None:
        x = [h for h in header if h not in (y, z)]
    iy, iz = header.index(y), header.index(z)
    ix = [header.index(c) for c in x]
    Y, Z, X = [], [], []
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise NonNumericValue(f"line {lineno}: expected {len(header)} fields, got {len(r)}")
        Y.append(_parse_float(r[iy], f"line {lineno}, column {y!r}"))
        zv = _parse_float(r[iz], f"line {lineno}, column {z!r}")
        if zv not in (0.0, 1.0):
            raise NonBinaryTreatment(f"line {lineno}: treatment value {r[iz]!r} is not 0 or 1")
        Z.append(zv)
        X.append([_parse_float(r[j], f"line {lineno}, column {header[j]!r}") for j in ix])
    if not Y:
        raise AllTreatedOrAllControl(f"{path} has no data rows")
    return from_arrays(Y, Z, np.array(X, dtype=float).reshape(len(Y), len(ix)), columns=x)


def write_csv(dataset: Dataset, path, delimiter: str = ",", extra: dict | None = None) -> None:
    """Write ``dataset`` in the ingestion schema (y, z, covariates), original row order.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(dataset, path, delimiter, extra or {})
        return
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        _write_rows(dataset, fh, delimiter, extra or {})


def _write_rows(dataset, fh, delimiter, extra):
    order = np.argsort(dataset.original_index, kind="stable")
    w = csv.writer(fh, delimiter=delimiter)
    w.writerow(["y", "z", *dataset.columns, *extra])
    for i in order:
        w.writerow([repr(float(dataset.y[i])), int(dataset.z[i]),
                    *(repr(float(v)) for v in dataset.x[i]),
                    *(repr(float(np.asarray(v)[i])) for v in extra.values())])


def load_config(path) -> dict:
    """JSON config naming the y/z columns, delimiter and s/g transform lists."""
    try:
        with Path(path).open(encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _column_values(dataset: Dataset, t: Transform, stats: dict) -> np.ndarray:
    if t.kind == "identity":
        return dataset.column(t.columns[0]).copy()
    if t.kind == "product":
        return dataset.column(t.columns[0]) * dataset.column(t.columns[1])
    v = dataset.column(t.columns[0])
    mu, sd = stats.setdefault(t.columns[0], (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0))
    if not sd > 0:
        raise RankDeficientDesign(f"cannot standardize constant column {t.columns[0]!r}")
    return (v - mu) / sd


def _full_rank(M: np.ndarray) -> bool:
    if M.shape[1] == 0:
        return True
    if M.shape[0] < M.shape[1]:
        return False
    sv = np.linalg.svd(M, compute_uv=False)
    return bool(sv[-1] > RANK_TOL * sv[0])


def build_designs(dataset: Dataset, spec: TransformSpec) -> Dataset:
    """Populate the propensity design (intercept first) and the balance design.

    Standardization uses the pooled-sample mean and standard deviation.
    """
    spec.validate(dataset.columns)
    stats: dict = {}
    n = dataset.n
    s_cols = [np.ones(n)] + [_column_values(dataset, t, stats) for t in spec.s_columns]
    S = np.ascontiguousarray(np.column_stack(s_cols))
    G = np.ascontiguousarray(
        np.column_stack([_column_values(dataset, t, stats) for t in spec.g_columns])
        if spec.g_columns else np.zeros((n, 0)))
    if not _full_rank(S):
        raise RankDeficientDesign("propensity design columns are linearly dependent")
    if G.shape[1] and not g_in_span(S, G):
        warnings.warn("balance covariates are not in the span of the propensity design; "
                      "bounds at Lambda=1, delta=0 may not collapse to the point estimate",
                      stacklevel=2)
    return replace(dataset, s_design=S, g_design=G,
                   s_labels=("(intercept)",) + tuple(t.label for t in spec.s_columns),
                   g_labels=tuple(t.label for t in spec.g_columns))


def g_in_span(S: np.ndarray, G: np.ndarray, tol: float = 1e-8) -> bool:
    coef, *_ = np.linalg.lstsq(S, G, rcond=None)
    resid = G - S @ coef
    scale = np.maximum(np.abs(G).max(axis=0), 1.0)
    return bool(np.all(np.abs(resid).max(axis=0) <= tol * scale))
