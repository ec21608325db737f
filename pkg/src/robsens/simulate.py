"""Synthetic confounded data with a constant treatment effect of 5.

One covariate ``X ~ U[0, 1]`` is observed. A hidden confounder ``U`` is
``U[0, 1]`` when ``X <= 0.7`` and ``U[0, 100]`` otherwise; treatment is
``Bernoulli(1 / (1 + exp(X - 0.1 U)))``, ``Y(0) = 2X + 3U`` and
``Y(1) = Y(0) + 5``. Only ``(Y, Z, X)`` reach the analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, from_arrays
from .errors import ConfigError, DegenerateArm

TRUE_EFFECT = 5.0
MAX_REDRAWS = 100


@dataclass(frozen=True)
class SimSpec:
    n: int
    seed: int = 0
    effect: float = TRUE_EFFECT

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("simulation needs n >= 2")


@dataclass(frozen=True, eq=False)
class SimulatedData:
    dataset: Dataset
    true_effect: float
    hidden_u: np.ndarray  # hidden confounder in dataset row order; debug use only
    y0: np.ndarray
    y1: np.ndarray


def draw(n: int, rng: np.random.Generator, effect: float = TRUE_EFFECT):
    x = rng.uniform(0.0, 1.0, n)
    u = rng.uniform(0.0, 1.0, n)
    u = np.where(x > 0.7, 100.0 * u, u)
    p = 1.0 / (1.0 + np.exp(x - 0.1 * u))
    z = (rng.uniform(0.0, 1.0, n) < p).astype(np.int8)
    y0 = 2.0 * x + 3.0 * u
    y1 = y0 + effect
    return x, u, z, y0, y1


def generate(spec: SimSpec) -> SimulatedData:
    """Draw a dataset; arms that come out empty trigger a redraw (at most 100)."""
    rng = np.random.default_rng(spec.seed)
    for _ in range(MAX_REDRAWS):
        x, u, z, y0, y1 = draw(spec.n, rng, spec.effect)
        n1 = int(z.sum())
        if 0 < n1 < spec.n:
            break
    else:
        raise DegenerateArm(f"no draw with both arms nonempty after {MAX_REDRAWS} attempts")
    y = np.where(z == 1, y1, y0)
    ds = from_arrays(y, z, x[:, None], columns=("x",))
    order = ds.original_index
    return SimulatedData(ds, spec.effect, u[order], y0[order], y1[order])
