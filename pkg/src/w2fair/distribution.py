"""Empirical 1-D distributions of model outputs.

Output grids, discrete CDFs on those grids, their generalized inverses, the
quantile-matching correction map between two groups, and the 1-D squared
Wasserstein-2 distance between two prediction samples.

Grid convention: a grid built from a sample has ``lo = min(sample)`` and
``steps`` points ``eta[j] = lo + j * delta`` for ``j = 1..steps``, so the
last point is the sample maximum. ``eta[0] = lo`` is used as the left edge of
the first cell, where the CDF is taken to be 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_GRID = 1e-6

# Slack (in grid steps) absorbing float error when locating x on the grid.
_SNAP = 1e-9


@dataclass(frozen=True)
class OutputGrid:
    lo: float
    delta: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"grid needs at least 2 steps, got {self.steps}")
        if not self.delta > 0:
            raise ValueError(f"grid step must be positive, got {self.delta}")

    @property
    def hi(self) -> float:
        return self.lo + self.delta * self.steps

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.delta * np.arange(1, self.steps + 1)

    def clamp(self, x):
        return np.clip(x, self.lo, self.hi)

    def cell(self, x) -> np.ndarray:
        """Index ``j`` with ``eta[j] <= x < eta[j+1]``, clamped to ``0..steps-1``."""
        u = (self.clamp(np.asarray(x, dtype=float)) - self.lo) / self.delta
        return np.clip(np.floor(u + _SNAP), 0, self.steps - 1).astype(int)

    def ceil_point(self, x) -> np.ndarray:
        """Index (1-based) of the smallest grid point ``>= x``."""
        u = (self.clamp(np.asarray(x, dtype=float)) - self.lo) / self.delta
        return np.clip(np.ceil(u - _SNAP), 1, self.steps).astype(int)


@dataclass(frozen=True)
class DiscreteCdf:
    grid: OutputGrid
    values: np.ndarray
    count: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.steps,):
            raise ValueError("CDF length must match grid steps")
        if self.count < 1:
            raise ValueError("CDF must summarize at least one sample")
        object.__setattr__(self, "values", v)

    def padded(self) -> np.ndarray:
        """``H^0..H^J`` with ``H^0 = 0``."""
        return np.concatenate(([0.0], self.values))

    def __call__(self, x):
        """Evaluate at arbitrary outputs (rounded up to the next grid point)."""
        return self.values[self.grid.ceil_point(x) - 1]


@dataclass(frozen=True)
class SamplePair:
    group0: np.ndarray
    group1: np.ndarray

    def __post_init__(self):
        for name in ("group0", "group1"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if arr.size == 0:
                raise ValueError(f"{name} sample is empty")
            object.__setattr__(self, name, arr)


def _as_sample(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("sample is empty")
    return arr


def build_grid(samples, steps: int) -> OutputGrid:
    x = _as_sample(samples)
    if steps < 2:
        raise ValueError(f"grid needs at least 2 steps, got {steps}")
    lo, hi = float(x.min()), float(x.max())
    delta = (hi - lo) / steps
    if delta <= 0:
        delta = EPS_GRID
    return OutputGrid(lo=lo, delta=delta, steps=int(steps))


def empirical_cdf(samples, grid: OutputGrid) -> DiscreteCdf:
    x = np.sort(_as_sample(samples))
    counts = np.searchsorted(x, grid.points, side="right")
    # The last point can land a hair below max(x) through rounding.
    counts[-1] = x.size
    return DiscreteCdf(grid=grid, values=counts / x.size, count=x.size)


def quantiles(cdf: DiscreteCdf, p) -> np.ndarray:
    """Vectorized generalized inverse: smallest grid point with ``H >= p``."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    idx = np.searchsorted(cdf.values, p, side="left")
    idx = np.minimum(idx, cdf.grid.steps - 1)
    return cdf.grid.points[idx]


def inverse_cdf(cdf: DiscreteCdf, p: float) -> float:
    return float(quantiles(cdf, p))


def correction(cdf_target: DiscreteCdf, cdf_source: DiscreteCdf, x):
    """Quantile-matched counterpart of ``x`` (from the source distribution) in the target one.

    Works on scalars or arrays; out-of-range ``x`` is clamped to the source grid.
    """
    out = quantiles(cdf_target, cdf_source(x))
    return float(out) if np.ndim(out) == 0 else out


def sample_quantiles(samples, p) -> np.ndarray:
    """Generalized inverse of the empirical CDF of ``samples`` (left-continuous)."""
    x = np.sort(_as_sample(samples))
    idx = np.ceil(np.asarray(p, dtype=float) * x.size - _SNAP).astype(int) - 1
    return x[np.clip(idx, 0, x.size - 1)]


def w2_distance(pair: SamplePair, steps: int) -> float:
    """Squared 1-D Wasserstein-2 distance via a midpoint rule on ``steps`` quantile levels.

    Quantiles are read off the sorted samples rather than the output grid, so
    the estimate is exact for equal-size samples whenever ``steps`` is a
    multiple of the sample size.
    """
    if steps < 1:
        raise ValueError("need at least one quantile level")
    tau = (np.arange(steps) + 0.5) / steps
    q0 = sample_quantiles(pair.group0, tau)
    q1 = sample_quantiles(pair.group1, tau)
    return float(np.mean((q0 - q1) ** 2))


def w2(group0, group1, steps: int) -> float:
    return w2_distance(SamplePair(group0, group1), steps)
