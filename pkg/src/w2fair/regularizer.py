"""Pseudo-derivatives of the W2 penalty and reference-sample bookkeeping.

For an output ``f`` of group ``s`` falling in grid cell ``j`` the penalty
contributes::

    tau_step * (f - cor(f)) / (n_s * max(H_s[j+1] - H_s[j], 1 / (4 * count_s)))

where ``cor`` maps ``f`` to the matching quantile of the other group. For the
multi-class version the CDFs are those of the class-``k`` output restricted to
true members of class ``k`` and ``n_s`` becomes the training count of
(class ``k``, group ``s``); the arithmetic is identical, only the supplied
:class:`GroupCdfPair` changes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .distribution import DiscreteCdf, build_grid, correction, empirical_cdf


class EmptyStratumWarning(UserWarning):
    """No example exists for a (class, group) pair."""


class MissingPlanError(KeyError):
    pass


@dataclass(frozen=True)
class GroupCdfPair:
    cdf0: DiscreteCdf
    cdf1: DiscreteCdf
    n0: int
    n1: int

    def __post_init__(self):
        if self.cdf0.grid != self.cdf1.grid:
            raise ValueError("both group CDFs must share one output grid")
        if self.n0 < 1 or self.n1 < 1:
            raise ValueError("normalizing counts must be >= 1")

    @property
    def grid(self):
        return self.cdf0.grid

    @classmethod
    def from_samples(cls, group0, group1, steps: int, n0: int | None = None, n1: int | None = None):
        """Build both CDFs on a shared grid spanning the union of the two samples.

        ``n0``/``n1`` default to the sample sizes.
        """
        group0 = np.asarray(group0, dtype=float).ravel()
        group1 = np.asarray(group1, dtype=float).ravel()
        grid = build_grid(np.concatenate([group0, group1]), steps)
        return cls(
            cdf0=empirical_cdf(group0, grid),
            cdf1=empirical_cdf(group1, grid),
            n0=group0.size if n0 is None else int(n0),
            n1=group1.size if n1 is None else int(n1),
        )


def default_tau_step(cdfs: GroupCdfPair) -> float:
    return 1.0 / cdfs.grid.steps


def pseudo_grads(outputs, groups, cdfs: GroupCdfPair, tau_step: float | None = None) -> np.ndarray:
    """Vectorized pseudo-derivatives for many outputs against one CDF pair."""
    f = np.asarray(outputs, dtype=float)
    s = np.asarray(groups)
    if not np.all((s == 0) | (s == 1)):
        raise ValueError("group must be 0 or 1")
    if tau_step is None:
        tau_step = default_tau_step(cdfs)
    grid = cdfs.grid
    f = grid.clamp(f)
    j = grid.cell(f)

    out = np.zeros(f.shape, dtype=float)
    for g, own, other, n in ((0, cdfs.cdf0, cdfs.cdf1, cdfs.n0), (1, cdfs.cdf1, cdfs.cdf0, cdfs.n1)):
        mask = s == g
        if not np.any(mask):
            continue
        fg = f[mask]
        h = own.padded()
        den = np.maximum(h[j[mask] + 1] - h[j[mask]], 1.0 / (4 * own.count))
        cor = correction(other, own, fg)
        # group 1 term is written -(cor - f) in the derivation; same as (f - cor)
        out[mask] = tau_step * (fg - cor) / (n * den)
    return out


def pseudo_grad(output: float, group: int, cdfs: GroupCdfPair, tau_step: float | None = None) -> float:
    if group not in (0, 1):
        raise ValueError(f"group must be 0 or 1, got {group!r}")
    return float(pseudo_grads(np.array([output]), np.array([group]), cdfs, tau_step)[0])


def batch_pseudo_grads(
    outputs: Sequence[tuple[float, int, int]],
    plans: Mapping[int, GroupCdfPair | None],
    tau_step: float | None = None,
) -> list[tuple[int, float]]:
    """Apply :func:`pseudo_grad` per element on its true-class output.

    ``plans`` must list every class that can occur; a ``None`` plan marks an
    unregularized class, whose elements get exactly 0.
    """
    result = []
    for output, group, cls in outputs:
        if cls not in plans:
            raise MissingPlanError(f"no regularization plan for class {cls}")
        plan = plans[cls]
        if plan is None:
            result.append((cls, 0.0))
        else:
            result.append((cls, pseudo_grad(output, group, plan, tau_step)))
    return result


class StratumIndex:
    """Example indices grouped by (class, group)."""

    def __init__(self, labels, groups):
        labels = np.asarray(labels)
        groups = np.asarray(groups)
        self._strata: dict[tuple[int, int], np.ndarray] = {}
        order = np.lexsort((np.arange(labels.size), groups, labels))
        for i in order:
            self._strata.setdefault((int(labels[i]), int(groups[i])), []).append(int(i))
        self._strata = {k: np.asarray(v, dtype=np.int64) for k, v in self._strata.items()}

    def get(self, cls: int, group: int) -> np.ndarray:
        return self._strata.get((cls, group), np.empty(0, dtype=np.int64))

    def count(self, cls: int, group: int) -> int:
        return int(self.get(cls, group).size)


def draw_reference(
    index: StratumIndex,
    cls: int,
    group: int,
    m: int,
    exclude,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw up to ``m`` stratum members outside ``exclude``, uniformly without replacement."""
    if group not in (0, 1):
        raise ValueError(f"group must be 0 or 1, got {group!r}")
    if m < 1:
        raise ValueError("m must be >= 1")
    stratum = index.get(cls, group)
    if stratum.size == 0:
        warnings.warn(f"empty stratum (class={cls}, group={group})", EmptyStratumWarning, stacklevel=2)
        return stratum
    pool = stratum[~np.isin(stratum, np.asarray(exclude, dtype=np.int64))]
    if pool.size <= m:
        return pool.copy()
    return rng.choice(pool, size=m, replace=False)
