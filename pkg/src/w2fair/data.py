"""Datasets of (features, class id, binary group), CSV I/O, stratified splits and a
synthetic generator with controllable group bias.

CSV contract: comma separated, UTF-8, header row required, '.' decimal point.
Feature columns hold reals; the label column holds a class id in ``0..K-1`` or a
class name listed in the schema; the group column holds ``0`` or ``1``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int
    group: int


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    n_classes: int
    class_names: list[str] = field(default_factory=list)
    group_names: list[str] = field(default_factory=lambda: ["0", "1"])

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.s = np.asarray(self.s, dtype=np.int64)
        if self.X.ndim != 2 or not (len(self.X) == len(self.y) == len(self.s)):
            raise DataError("X must be (n, p) and align with y and s")
        if not np.all(np.isfinite(self.X)):
            raise DataError("features must be finite")
        if np.any((self.y < 0) | (self.y >= self.n_classes)):
            raise DataError(f"labels must lie in 0..{self.n_classes - 1}")
        if not np.all((self.s == 0) | (self.s == 1)):
            raise DataError("groups must be 0 or 1")
        if not self.class_names:
            self.class_names = [str(k) for k in range(self.n_classes)]

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.X[i], int(self.y[i]), int(self.s[i]))

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def one_hot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.y]

    def support(self) -> np.ndarray:
        """(K, 2) counts per (class, group)."""
        out = np.zeros((self.n_classes, 2), dtype=np.int64)
        np.add.at(out, (self.y, self.s), 1)
        return out

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.s[idx], self.n_classes,
                       list(self.class_names), list(self.group_names))

    def missing_classes(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(np.bincount(self.y, minlength=self.n_classes) == 0)]

    def summary(self) -> dict:
        return {
            "n": len(self),
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "class_names": list(self.class_names),
            "group_names": list(self.group_names),
            "support": self.support().tolist(),
        }

    def equals(self, other: "Dataset") -> bool:
        return (self.n_classes == other.n_classes
                and self.class_names == other.class_names
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.s, other.s))


@dataclass
class CsvSchema:
    label: str = "label"
    group: str = "group"
    features: list[str] | None = None  # None: every other column
    class_names: list[str] | None = None
    n_classes: int | None = None


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("file is empty; a header row is required") from None
        for col in [schema.label, schema.group] + list(schema.features or []):
            if col not in header:
                raise DataError("missing column", row=1, column=col)
        feat_cols = schema.features or [c for c in header if c not in (schema.label, schema.group)]
        if not feat_cols:
            raise DataError("no feature columns")
        fpos = [header.index(c) for c in feat_cols]
        lpos, gpos = header.index(schema.label), header.index(schema.group)
        name_to_id = {n: i for i, n in enumerate(schema.class_names or [])}

        X, y, s = [], [], []
        # row numbers are 1-based file lines; the header is row 1
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", row=rowno)
            feats = []
            for c, pos in zip(feat_cols, fpos):
                try:
                    v = float(row[pos])
                except ValueError:
                    raise DataError(f"non-numeric feature {row[pos]!r}", row=rowno, column=c) from None
                if not math.isfinite(v):
                    raise DataError(f"non-finite feature {row[pos]!r}", row=rowno, column=c)
                feats.append(v)
            raw = row[lpos].strip()
            if raw in name_to_id:
                label = name_to_id[raw]
            else:
                try:
                    label = int(raw)
                except ValueError:
                    raise DataError(f"unknown label {raw!r}", row=rowno, column=schema.label) from None
            graw = row[gpos].strip()
            if graw not in ("0", "1"):
                raise DataError(f"group must be 0 or 1, got {graw!r}", row=rowno, column=schema.group)
            X.append(feats)
            y.append(label)
            s.append(int(graw))

    if not y:
        raise DataError("no data rows")
    n_classes = schema.n_classes or (len(schema.class_names) if schema.class_names else max(y) + 1)
    for i, label in enumerate(y):
        if not 0 <= label < n_classes:
            raise DataError(f"unknown label {label}", row=i + 2, column=schema.label)
    ds = Dataset(np.array(X), np.array(y), np.array(s), n_classes,
                 list(schema.class_names or []))
    missing = ds.missing_classes()
    if missing:
        raise DataError(f"classes without any example: {missing}")
    log.info("loaded %s: n=%d support=%s", path, len(ds), ds.support().tolist())
    return ds


def save_csv(dataset: Dataset, path) -> None:
    header = [f"x{j}" for j in range(dataset.n_features)] + ["label", "group"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y, s in zip(dataset.X, dataset.y, dataset.s):
            w.writerow([repr(float(v)) for v in x] + [int(y), int(s)])


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``n`` items; ties favour earlier splits."""
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def check_fractions(fractions: Sequence[float]) -> None:
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {list(fractions)}")


def split_indices(dataset: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> list[np.ndarray]:
    check_fractions(fractions)
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for k in range(dataset.n_classes):
        for g in (0, 1):
            stratum = np.flatnonzero((dataset.y == k) & (dataset.s == g))
            if stratum.size == 0:
                continue
            if stratum.size < len(fractions):
                warnings.warn(
                    f"stratum (class={k}, group={g}) has {stratum.size} examples for "
                    f"{len(fractions)} splits; later splits get none",
                    stacklevel=2,
                )
            stratum = rng.permutation(stratum)
            bounds = np.cumsum([0] + _allocate(stratum.size, fractions))
            for i in range(len(fractions)):
                parts[i].append(stratum[bounds[i]:bounds[i + 1]])
    return [np.sort(np.concatenate(p)) if p else np.empty(0, dtype=np.int64) for p in parts]


def split(dataset: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> tuple[Dataset, ...]:
    """Stratified by (class, group); deterministic for a given seed."""
    return tuple(dataset.subset(idx) for idx in split_indices(dataset, fractions, seed))


@dataclass
class ClassBias:
    """Bias injected into group 1 of one class."""

    toward: int  # the confusable class
    shift: float = 0.0  # in units of the cluster std, along the line to ``toward``
    flip_rate: float = 0.0  # fraction of group-1 labels relabelled as ``toward``


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    n_features: int = 10
    n_per_group: int | list[list[int]] = 1000  # scalar or (K, 2) table
    separation: float = 5.0  # distance between class centres, in cluster stds
    sigma: float = 1.0
    bias: dict[int, ClassBias] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.bias = {int(k): (v if isinstance(v, ClassBias) else ClassBias(**v)) for k, v in self.bias.items()}
        counts = self.counts()
        if counts.shape != (self.n_classes, 2) or np.any(counts < 0):
            raise ConfigError("n_per_group must be a non-negative scalar or a (K, 2) table")
        for k, b in self.bias.items():
            if not 0 <= k < self.n_classes or not 0 <= b.toward < self.n_classes or b.toward == k:
                raise ConfigError(f"bad bias entry for class {k}")
            if not 0 <= b.flip_rate < 0.5:
                raise ConfigError("flip_rate must be in [0, 0.5)")

    def counts(self) -> np.ndarray:
        if isinstance(self.n_per_group, int):
            return np.full((self.n_classes, 2), self.n_per_group, dtype=np.int64)
        return np.asarray(self.n_per_group, dtype=np.int64)

    def centers(self) -> np.ndarray:
        """Class centres, pairwise ``separation * sigma`` apart when K <= p."""
        K, p = self.n_classes, self.n_features
        if K <= p:
            return np.eye(K, p) * self.separation * self.sigma / np.sqrt(2.0)
        rng = np.random.default_rng([self.seed, 1])
        return rng.normal(size=(K, p)) * self.separation * self.sigma / np.sqrt(2.0 * p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bias"] = {str(k): asdict(v) for k, v in self.bias.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate(spec: SyntheticSpec) -> Dataset:
    """Gaussian clusters per class; biased classes get a shifted / relabelled group 1.

    Label flips keep the per-(class, group) counts of the *features*; the
    returned labels of flipped examples point to ``toward``.
    """
    rng = np.random.default_rng(spec.seed)
    centers = spec.centers()
    counts = spec.counts()
    X, y, s = [], [], []
    for k in range(spec.n_classes):
        for g in (0, 1):
            n = int(counts[k, g])
            mu = centers[k].copy()
            labels = np.full(n, k)
            b = spec.bias.get(k)
            if b is not None and g == 1:
                direction = centers[b.toward] - centers[k]
                mu = mu + b.shift * spec.sigma * direction / np.linalg.norm(direction)
                labels[rng.random(n) < b.flip_rate] = b.toward
            X.append(mu + spec.sigma * rng.normal(size=(n, spec.n_features)))
            y.append(labels)
            s.append(np.full(n, g))
    return Dataset(np.concatenate(X), np.concatenate(y), np.concatenate(s), spec.n_classes,
                   [f"class{k}" for k in range(spec.n_classes)])


def acceptance_spec(seed: int = 0) -> SyntheticSpec:
    """4 classes, 10 features, 2000 examples per class; group 1 of class 2 leans toward class 3."""
    return SyntheticSpec(n_classes=4, n_features=10, n_per_group=1000, separation=5.0,
                         bias={2: ClassBias(toward=3, shift=2.75)}, seed=seed)
