"""Group fairness audit: per-class TPR gaps, group confusion matrices, accuracy and F1.

Class ids are 0-based. Gaps follow the ``group1 - group0`` sign convention, so a
positive gap favours group 1. Quantities that are undefined because a group has
no true member of a class are NaN in arrays and ``null`` in JSON.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1


class AuditInputError(ValueError):
    pass


@dataclass(frozen=True)
class GroupConfusion:
    matrix0: np.ndarray
    matrix1: np.ndarray
    support0: np.ndarray
    support1: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.matrix0.shape[0]

    @property
    def undefined(self) -> np.ndarray:
        """Classes with no true member in at least one group."""
        return (self.support0 == 0) | (self.support1 == 0)

    def difference(self) -> np.ndarray:
        diff = self.matrix1 - self.matrix0
        diff[self.undefined, :] = np.nan
        return diff


def _check_inputs(preds, labels, groups, n_classes):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if not (preds.shape == labels.shape == groups.shape) or preds.ndim != 1:
        raise AuditInputError(
            f"length mismatch: preds={preds.shape}, labels={labels.shape}, groups={groups.shape}"
        )
    for name, arr in (("preds", preds), ("labels", labels)):
        bad = (arr < 0) | (arr >= n_classes)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise AuditInputError(f"{name}[{i}]={arr[i]} outside 0..{n_classes - 1}")
    if not np.all((groups == 0) | (groups == 1)):
        raise AuditInputError("groups must be 0 or 1")
    return preds.astype(np.int64), labels.astype(np.int64), groups.astype(np.int64)


def _row_normalize(counts: np.ndarray) -> np.ndarray:
    support = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, support, out=np.zeros_like(counts, dtype=float), where=support > 0)


def confusion_counts(preds, labels, n_classes: int) -> np.ndarray:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return counts


def confusion_by_group(preds, labels, groups, n_classes: int) -> GroupConfusion:
    preds, labels, groups = _check_inputs(preds, labels, groups, n_classes)
    c0 = confusion_counts(preds[groups == 0], labels[groups == 0], n_classes)
    c1 = confusion_counts(preds[groups == 1], labels[groups == 1], n_classes)
    return GroupConfusion(
        matrix0=_row_normalize(c0.astype(float)),
        matrix1=_row_normalize(c1.astype(float)),
        support0=c0.sum(axis=1),
        support1=c1.sum(axis=1),
    )


def tpr_gaps(confusion: GroupConfusion) -> np.ndarray:
    gap = np.diag(confusion.matrix1) - np.diag(confusion.matrix0)
    gap = gap.astype(float)
    gap[confusion.undefined] = np.nan
    return gap


def accuracy_f1(preds, labels, n_classes: int) -> tuple[float, float, float]:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise AuditInputError("preds and labels differ in length")
    if preds.size == 0:
        return float("nan"), float("nan"), float("nan")
    counts = confusion_counts(preds, labels, n_classes)
    tp = np.diag(counts).astype(float)
    support = counts.sum(axis=1).astype(float)
    predicted = counts.sum(axis=0).astype(float)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    present = support > 0
    acc = tp.sum() / preds.size
    macro = f1[present].mean()
    weighted = np.sum(f1 * support) / support.sum()
    return float(acc), float(macro), float(weighted)


def _nan_to_none(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return None if np.isnan(a) else float(a)
    return [_nan_to_none(x) for x in a]


def _none_to_nan(a):
    return np.array(a, dtype=float)  # numpy maps None to nan for float dtype


@dataclass
class AuditReport:
    tpr_gap: np.ndarray
    confusion_diff: np.ndarray
    accuracy: float
    f1_macro: float
    f1_weighted: float
    support: np.ndarray  # (K, 2) true counts per (class, group)
    matrix0: np.ndarray
    matrix1: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(k) for k in range(len(self.tpr_gap))]

    @property
    def n_classes(self) -> int:
        return len(self.tpr_gap)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "class_names": list(self.class_names),
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "tpr_gap": _nan_to_none(self.tpr_gap),
            "support": np.asarray(self.support).astype(int).tolist(),
            "confusion_diff": _nan_to_none(self.confusion_diff),
            "confusion_group0": _nan_to_none(self.matrix0),
            "confusion_group1": _nan_to_none(self.matrix1),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported audit schema version {d.get('schema_version')!r}")
        return cls(
            tpr_gap=_none_to_nan(d["tpr_gap"]),
            confusion_diff=_none_to_nan(d["confusion_diff"]),
            accuracy=d["accuracy"],
            f1_macro=d["f1_macro"],
            f1_weighted=d["f1_weighted"],
            support=np.asarray(d["support"], dtype=np.int64),
            matrix0=_none_to_nan(d["confusion_group0"]),
            matrix1=_none_to_nan(d["confusion_group1"]),
            class_names=list(d["class_names"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def class_table(self) -> list[dict]:
        """One row per class: name, gap, per-group TPR and support."""
        rows = []
        for k, name in enumerate(self.class_names):
            rows.append({
                "class_id": k,
                "class_name": name,
                "tpr_gap": _nan_to_none(self.tpr_gap[k]),
                "tpr_group0": float(self.matrix0[k, k]),
                "tpr_group1": float(self.matrix1[k, k]),
                "support_group0": int(self.support[k, 0]),
                "support_group1": int(self.support[k, 1]),
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.class_table()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return buf.getvalue()


def audit(preds, labels, groups, n_classes: int, class_names: Sequence[str] | None = None) -> AuditReport:
    conf = confusion_by_group(preds, labels, groups, n_classes)
    acc, macro, weighted = accuracy_f1(preds, labels, n_classes)
    return AuditReport(
        tpr_gap=tpr_gaps(conf),
        confusion_diff=conf.difference(),
        accuracy=acc,
        f1_macro=macro,
        f1_weighted=weighted,
        support=np.stack([conf.support0, conf.support1], axis=1),
        matrix0=conf.matrix0,
        matrix1=conf.matrix1,
        class_names=list(class_names) if class_names else [],
    )


@dataclass(frozen=True)
class SelectionRule:
    tau: float = 0.1
    min_support: int = 100

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.min_support < 0:
            raise ValueError("min_support must be non-negative")


@dataclass(frozen=True)
class Selection:
    classes: tuple[int, ...]
    flagged: tuple[int, ...]  # gap above tau but too few examples in a group

    def __bool__(self):
        return bool(self.classes)


def select_classes(report: AuditReport, rule: SelectionRule = SelectionRule(), support=None) -> Selection:
    """Classes whose |gap| exceeds ``rule.tau``, largest first.

    ``support`` (K x 2) overrides the report's own counts for the minimum-support
    check, e.g. to apply it to training-set counts while gaps come from validation.
    """
    support = np.asarray(report.support if support is None else support)
    gap = np.asarray(report.tpr_gap, dtype=float)
    over = np.flatnonzero(~np.isnan(gap) & (np.abs(gap) > rule.tau))
    # stable sort keeps class-id order among equal gaps
    over = over[np.argsort(-np.abs(gap[over]), kind="stable")]
    enough = support[over].min(axis=1) >= rule.min_support
    return Selection(
        classes=tuple(int(k) for k in over[enough]),
        flagged=tuple(int(k) for k in over[~enough]),
    )
