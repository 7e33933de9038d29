"""Baseline training, audit-driven class selection and W2-regularized retraining."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .audit import AuditReport, Selection, SelectionRule, audit, select_classes
from .data import ConfigError, Dataset, check_fractions, split_indices
from .model import (
    ModelParams,
    OptimizerState,
    backward,
    cross_entropy_grad,
    forward,
    predict,
    step,
)
from .regularizer import EmptyStratumWarning, GroupCdfPair, StratumIndex, draw_reference, pseudo_grads

log = logging.getLogger(__name__)

NO_SELECTION = "no class exceeded tau"


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    seed: int = 0
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    grid_steps: int = 20
    m: int = 16
    lam: float = 400.0
    lam_per_class: dict[int, float] = field(default_factory=dict)
    # an empty grid trains once with ``lam``; otherwise the admissible lambda
    # with the smallest selected-class |gap| on validation wins
    lambda_grid: list[float] = field(default_factory=lambda: [100.0, 200.0, 400.0, 800.0, 1600.0])
    max_accuracy_drop: float = 0.02  # validation accuracy budget when picking lambda
    tau: float = 0.1
    min_support: int = 100
    selection_split: str = "val"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.fractions = tuple(float(f) for f in self.fractions)
        self.lam_per_class = {int(k): float(v) for k, v in self.lam_per_class.items()}
        self.lambda_grid = [float(v) for v in self.lambda_grid]
        self.validate()

    def validate(self) -> None:
        check_fractions(self.fractions)
        if len(self.fractions) != 3:
            raise ConfigError("need train/val/test fractions")
        if self.m < 1 or self.batch_size < 1 or self.epochs < 0 or self.grid_steps < 2:
            raise ConfigError("need m >= 1, batch_size >= 1, epochs >= 0, grid_steps >= 2")
        lams = [self.lam, *self.lam_per_class.values(), *self.lambda_grid]
        if any(v < 0 for v in lams):
            raise ConfigError("lambda must be non-negative")
        if self.selection_split not in ("train", "val", "test"):
            raise ConfigError(f"unknown selection split {self.selection_split!r}")
        SelectionRule(self.tau, self.min_support)

    def lam_for(self, cls: int) -> float:
        return self.lam_per_class.get(cls, self.lam)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["fractions"] = list(self.fractions)
        d["lam_per_class"] = {str(k): v for k, v in self.lam_per_class.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _streams(seed: int) -> dict[str, np.random.SeedSequence]:
    # Independent child streams: the reference draws never perturb shuffling or init.
    split_ss, init_ss, shuffle_ss, ref_ss = np.random.SeedSequence(seed).spawn(4)
    return {"split": split_ss, "init": init_ss, "shuffle": shuffle_ss, "reference": ref_ss}


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset

    def get(self, name: str) -> Dataset:
        return getattr(self, name)


def make_splits(dataset: Dataset, config: TrainConfig) -> Splits:
    idx = split_indices(dataset, config.fractions, _streams(config.seed)["split"])
    parts = Splits(*(dataset.subset(i) for i in idx))
    missing = parts.train.missing_classes()
    if missing:
        raise ConfigError(f"class {missing[0]} is absent from the training split")
    return parts


@dataclass
class TrainLog:
    """Per-epoch metrics and per-batch regularization cost counters."""

    metrics: list[dict] = field(default_factory=list)
    batch_classes: list[int] = field(default_factory=list)  # D per batch
    batch_extra_forwards: list[int] = field(default_factory=list)
    skipped: list[tuple[int, int]] = field(default_factory=list)  # (epoch, class)


class W2Penalty:
    """Per-batch pseudo-gradient injection for a set of regularized classes."""

    def __init__(self, train: Dataset, lambdas: dict[int, float], m: int, grid_steps: int,
                 tau_step: float | None = None):
        self.train = train
        self.lambdas = dict(lambdas)
        self.m = m
        self.grid_steps = grid_steps
        self.tau_step = tau_step
        self.index = StratumIndex(train.y, train.s)
        self.support = train.support()
        self._warned: set[tuple[int, int]] = set()

    def apply(self, params: ModelParams, batch: np.ndarray, probs: np.ndarray, grad: np.ndarray,
              rng: np.random.Generator, epoch: int, trainlog: TrainLog) -> None:
        yb, sb = self.train.y[batch], self.train.s[batch]
        present = [c for c in self.lambdas if np.any(yb == c)]
        if not present:
            trainlog.batch_classes.append(0)
            trainlog.batch_extra_forwards.append(0)
            return

        usable, refs = [], []
        for c in present:
            if self.support[c].min() == 0:
                self._warn_empty(c, epoch, trainlog)
                continue
            drawn = [draw_reference(self.index, c, g, self.m, batch, rng) for g in (0, 1)]
            usable.append(c)
            refs.append(drawn)

        flat = np.concatenate([r for pair in refs for r in pair]) if refs else np.empty(0, np.int64)
        ref_probs = forward(params, self.train.X[flat]).probs if flat.size else np.empty((0, grad.shape[1]))
        trainlog.batch_classes.append(len(present))
        trainlog.batch_extra_forwards.append(int(flat.size))

        offset = 0
        for c, (r0, r1) in zip(usable, refs):
            p0 = ref_probs[offset:offset + r0.size, c]
            offset += r0.size
            p1 = ref_probs[offset:offset + r1.size, c]
            offset += r1.size
            members = yb == c
            out = probs[members, c]
            grp = sb[members]
            cdfs = GroupCdfPair.from_samples(
                np.concatenate([p0, out[grp == 0]]),
                np.concatenate([p1, out[grp == 1]]),
                self.grid_steps,
                n0=int(self.support[c, 0]),
                n1=int(self.support[c, 1]),
            )
            grad[members, c] += self.lambdas[c] * pseudo_grads(out, grp, cdfs, self.tau_step)

    def _warn_empty(self, c: int, epoch: int, trainlog: TrainLog) -> None:
        if (epoch, c) in self._warned:
            return
        self._warned.add((epoch, c))
        trainlog.skipped.append((epoch, c))
        warnings.warn(f"epoch {epoch}: class {c} has an empty group in training data; "
                      "skipping its regularization", EmptyStratumWarning, stacklevel=3)


def evaluate(params: ModelParams, ds: Dataset) -> AuditReport:
    preds = predict(forward(params, ds.X)) if len(ds) else np.empty(0, np.int64)
    return audit(preds, ds.y, ds.s, ds.n_classes, ds.class_names)


def _metric_row(phase: str, epoch: int, split_name: str, report: AuditReport) -> dict:
    row = {"phase": phase, "epoch": epoch, "split": split_name, "accuracy": report.accuracy,
           "f1_macro": report.f1_macro, "f1_weighted": report.f1_weighted}
    for k, g in enumerate(report.tpr_gap):
        row[f"tprg_{k}"] = None if np.isnan(g) else float(g)
    return row


def fit(train: Dataset, config: TrainConfig, penalty: W2Penalty | None = None,
        trainlog: TrainLog | None = None, monitor: dict[str, Dataset] | None = None,
        phase: str = "baseline") -> ModelParams:
    """Mini-batch training from a fresh initialization drawn from the run seed."""
    trainlog = trainlog if trainlog is not None else TrainLog()
    streams = _streams(config.seed)
    sizes = [train.n_features, *config.hidden, train.n_classes]
    params = ModelParams.init(sizes, np.random.default_rng(streams["init"]), config.activation)
    params.seed = config.seed
    opt = OptimizerState(config.optimizer, config.lr, config.beta1, config.beta2, config.eps)
    shuffle_rng = np.random.default_rng(streams["shuffle"])
    ref_rng = np.random.default_rng(streams["reference"])
    n = len(train)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            trace = forward(params, train.X[batch])
            grad = cross_entropy_grad(trace.probs, train.y[batch])
            if penalty is not None:
                penalty.apply(params, batch, trace.probs, grad, ref_rng, epoch, trainlog)
            step(params, backward(params, trace, grad), opt)
        for name, ds in (monitor or {}).items():
            trainlog.metrics.append(_metric_row(phase, epoch + 1, name, evaluate(params, ds)))
    return params


def _coerce(dataset: Dataset | Splits, config: TrainConfig) -> Splits:
    return dataset if isinstance(dataset, Splits) else make_splits(dataset, config)


def train_baseline(dataset: Dataset | Splits, config: TrainConfig,
                   trainlog: TrainLog | None = None) -> tuple[ModelParams, AuditReport]:
    """Plain empirical-risk training; returns the parameters and their validation audit."""
    splits = _coerce(dataset, config)
    monitor = {"train": splits.train, "val": splits.val}
    params = fit(splits.train, config, None, trainlog, monitor, "baseline")
    return params, evaluate(params, splits.val)


def train_regularized(dataset: Dataset | Splits, config: TrainConfig, classes: Sequence[int],
                      trainlog: TrainLog | None = None,
                      lam: float | None = None) -> tuple[ModelParams, AuditReport]:
    """Retrain from scratch with W2 pseudo-gradients on ``classes``.

    ``lam`` overrides the shared lambda; per-class overrides in the config win.
    """
    splits = _coerce(dataset, config)
    if not classes:
        raise ConfigError("no classes to regularize")
    for c in classes:
        if not 0 <= c < splits.train.n_classes or not np.any(splits.train.y == c):
            raise ConfigError(f"class {c} is not present in the training split")
    shared = config.lam if lam is None else lam
    lambdas = {int(c): config.lam_per_class.get(int(c), shared) for c in classes}
    penalty = W2Penalty(splits.train, lambdas, config.m, config.grid_steps)
    monitor = {"train": splits.train, "val": splits.val}
    params = fit(splits.train, config, penalty, trainlog, monitor, "regularized")
    return params, evaluate(params, splits.val)


@dataclass
class RunArtifacts:
    config: TrainConfig
    seed: int
    baseline: ModelParams
    regularized: ModelParams
    reports: dict[str, AuditReport]  # keys like "baseline/val"
    metrics: list[dict]
    selection: Selection
    chosen_lambda: float | None
    lambda_scores: list[dict]
    cost: dict
    notes: list[str] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "package": "w2fair",
            "version": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "seed": self.seed,
            "config_sha256": self.config.digest(),
            "selected_classes": list(self.selection.classes),
            "flagged_excluded": list(self.selection.flagged),
            "chosen_lambda": self.chosen_lambda,
            "lambda_scores": self.lambda_scores,
            "cost": self.cost,
            "notes": self.notes,
        }

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "audits").mkdir(exist_ok=True)
        _write_json(out / "config.json", self.config.to_dict())
        _write_json(out / "manifest.json", self.manifest())
        self.baseline.save(out / "checkpoints" / "baseline.json")
        self.regularized.save(out / "checkpoints" / "regularized.json")
        for key, report in sorted(self.reports.items()):
            (out / "audits" / (key.replace("/", "_") + ".json")).write_text(report.to_json())
        write_metrics_csv(out / "metrics.csv", self.metrics, self.manifest())
        return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_metrics_csv(path, rows: list[dict], manifest: dict) -> None:
    header_keys = []
    for r in rows:
        header_keys += [k for k in r if k not in header_keys]
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={manifest['seed']} config_sha256={manifest['config_sha256']}\n")
        w = csv.DictWriter(fh, fieldnames=header_keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in header_keys})


def _lambda_score(base: AuditReport, treated: AuditReport, classes: Sequence[int], max_drop: float) -> dict:
    gaps = [abs(treated.tpr_gap[c]) for c in classes]
    return {
        "max_abs_gap": float(np.nanmax(gaps)),
        "accuracy": treated.accuracy,
        "accuracy_drop": base.accuracy - treated.accuracy,
        "admissible": bool(base.accuracy - treated.accuracy <= max_drop),
    }


def run_pipeline(dataset: Dataset, config: TrainConfig, out_dir=None) -> RunArtifacts:
    """Baseline -> audit -> class selection -> regularized retrain -> final audits."""
    splits = make_splits(dataset, config)
    trainlog = TrainLog()
    baseline, _ = train_baseline(splits, config, trainlog)
    reports = {f"baseline/{name}": evaluate(baseline, splits.get(name)) for name in ("val", "test")}
    selection_report = evaluate(baseline, splits.get(config.selection_split))
    # The minimum-support rule is about how many training examples back a class.
    selection = select_classes(selection_report, SelectionRule(config.tau, config.min_support),
                               support=splits.train.support())
    notes = []
    if selection.flagged:
        notes.append(f"flagged but excluded for low support: {list(selection.flagged)}")

    chosen, scores = None, []
    if not selection.classes:
        notes.append(NO_SELECTION)
        regularized = baseline.copy()
    else:
        grid = config.lambda_grid or [config.lam]
        candidates = []
        for lam in grid:
            reglog = TrainLog()
            params, val_report = train_regularized(splits, config, selection.classes, reglog, lam=lam)
            score = _lambda_score(reports["baseline/val"], val_report, selection.classes,
                                  config.max_accuracy_drop)
            score["lambda"] = lam
            scores.append(score)
            candidates.append((params, reglog))
        if len(grid) == 1:
            pick = 0
        else:
            admissible = [i for i, s in enumerate(scores) if s["admissible"]]
            if admissible:
                pick = min(admissible, key=lambda i: (scores[i]["max_abs_gap"], i))
            else:
                pick = min(range(len(grid)), key=lambda i: (scores[i]["accuracy_drop"], i))
                notes.append("no lambda met the accuracy budget; kept the cheapest")
        chosen = grid[pick]
        regularized, reglog = candidates[pick]
        trainlog.metrics += reglog.metrics
        trainlog.batch_classes = reglog.batch_classes
        trainlog.batch_extra_forwards = reglog.batch_extra_forwards
        trainlog.skipped = reglog.skipped

    for name in ("val", "test"):
        reports[f"regularized/{name}"] = evaluate(regularized, splits.get(name))

    d = np.asarray(trainlog.batch_classes)
    x = np.asarray(trainlog.batch_extra_forwards)
    cost = {
        "batches_regularized_phase": int(d.size),
        "batches_with_regularized_class": int(np.count_nonzero(d)),
        "extra_forwards_total": int(x.sum()),
        "max_extra_over_budget": float(np.max(x / np.maximum(2 * config.m * d, 1))) if d.size else 0.0,
    }
    arts = RunArtifacts(config, config.seed, baseline, regularized, reports, trainlog.metrics,
                        selection, chosen, scores, cost, notes)
    if out_dir is not None:
        arts.save(out_dir)
    return arts
