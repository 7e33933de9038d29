"""Command-line entry point: generate, train, audit, sweep, report.

Config precedence: built-in defaults < JSON config file < command-line flags.
Default output root: ``$W2FAIR_OUT`` if set, else ``./runs``.

Exit codes::

    0  success
    1  unexpected internal error
    2  usage error (unknown flag, bad arguments)
    3  configuration error (unreadable or invalid config / spec)
    4  data error (missing or malformed dataset)
    5  checkpoint or run-directory error

Failures print exactly one JSON line to stderr: ``{"error": kind, "code": n, "message": ...}``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audit import AuditReport
from .data import ConfigError, CsvSchema, DataError, SyntheticSpec, acceptance_spec, generate, load_csv, save_csv
from .model import ModelParams, ShapeError
from .trainer import TrainConfig, evaluate, make_splits, run_pipeline, train_baseline

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3, 4, 5
OUT_ENV = "W2FAIR_OUT"
EXPORT_VERSION = 1
EXPORT_FILES = ("accuracy_f1.csv", "tpr_gaps.csv", "confusion_diff.csv", "gain_matrix.csv")


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, code: int, message) -> int:
    line = json.dumps({"error": kind, "code": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def _out_dir(arg: str | None, name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, "runs")) / name


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {what} {path}: {e}") from None


def _load_config(args) -> TrainConfig:
    d = TrainConfig().to_dict()
    if args.config:
        d.update(_read_json(args.config, "config"))
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        # a fixed lambda replaces the grid
        d["lam"] = args.lam
        d["lambda_grid"] = []
    if getattr(args, "lambda_grid", None):
        d["lambda_grid"] = args.lambda_grid
    if getattr(args, "epochs", None) is not None:
        d["epochs"] = args.epochs
    return TrainConfig.from_dict(d)


def _load_data(path, class_names: str | None):
    if not Path(path).is_file():
        raise DataError(f"dataset not found: {path}")
    names = class_names.split(",") if class_names else None
    return load_csv(path, CsvSchema(class_names=names, n_classes=len(names) if names else None))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# commands

def cmd_generate(args) -> int:
    if args.spec:
        try:
            spec = SyntheticSpec.from_dict(_read_json(args.spec, "spec"))
        except TypeError as e:
            raise ConfigError(f"invalid spec {args.spec}: {e}") from None
        if args.seed is not None:
            spec.seed = args.seed
    else:
        spec = acceptance_spec(args.seed or 0)
    out = _out_dir(args.out, "data")
    out.mkdir(parents=True, exist_ok=True)
    ds = generate(spec)
    save_csv(ds, out / "data.csv")
    _write(out / "spec.json", json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "summary.json", json.dumps(ds.summary(), indent=2, sort_keys=True) + "\n")
    print(out / "data.csv")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    ds = _load_data(args.data, args.class_names)
    out = _out_dir(args.out, f"seed{config.seed}")
    if args.baseline_only:
        splits = make_splits(ds, config)
        params, _ = train_baseline(splits, config)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        _write(out / "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        params.save(out / "checkpoints" / "baseline.json")
        for name in ("val", "test"):
            _write(out / "audits" / f"baseline_{name}.json", evaluate(params, splits.get(name)).to_json())
    else:
        run_pipeline(ds, config, out)
    print(out)
    return EXIT_OK


def cmd_audit(args) -> int:
    ds = _load_data(args.data, args.class_names)
    try:
        params = ModelParams.load(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        raise RunError(f"cannot load checkpoint {args.checkpoint}: {e}") from None
    try:
        report = evaluate(params, ds)
    except ShapeError as e:
        raise RunError(str(e)) from None
    text = report.to_json()
    if args.out:
        _write(Path(args.out), text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _load_config(args)
    ds = _load_data(args.data, args.class_names)
    out = _out_dir(args.out, "sweep")
    rows = []
    for seed in args.seeds:
        config = TrainConfig.from_dict(dict(base.to_dict(), seed=seed))
        arts = run_pipeline(ds, config, out / f"seed{seed}")
        for key in sorted(arts.reports):
            phase, split_name = key.split("/")
            r = arts.reports[key]
            row = {"seed": seed, "phase": phase, "split": split_name, "accuracy": r.accuracy,
                   "f1_macro": r.f1_macro, "f1_weighted": r.f1_weighted, "lambda": arts.chosen_lambda}
            row.update({f"tprg_{k}": ("" if np.isnan(g) else float(g)) for k, g in enumerate(r.tpr_gap)})
            rows.append(row)
    buf = io.StringIO()
    buf.write(f"# format=w2fair-sweep v{EXPORT_VERSION} config_sha256={base.digest()} seeds={list(args.seeds)}\n")
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write(out / "sweep.csv", buf.getvalue())
    print(out)
    return EXIT_OK


# exports

def export_gain_matrix(base: AuditReport, treated: AuditReport) -> np.ndarray:
    """``|base diff| - |treated diff|`` entrywise; positive where the bias shrank."""
    a, b = np.asarray(base.confusion_diff), np.asarray(treated.confusion_diff)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"confusion-difference shapes differ: {a.shape} vs {b.shape}")
    if base.class_names and treated.class_names and base.class_names != treated.class_names:
        raise ValueError("class orderings differ")
    return np.abs(a) - np.abs(b)


def _run_dirs(paths: Sequence[str]) -> list[Path]:
    runs = []
    for p in map(Path, paths):
        if (p / "manifest.json").is_file():
            runs.append(p)
        else:
            runs += sorted(q.parent for q in p.glob("*/manifest.json"))
    if not runs:
        raise RunError(f"no run directories (with manifest.json) under {list(paths)}")
    return runs


def _load_run(run: Path) -> tuple[dict, dict[str, AuditReport]]:
    try:
        manifest = json.loads((run / "manifest.json").read_text())
        reports = {}
        for f in sorted((run / "audits").glob("*.json")):
            phase, split_name = f.stem.split("_", 1)
            reports[f"{phase}/{split_name}"] = AuditReport.from_dict(json.loads(f.read_text()))
    except (OSError, ValueError, KeyError) as e:
        raise RunError(f"unreadable run directory {run}: {e}") from None
    return manifest, reports


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _table(header_lines: list[str], columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _mean_diff(reports: list[AuditReport]) -> np.ndarray:
    stack = np.stack([r.confusion_diff for r in reports])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN rows stay NaN
        return np.nanmean(stack, axis=0)


def build_exports(run_paths: Sequence[str], split_name: str = "test") -> dict[str, str]:
    """The four export tables, keyed by file name."""
    runs = _run_dirs(run_paths)
    loaded = [(run, *_load_run(run)) for run in runs]
    header = [f"format=w2fair-export v{EXPORT_VERSION} split={split_name}"]
    header += [f"run={run.name} seed={m['seed']} config_sha256={m['config_sha256']} "
               f"selected={m['selected_classes']} lambda={m['chosen_lambda']}" for run, m, _ in loaded]

    acc_rows, gap_rows = [], []
    per_phase: dict[str, list[AuditReport]] = {"baseline": [], "regularized": []}
    names = None
    for run, m, reports in loaded:
        for phase in per_phase:
            r = reports.get(f"{phase}/{split_name}")
            if r is None:
                continue
            if names is None:
                names = r.class_names
            elif r.class_names != names:
                raise RunError(f"class names in {run} differ from earlier runs")
            per_phase[phase].append(r)
            acc_rows.append([run.name, m["seed"], phase, r.accuracy, r.f1_macro, r.f1_weighted])
            for k, name in enumerate(r.class_names):
                gap_rows.append([name, run.name, m["seed"], phase, r.tpr_gap[k]])
    if names is None:
        raise RunError(f"no {split_name} audits found")

    out = {
        "accuracy_f1.csv": _table(header, ["run", "seed", "phase", "accuracy", "f1_macro", "f1_weighted"], acc_rows),
        "tpr_gaps.csv": _table(header, ["class", "run", "seed", "phase", "tpr_gap"], gap_rows),
    }
    diff_rows = []
    means = {}
    for phase, reports in per_phase.items():
        if not reports:
            continue
        means[phase] = _mean_diff(reports)
        diff_rows += [[phase, name, *means[phase][k]] for k, name in enumerate(names)]
    note = ["entries averaged over runs; rows are true class, columns predicted class"]
    out["confusion_diff.csv"] = _table(header + note, ["phase", "class", *names], diff_rows)
    if "regularized" in means:
        template = per_phase["baseline"][0]
        gain = export_gain_matrix(replace(template, confusion_diff=means["baseline"]),
                                  replace(template, confusion_diff=means["regularized"]))
        gain_rows = [[name, *gain[k]] for k, name in enumerate(names)]
    else:
        gain_rows = []
    out["gain_matrix.csv"] = _table(header + ["gain = |baseline diff| - |regularized diff|; positive means less bias"],
                                    ["class", *names], gain_rows)
    return out


def cmd_report(args) -> int:
    tables = build_exports(args.runs, args.split)
    out = _out_dir(args.out, "report")
    for name, text in tables.items():
        _write(out / name, text)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="w2fair", description="W2 group-fairness regularization for multi-class classifiers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic biased dataset")
    g.add_argument("--spec", help="SyntheticSpec JSON (default: the built-in acceptance dataset)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    def common(sp, needs_config=True):
        sp.add_argument("--data", required=True, help="CSV with feature columns, label, group")
        sp.add_argument("--class-names", help="comma-separated names in class-id order")
        if needs_config:
            sp.add_argument("--config", help="TrainConfig JSON; flags override its fields")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--lambda", dest="lam", type=float, help="fixed lambda (disables the grid)")
            sp.add_argument("--lambda-grid", type=float, nargs="+")
            sp.add_argument("--epochs", type=int)
        sp.add_argument("--out")

    t = sub.add_parser("train", help="baseline, audit, selection and regularized retraining")
    common(t)
    t.add_argument("--baseline-only", action="store_true")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("audit", help="audit a checkpoint on a dataset")
    common(a, needs_config=False)
    a.add_argument("--checkpoint", required=True)
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("sweep", help="run the pipeline for several seeds and aggregate")
    common(s)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="export plot-ready tables from run directories")
    r.add_argument("runs", nargs="+", help="run directories, or directories containing them")
    r.add_argument("--split", default="test", choices=["val", "test"])
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("usage", EXIT_USAGE, e)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        return _fail("config", EXIT_CONFIG, e)
    except DataError as e:
        return _fail("data", EXIT_DATA, e)
    except RunError as e:
        return _fail("run", EXIT_RUN, e)
    except Exception as e:  # noqa: BLE001 - last-resort single-line report
        return _fail("internal", EXIT_INTERNAL, f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
