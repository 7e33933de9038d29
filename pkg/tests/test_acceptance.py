"""One test per acceptance criterion; each prints a PASS/FAIL line (also shown in the run summary)."""

import time

import numpy as np
import pytest

from conftest import fd_check, pseudo_flow, record, separated_gaussians
from w2fair.audit import SelectionRule, audit, confusion_by_group, select_classes, tpr_gaps
from w2fair.cli import export_gain_matrix
from w2fair.data import acceptance_spec, generate
from w2fair.distribution import w2
from w2fair.model import ModelParams
from w2fair.trainer import TrainConfig, TrainLog, make_splits, run_pipeline, train_baseline, train_regularized

SEEDS = range(5)
INJECTED = 2


def test_c1_w2_matches_sorted_matching():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        a, b = rng.uniform(size=n), rng.uniform(size=n)
        oracle = float(np.mean((np.sort(a) - np.sort(b)) ** 2))
        worst = max(worst, abs(w2(a, b, 10 * n) - oracle))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 10
    record("C1 W2 oracle", ok, f"max abs err {worst:.2e} (<=1e-3), {elapsed:.2f}s (<10s)")
    assert ok


def test_c2_pseudo_gradient_descent():
    t0 = time.perf_counter()
    trace = pseudo_flow(*separated_gaussians(0), grid_steps=50, eta=0.05, iters=100)
    elapsed = time.perf_counter() - t0
    frac = float(np.mean(np.diff(trace) < 0))
    ratio = trace[-1] / trace[0]
    ok = frac >= 0.95 and ratio <= 0.10 and elapsed < 10
    record("C2 pseudo-gradient descent", ok,
           f"{frac:.0%} decreasing steps (>=95%), final/initial {ratio:.4f} (<=0.10), {elapsed:.2f}s (<10s)")
    assert ok


def test_c3_backward_finite_differences():
    rng = np.random.default_rng(7)
    sizes = [3, 8, 8, 3]
    t0 = time.perf_counter()
    worst, n_params = 0.0, 0
    for case in range(100):
        params = ModelParams.init(sizes, int(rng.integers(2**31)))
        n_params = params.n_params
        worst = max(worst, fd_check(params, rng.normal(size=(1, 3)), rng.integers(0, 3, 1)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and n_params <= 200 and elapsed < 30
    record("C3 backward vs finite differences", ok,
           f"max rel err {worst:.2e} (<=1e-5) on {n_params} params, {elapsed:.2f}s (<30s)")
    assert ok


def test_c4_lambda_zero_bit_identical(tmp_path):
    ds = generate(acceptance_spec(0))
    cfg = TrainConfig(seed=0)
    splits = make_splits(ds, cfg)
    base, _ = train_baseline(splits, cfg)
    log = TrainLog()
    reg, _ = train_regularized(splits, cfg, [INJECTED], log, lam=0.0)
    base.save(tmp_path / "baseline.json")
    reg.save(tmp_path / "regularized.json")
    same = (tmp_path / "baseline.json").read_bytes() == (tmp_path / "regularized.json").read_bytes()
    ok = same and sum(log.batch_extra_forwards) > 0
    record("C4 lambda=0 equivalence", ok, f"checkpoint bytes equal: {same}")
    assert ok


@pytest.fixture(scope="module")
def acceptance_runs():
    runs = []
    for seed in SEEDS:
        t0 = time.perf_counter()
        arts = run_pipeline(generate(acceptance_spec(seed)), TrainConfig(seed=seed))
        runs.append((seed, arts, time.perf_counter() - t0))
    return runs


def _check_run(arts):
    b, t = arts.reports["baseline/test"], arts.reports["regularized/test"]
    base_gap, reg_gap = abs(b.tpr_gap[INJECTED]), abs(t.tpr_gap[INJECTED])
    others = [k for k in range(len(b.tpr_gap)) if k != INJECTED]
    return {
        "injected": base_gap >= 0.15,
        "a": arts.selection.classes == (INJECTED,),
        "b": reg_gap <= 0.5 * base_gap,
        "c": b.accuracy - t.accuracy <= 0.03,
        "d": max(abs(t.tpr_gap[k]) - abs(b.tpr_gap[k]) for k in others) <= 0.05,
        "detail": (f"|gap| {base_gap:.3f}->{reg_gap:.3f}, acc {b.accuracy:.4f}->{t.accuracy:.4f}, "
                   f"max other |gap| increase "
                   f"{max(abs(t.tpr_gap[k]) - abs(b.tpr_gap[k]) for k in others):+.3f}, "
                   f"selected {list(arts.selection.classes)}, lambda {arts.chosen_lambda}"),
    }


def test_c5_end_to_end_mitigation(acceptance_runs):
    all_ok = True
    for seed, arts, elapsed in acceptance_runs:
        r = _check_run(arts)
        ok = r["injected"] and r["a"] and r["b"] and r["c"] and r["d"] and elapsed < 600
        flags = " ".join(f"{k}={'ok' if r[k] else 'X'}" for k in ("injected", "a", "b", "c", "d"))
        record(f"C5 end-to-end seed {seed}", ok, f"{flags}; {r['detail']}; {elapsed:.0f}s (<600s)")
        all_ok &= ok
    assert all_ok


def test_c5_gain_positive_on_regularized_diagonal(acceptance_runs):
    ok = True
    for _, arts, _ in acceptance_runs:
        gain = export_gain_matrix(arts.reports["baseline/test"], arts.reports["regularized/test"])
        ok &= all(gain[c, c] > 0 for c in arts.selection.classes)
    record("C5 gain matrix diagonal", ok, "gain > 0 on every regularized class diagonal")
    assert ok


def test_c6_cost_contract():
    ds = generate(acceptance_spec(0))
    cfg = TrainConfig(seed=0, epochs=1, batch_size=2, m=16)
    log = TrainLog()
    train_regularized(make_splits(ds, cfg), cfg, [INJECTED], log, lam=100.0)
    d = np.asarray(log.batch_classes)
    x = np.asarray(log.batch_extra_forwards)
    within = bool(np.all(x <= 2 * cfg.m * d))
    gated = bool(np.all(x[d == 0] == 0))
    ok = within and gated and (d == 0).any() and (d > 0).any()
    record("C6 cost contract", ok,
           f"{d.size} batches, {int((d == 0).sum())} without regularized class; "
           f"extra <= 2mD: {within}; zero when D=0: {gated}")
    assert ok


def test_c7_audit_identities():
    rng = np.random.default_rng(11)
    worst_diag, swap_ok, worst_row = 0.0, True, 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(1, 300))
        preds, labels, groups = rng.integers(0, k, n), rng.integers(0, k, n), rng.integers(0, 2, n)
        rep = audit(preds, labels, groups, k)
        d = np.abs(np.diag(rep.confusion_diff) - rep.tpr_gap)
        nan_match = np.array_equal(np.isnan(np.diag(rep.confusion_diff)), np.isnan(rep.tpr_gap))
        worst_diag = max(worst_diag, float(np.nanmax(d, initial=0.0)) if nan_match else np.inf)
        swapped = tpr_gaps(confusion_by_group(preds, labels, 1 - groups, k))
        swap_ok &= np.array_equal(swapped, -rep.tpr_gap, equal_nan=True)
        conf = confusion_by_group(preds, labels, groups, k)
        for m, sup in ((conf.matrix0, conf.support0), (conf.matrix1, conf.support1)):
            if (sup > 0).any():
                worst_row = max(worst_row, float(np.abs(m[sup > 0].sum(axis=1) - 1).max()))
    ok = worst_diag <= 1e-9 and swap_ok and worst_row <= 1e-9
    record("C7 audit identities", ok,
           f"diag err {worst_diag:.1e}, swap negates exactly: {swap_ok}, row-sum err {worst_row:.1e}")
    assert ok


def test_c8_under_support_flagged():
    # class 0: 500/500 examples, no gap; class 1: 500 vs 40 examples, TPR 0.5 vs 0.8
    labels = np.r_[np.zeros(1000, int), np.ones(540, int)]
    groups = np.r_[np.zeros(500, int), np.ones(500, int), np.zeros(500, int), np.ones(40, int)]
    preds = labels.copy()
    preds[1000:1250] = 0  # half of group-0 class-1 missed
    preds[1500:1508] = 0  # 8 of 40 group-1 class-1 missed
    rep = audit(preds, labels, groups, 2)
    sel = select_classes(rep, SelectionRule(tau=0.1, min_support=100))
    gap = rep.tpr_gap[1]
    ok = abs(gap - 0.3) < 1e-12 and sel.classes == () and sel.flagged == (1,)
    record("C8 under-support exclusion", ok,
           f"gap {gap:+.2f}, support {rep.support[1].tolist()}, selected {list(sel.classes)}, "
           f"flagged {list(sel.flagged)}")
    assert ok
