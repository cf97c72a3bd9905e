"""Exit criteria, each checked at its stated tolerance.

Every test records a one-line verdict (printed in the terminal summary) before
asserting, so a failing criterion still reports what was measured.
"""
import csv
import json
import math
import re
import time
from collections import Counter
from datetime import datetime, timedelta

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import ACCEPTANCE
from lpcorp import features
from lpcorp.analytics import (DEFAULT_GRID, OperatingPoint, PrevalencePoint, acc_corrected, monte_carlo_acc,
                              net_improvement, precision_at_prevalence)
from lpcorp.cli import main
from lpcorp.corrector import gradient, objective, train
from lpcorp.costmodel import OperatingMetrics, baseline_cost, cost_reduction_pct, expected_cost, preset
from lpcorp.metrics import ConfusionCounts, confusion
from lpcorp.temporal import (HOUR, AdmissionTimeline, OffsetDistribution, align_cohort, sample_pseudo_event,
                             synthetic_cohort)

pytestmark = pytest.mark.acceptance


def verdict(key, checks):
    """``checks`` is a list of (label, ok, measured) triples."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{label}={'ok' if good else 'FAILED'} ({measured})" for label, good, measured in checks)
    ACCEPTANCE[key] = (ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------

def test_criterion_1_worked_example():
    t0 = time.perf_counter()
    op = OperatingPoint(0.7, 0.8, 0.75)
    acc, gain = acc_corrected(op), net_improvement(op)
    dt = time.perf_counter() - t0
    verdict("1", [("acc_corrected == 0.785", acc == 0.785, repr(acc)),
                  ("net_improvement == 0.085", gain == 0.085, repr(gain)),
                  ("negligible runtime", dt < 0.1, f"{dt * 1e3:.2f} ms")])


def test_criterion_2_monte_carlo_matches_closed_form():
    rng = np.random.default_rng(2024)
    n = 10**6
    t0 = time.perf_counter()
    worst, misses = 0.0, 0
    for k in range(20):
        op = OperatingPoint(*(float(v) for v in rng.uniform(0, 1, 3)))
        f = acc_corrected(op)
        emp = monte_carlo_acc(op, n, seed=k)
        tol = 3 * math.sqrt(f * (1 - f) / n)
        ratio = abs(emp - f) / tol if tol else (0.0 if emp == f else math.inf)
        worst = max(worst, ratio)
        misses += ratio > 1
    dt = time.perf_counter() - t0
    verdict("2", [("20 points within 3 sigma", misses == 0, f"{misses} misses, worst |err|/3sigma={worst:.3f}"),
                  ("runtime < 30 s", dt < 30, f"{dt:.2f} s")])


def test_criterion_3_precision_collapse():
    rng = np.random.default_rng(3)
    N, tpr, fpr = 10**6, 0.8, 0.05
    checks = []
    for p in (0.1, 0.01, 0.001):
        truth = rng.random(N) < p
        pred = np.where(truth, rng.random(N) < tpr, rng.random(N) < fpr)
        tp = int(np.count_nonzero(pred & truth))
        fp = int(np.count_nonzero(pred & ~truth))
        emp = tp / (tp + fp)
        f = precision_at_prevalence(PrevalencePoint(p, tpr, fpr))
        sigma = math.sqrt(f * (1 - f) / (N * (p * tpr + (1 - p) * fpr)))
        checks.append((f"p={p}", abs(emp - f) <= 3 * sigma, f"formula {f:.5f} vs sim {emp:.5f}, 3sigma {3 * sigma:.5f}"))
    ps = [0.5, 0.2, 0.1, 0.05, 0.01, 0.005, 0.001, 1e-4, 1e-5, 1e-6]
    vals = [precision_at_prevalence(PrevalencePoint(q, tpr, fpr)) for q in ps]
    checks.append(("strictly decreasing as p -> 0", all(a > b for a, b in zip(vals, vals[1:])),
                   f"precision at p=1e-6 is {vals[-1]:.2e}"))
    verdict("3", checks)


# --------------------------------------------------------------------------
# end-to-end synthetic run shared by criteria 4, 5 and 6

@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    out = tmp_path_factory.mktemp("e2e")
    args = ["-o", str(out), "--set", "synthetic_dataset.n=10000", "--set", "synthetic_dataset.prevalence=0.02",
            "--set", "oracle.synthetic.acc_with_signal=0.7", "--set", "oracle.synthetic.acc_without_signal=0.7",
            "--set", "costs.preset='ihca'"]
    t0 = time.perf_counter()
    assert main(["reason", *args]) == 0
    assert main(["correct", *args]) == 0
    elapsed = time.perf_counter() - t0
    with open(out / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    scores = {
        "conclusion": np.array([int(r["conclusion"]) for r in rows]),
        "p_correct": np.array([float(r["p_correct"]) for r in rows]),
        "truth": np.array([int(r["truth"]) for r in rows]),
    }
    with open(out / "sweep.csv") as fh:
        sweep = list(csv.DictReader(fh))
    return {
        "out": out, "elapsed": elapsed, "scores": scores, "sweep": sweep,
        "manifest": json.loads((out / "manifest.json").read_text()),
        "selection": json.loads((out / "selection.json").read_text()),
        "p50": json.loads((out / "metrics_P0.50.json").read_text()),
    }


def test_criterion_4_cost_algebra(e2e):
    checks = []
    p = preset("example3", 0.02)
    m = OperatingMetrics(1.0, 1.0)
    checks.append(("baseline 1000", math.isclose(baseline_cost(p), 1000.0, rel_tol=1e-12), baseline_cost(p)))
    checks.append(("expected cost 320", math.isclose(expected_cost(p, m), 320.0, rel_tol=1e-12), expected_cost(p, m)))
    checks.append(("reduction 68%", math.isclose(cost_reduction_pct(p, m), 68.0, rel_tol=1e-12),
                   cost_reduction_pct(p, m)))

    # brute-force population: charge ci per predicted positive, ce per unprevented event
    rng = np.random.default_rng(4)
    n, R, Pr = 10**6, 0.7, 0.25
    events = rng.random(n) < p.ep
    tp = events & (rng.random(n) < R)
    fp = ~events & (rng.random(n) < p.ep * R * (1 - Pr) / Pr / (1 - p.ep))
    cost = p.ci * (tp | fp) + p.ce * (events & ~(tp & (rng.random(n) < p.e)))
    est, se = cost.mean(), cost.std(ddof=1) / math.sqrt(n)
    closed = expected_cost(p, OperatingMetrics(R, Pr))
    checks.append(("population simulation within 3 sigma", abs(est - closed) <= 3 * se,
                   f"closed {closed:.2f} vs sim {est:.2f} (3sigma {3 * se:.2f})"))

    # existence of a >50% reduction on the synthetic run, with a corrector of TNR >= 0.75 there
    s = e2e["scores"]
    wrong = s["conclusion"] != s["truth"]
    best = None
    for row in e2e["sweep"]:
        P = float(row["P"])
        tnr = float(np.mean((1 - s["p_correct"][wrong]) >= P))
        red = float(row["reduction_pct"])
        if red > 50 and tnr >= 0.75 and (best is None or red > best[1]):
            best = (P, red, tnr)
    checks.append((">50% reduction with TNR >= 0.75", best is not None,
                   "none" if best is None else f"P={best[0]:.2f} reduction {best[1]:.2f}% TNR {best[2]:.3f}"))
    verdict("4", checks)


def test_criterion_5_end_to_end(e2e):
    counts = e2e["manifest"]["correct"]["counts"]
    bal = counts["target_balance"]
    p50 = e2e["p50"]
    s1, fin = p50["stage1"], p50["final_corrected"]
    verdict("5", [
        ("(a) target balance in [0.3, 0.7]", 0.3 <= bal <= 0.7, f"{bal:.5f} over {counts['train']} training conclusions"),
        ("(b) final accuracy > stage-1", fin["accuracy"] > s1["accuracy"],
         f"{fin['accuracy']:.4f} vs {s1['accuracy']:.4f} at P=0.5"),
        ("(c) final precision > stage-1", fin["precision"] > s1["precision"],
         f"{fin['precision']:.4f} vs {s1['precision']:.4f} at P=0.5"),
        ("runtime < 5 min", e2e["elapsed"] < 300, f"{e2e['elapsed']:.1f} s"),
    ])


def test_criterion_6_threshold_semantics(e2e):
    s = e2e["scores"]
    counts = e2e["manifest"]["correct"]["counts"]
    flagged = [counts["flagged"][f"{P:.2f}"] for P in DEFAULT_GRID]
    flipped = [counts["flipped"][f"{P:.2f}"] for P in DEFAULT_GRID]
    n_eval = len(s["truth"])

    # independent exhaustive re-evaluation of every grid point
    ep = float(np.mean(s["truth"]))
    costs = preset("ihca", ep)
    best_acc = best_cost = None
    for P in DEFAULT_GRID:
        final = np.where(1 - s["p_correct"] >= P, 1 - s["conclusion"], s["conclusion"])
        acc = float(np.mean(final == s["truth"]))
        tp = int(np.sum((final == 1) & (s["truth"] == 1)))
        fp = int(np.sum((final == 1) & (s["truth"] == 0)))
        fn = int(np.sum((final == 0) & (s["truth"] == 1)))
        R = tp / (tp + fn)
        c = ep * costs.ce if R == 0 else ep * (R * (costs.ci * (tp + fp) / tp - costs.e * costs.ce) + costs.ce)
        if best_acc is None or acc > best_acc[1]:
            best_acc = (P, acc)
        if best_cost is None or c < best_cost[1] - 1e-9:
            best_cost = (P, c)
    sel = e2e["selection"]
    verdict("6", [
        ("flagged == n_evaluated at P=0.5", flagged[0] == n_eval, f"{flagged[0]} of {n_eval}"),
        ("flagged non-increasing", all(a >= b for a, b in zip(flagged, flagged[1:])), flagged),
        ("flipped non-increasing", all(a >= b for a, b in zip(flipped, flipped[1:])), flipped),
        ("P_opt selections match exhaustive", (sel["P_opt_acc"], sel["P_opt_cost"]) == (best_acc[0], best_cost[0]),
         f"sweep ({sel['P_opt_acc']}, {sel['P_opt_cost']}) vs exhaustive ({best_acc[0]}, {best_cost[0]})"),
    ])


# --------------------------------------------------------------------------

def _tfidf_oracle(docs, n_max):
    """Plain-Python TF-IDF: raw counts, smoothed idf, L2 rows, lexicographic vocabulary."""
    grams = []
    for d in docs:
        toks = re.findall(r"(?u)\b\w\w+\b", d.lower())
        grams.append(Counter(" ".join(toks[i:i + n]) for n in range(1, n_max + 1) for i in range(len(toks) - n + 1)))
    vocab = sorted(set().union(*grams))
    df = {t: sum(t in g for g in grams) for t in vocab}
    N = len(docs)
    idf = {t: math.log((1 + N) / (1 + df[t])) + 1 for t in vocab}
    rows = []
    for g in grams:
        v = [g[t] * idf[t] for t in vocab]
        norm = math.sqrt(sum(x * x for x in v))
        rows.append([x / norm for x in v])
    return vocab, rows


def test_criterion_7_learning_core():
    checks = []
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(50):
        n, d = int(rng.integers(5, 40)), int(rng.integers(1, 12))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 3)
        y = rng.integers(0, 2, n)
        params = rng.normal(size=d + 1)
        l2 = float(rng.uniform(0, 1))
        h = 1e-6
        num = np.empty(d + 1)
        for i in range(d + 1):
            e = np.zeros(d + 1)
            e[i] = h
            num[i] = (objective(params + e, X, y, l2) - objective(params - e, X, y, l2)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(num - gradient(params, X, y, l2)))))
    checks.append(("gradient vs central differences (50 instances)", worst <= 1e-5, f"max abs diff {worst:.2e}"))

    docs = ["The patient was stable overnight.",
            "Patient hypotensive; pressors started overnight.",
            "stable stable, discharge planned",
            "Pressors weaned and the patient is stable."]
    vocab, expected = _tfidf_oracle(docs, 4)
    model = features.fit(docs, features.TfidfConfig(1, 4))
    got = model.transform_many(docs).toarray()
    dev = float(np.max(np.abs(got - np.array(expected))))
    checks.append(("TF-IDF vs hand oracle (4 docs)", model.terms == vocab and dev <= 1e-12, f"max abs diff {dev:.1e}"))

    X = rng.normal(size=(300, 25))
    y = (X[:, 0] + rng.normal(size=300) > 0).astype(int)
    a, b = train(X, y), train(X, y)
    diff = max(float(np.max(np.abs(a.weights - b.weights))), abs(a.bias - b.bias))
    checks.append(("training deterministic to 1e-8", diff <= 1e-8, f"max diff {diff:.1e}"))
    verdict("7", checks)


def test_criterion_8_temporal_alignment():
    checks = []
    tl = synthetic_cohort(1000, 4000, seed=8)
    base = align_cohort(tl, seed=8)
    marker = "POSTINDEXPROBE"
    injected = []
    for a in tl:
        t = base.index_times.get(a.admission_id)
        extra = [] if t is None else [(t + timedelta(microseconds=1), marker), (a.t_dis, marker)]
        injected.append(AdmissionTimeline(a.admission_id, a.t_adm, a.t_dis, a.t_event, a.notes + extra))
    probe = align_cohort(injected, seed=8)
    same = [(s.id, s.text) for s in probe.dataset.samples] == [(s.id, s.text) for s in base.dataset.samples]
    leaked = sum(marker in s.text for s in probe.dataset.samples)
    checks.append(("leakage differential on every emitted sample", same and leaked == 0,
                   f"{len(base.dataset)} samples, {leaked} leaked"))
    by_id = {a.admission_id: a for a in tl}
    bad = sum(t + 6 * HOUR > by_id[k].t_dis for k, t in base.index_times.items())
    checks.append(("t_index + H <= t_dis", bad == 0, f"{bad} violations over {len(base.index_times)}"))

    rng = np.random.default_rng(88)
    pos = OffsetDistribution(np.round(rng.gamma(1.3, 60.0, 3000), 3))
    t0 = datetime(2022, 1, 1)
    los = rng.uniform(40, 600, 10**4)
    drawn = np.array([(sample_pseudo_event(AdmissionTimeline(f"n{k}", t0, t0 + float(l) * HOUR), pos, seed=8) - t0)
                      / HOUR for k, l in enumerate(los)])
    uniq = np.unique(pos.offsets)
    cut = np.searchsorted(uniq, np.quantile(pos.offsets, np.linspace(0, 1, 21)[1:-1]))
    edges = np.concatenate([[-np.inf], (uniq[cut - 1] + uniq[cut]) / 2, [np.inf]])
    expected = np.zeros(20)
    for l in los:
        support = pos.feasible(float(l) - 6.0)
        expected += np.histogram(support, bins=edges)[0] / len(support)
    observed = np.histogram(drawn, bins=edges)[0]
    pval = float(chisquare(observed, expected).pvalue)
    checks.append(("chi-square vs truncated positive distribution (N=1e4, 20 bins)", pval > 0.01, f"p={pval:.3f}"))
    verdict("8", checks)


def test_criterion_9_flip_bookkeeping():
    rng = np.random.default_rng(9)
    bad_map = bad_inv = 0
    for _ in range(200):
        n = int(rng.integers(1, 500))
        preds, truths = rng.integers(0, 2, n), rng.integers(0, 2, n)
        c = confusion(preds.tolist(), truths.tolist())
        f = confusion((1 - preds).tolist(), truths.tolist())
        bad_map += f != ConfusionCounts(tp=c.fn, fp=c.tn, tn=c.fp, fn=c.tp)
        bad_inv += confusion(preds.tolist(), truths.tolist()) != c.flipped().flipped()
    verdict("9", [("(tp,fp,tn,fn) -> (fn,tn,fp,tp) on 200 instances", bad_map == 0, f"{bad_map} mismatches"),
                  ("double flip is identity", bad_inv == 0, f"{bad_inv} mismatches")])
