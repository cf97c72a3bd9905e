import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpcorp.corrector import apply_correction
from lpcorp.errors import DataError
from lpcorp.metrics import (ConfusionCounts, confusion, report, rows_to_json, rows_to_text,
                            three_row_report)
from lpcorp.reasoner import Conclusion, ReasonedSample

pairs = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60)


def recount(preds, truths):
    tp = sum(1 for p, t in zip(preds, truths) if p == 1 and t == 1)
    fp = sum(1 for p, t in zip(preds, truths) if p == 1 and t == 0)
    tn = sum(1 for p, t in zip(preds, truths) if p == 0 and t == 0)
    fn = sum(1 for p, t in zip(preds, truths) if p == 0 and t == 1)
    return tp, fp, tn, fn


def test_confusion_enumeration():
    assert confusion([1, 1, 0, 0], [1, 0, 0, 1]) == ConfusionCounts(tp=1, fp=1, tn=1, fn=1)


def test_confusion_accepts_conclusions():
    c = confusion([Conclusion.CLASS1, Conclusion.CLASS0], [1, 1])
    assert (c.tp, c.fn) == (1, 1)


def test_all_negative_predictor_scores_trivial_accuracy():
    truths = [1] * 3 + [0] * 97
    r = report(confusion([0] * 100, truths))
    assert r.counts.tp == r.counts.fp == 0
    assert r.accuracy == pytest.approx(0.97)
    assert r.precision is None


@pytest.mark.parametrize("preds,truths", [([], []), ([1], [1, 0])])
def test_confusion_rejects_bad_shapes(preds, truths):
    with pytest.raises(DataError):
        confusion(preds, truths)


def test_confusion_rejects_not_sure():
    with pytest.raises(DataError, match="not-sure"):
        confusion([Conclusion.NOT_SURE], [0])


def test_report_symmetric_counts():
    r = report(ConfusionCounts(1, 1, 1, 1))
    assert (r.accuracy, r.precision, r.recall) == (0.5, 0.5, 0.5)


def test_report_undefined_precision_is_explicit():
    r = report(ConfusionCounts(tp=0, fp=0, tn=5, fn=2))
    assert r.precision is None
    assert r.to_dict()["precision"] == "undefined"
    assert r.recall == 0.0


def test_report_worked_counts_against_recount():
    preds = [1] * 8 + [1] * 2 + [0] * 88 + [0] * 2
    truths = [1] * 8 + [0] * 2 + [0] * 88 + [1] * 2
    tp, fp, tn, fn = recount(preds, truths)
    r = report(confusion(preds, truths))
    assert (r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn) == (tp, fp, tn, fn) == (8, 2, 88, 2)
    assert r.precision == pytest.approx(0.8, abs=1e-15)
    assert r.recall == pytest.approx(0.8, abs=1e-15)
    assert r.accuracy == pytest.approx(0.96, abs=1e-15)


def test_report_rejects_empty():
    with pytest.raises(DataError):
        report(ConfusionCounts())


@given(pairs, st.randoms(use_true_random=False))
def test_confusion_permutation_invariant(data, rnd):
    shuffled = list(data)
    rnd.shuffle(shuffled)
    a = confusion([p for p, _ in data], [t for _, t in data])
    b = confusion([p for p, _ in shuffled], [t for _, t in shuffled])
    assert a == b


@given(pairs)
def test_accuracy_is_exact_mean_of_hits(data):
    preds, truths = zip(*data)
    r = report(confusion(preds, truths))
    exact = Fraction(sum(p == t for p, t in data), len(data))
    assert r.accuracy == float(exact)


@given(pairs)
def test_flip_bijection_and_involution(data):
    preds, truths = zip(*data)
    c = confusion(preds, truths)
    flipped = confusion([1 - p for p in preds], truths)
    assert flipped == ConfusionCounts(tp=c.fn, fp=c.tn, tn=c.fp, fn=c.tp) == c.flipped()
    assert c.flipped().flipped() == c


def _decisions(concl, p_correct, P):
    return [apply_correction(ReasonedSample(f"s{i}", "", Conclusion.from_label(c), ""), p, P)
            for i, (c, p) in enumerate(zip(concl, p_correct))]


def test_three_rows_at_half_use_identical_sets():
    rng = np.random.default_rng(3)
    concl = rng.integers(0, 2, 50).tolist()
    truths = rng.integers(0, 2, 50).tolist()
    p = rng.random(50).tolist()
    stage1 = [Conclusion.from_label(c) for c in concl]
    rows = three_row_report(stage1, _decisions(concl, p, 0.5), truths)
    assert rows["corrected_only"] == rows["final_corrected"]
    assert rows["corrected_only"].n_evaluated == 50


def test_three_rows_near_one_leave_stage1_unchanged():
    concl = [1, 0, 1, 0]
    truths = [1, 1, 0, 0]
    stage1 = [Conclusion.from_label(c) for c in concl]
    rows = three_row_report(stage1, _decisions(concl, [0.4, 0.6, 0.5, 0.55], 0.99), truths)
    assert rows["corrected_only"] is None
    assert rows["final_corrected"] == rows["stage1"]
    assert json.loads(rows_to_json(rows))["corrected_only"] == "empty"
    assert "(no flagged samples)" in rows_to_text(rows)


def test_three_rows_rejects_misaligned_decisions():
    stage1 = [Conclusion.CLASS1]
    with pytest.raises(DataError):
        three_row_report(stage1, _decisions([0], [0.9], 0.5), [1])


def test_final_beats_stage1_when_condition_holds():
    # 1,000 samples; the corrector's verdict is right with rate TPR on correct
    # conclusions and TNR on incorrect ones
    rng = np.random.default_rng(11)
    n, pi, tpr, tnr = 1000, 0.7, 0.8, 0.75
    truths = rng.integers(0, 2, n)
    correct = rng.random(n) < pi
    concl = np.where(correct, truths, 1 - truths)
    u = rng.random(n)
    judged_correct = np.where(correct, u < tpr, u >= tnr)
    p_correct = np.where(judged_correct, 0.8, 0.2)
    emp_pi = correct.mean()
    emp_tpr = judged_correct[correct].mean()
    emp_tnr = (~judged_correct[~correct]).mean()
    assert (1 - emp_pi) * emp_tnr > emp_pi * (1 - emp_tpr)
    stage1 = [Conclusion.from_label(int(c)) for c in concl]
    rows = three_row_report(stage1, _decisions(concl.tolist(), p_correct.tolist(), 0.5), truths.tolist())
    assert rows["final_corrected"].accuracy >= rows["stage1"].accuracy
    expected = emp_pi * emp_tpr + (1 - emp_pi) * emp_tnr
    assert rows["final_corrected"].accuracy == pytest.approx(expected, abs=1e-12)


def test_text_rows_are_aligned():
    rows = three_row_report([Conclusion.CLASS1, Conclusion.CLASS0], _decisions([1, 0], [0.9, 0.1], 0.7), [1, 1])
    lines = rows_to_text(rows, title="P=0.7").splitlines()
    assert lines[0] == "P=0.7"
    assert len({len(l) for l in lines[1:]}) == 1
