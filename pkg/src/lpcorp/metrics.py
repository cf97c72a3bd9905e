"""Confusion counts and the stage-1 / corrected-only / final-corrected report rows.

Metrics with an empty denominator are ``None`` in Python and ``"undefined"`` in
emitted reports; they are never silently reported as zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import DataError
from .reasoner import Conclusion

UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def flipped(self) -> "ConfusionCounts":
        """Counts after inverting every prediction against fixed ground truth."""
        return ConfusionCounts(tp=self.fn, fp=self.tn, tn=self.fp, fn=self.tp)


def _as_label(x) -> int:
    if isinstance(x, Conclusion):
        if x is Conclusion.NOT_SURE:
            raise DataError("not-sure conclusions cannot be scored")
        return x.label
    x = int(x)
    if x not in (0, 1):
        raise DataError(f"prediction must be 0/1, got {x}")
    return x


def confusion(preds: Sequence, truths: Sequence) -> ConfusionCounts:
    if len(preds) != len(truths):
        raise DataError(f"{len(preds)} predictions vs {len(truths)} truths")
    if len(preds) == 0:
        raise DataError("cannot score an empty prediction list")
    c = [0, 0, 0, 0]
    for p, t in zip(preds, truths):
        p, t = _as_label(p), int(t)
        c[(0 if p == t else 1) if p == 1 else (2 if p == t else 3)] += 1
    return ConfusionCounts(*c)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    n_evaluated: int
    n_excluded: int = 0

    def to_dict(self) -> dict:
        def enc(v):
            return UNDEFINED if v is None else v
        return {
            "accuracy": self.accuracy,
            "precision": enc(self.precision),
            "recall": enc(self.recall),
            "tp": self.counts.tp, "fp": self.counts.fp,
            "tn": self.counts.tn, "fn": self.counts.fn,
            "n_evaluated": self.n_evaluated,
            "n_excluded": self.n_excluded,
        }


def report(counts: ConfusionCounts, n_excluded: int = 0) -> MetricsReport:
    if counts.total == 0:
        raise DataError("cannot report metrics over zero samples")
    return MetricsReport(
        counts,
        accuracy=(counts.tp + counts.tn) / counts.total,
        precision=_ratio(counts.tp, counts.tp + counts.fp),
        recall=_ratio(counts.tp, counts.tp + counts.fn),
        n_evaluated=counts.total,
        n_excluded=n_excluded,
    )


ROWS = ("stage1", "corrected_only", "final_corrected")


def three_row_report(stage1: Sequence, decisions: Sequence, truths: Sequence,
                     n_excluded: int = 0) -> dict:
    """Metrics for original conclusions, the flagged subset after correction, and all samples after correction.

    ``stage1`` holds the original conclusions, ``decisions`` the matching
    :class:`CorrectionDecision` objects. ``corrected_only`` is ``None`` when no
    sample is flagged.
    """
    if not (len(stage1) == len(decisions) == len(truths)):
        raise DataError("stage1, decisions and truths must align")
    for c, d in zip(stage1, decisions):
        if c != d.original:
            raise DataError(f"sample {d.sample_id!r}: decision does not match its stage-1 conclusion")
    final = [d.final_conclusion for d in decisions]
    flagged = [i for i, d in enumerate(decisions) if d.flagged]
    return {
        "stage1": report(confusion(stage1, truths), n_excluded),
        "corrected_only": (report(confusion([final[i] for i in flagged], [truths[i] for i in flagged]),
                                  n_excluded) if flagged else None),
        "final_corrected": report(confusion(final, truths), n_excluded),
    }


def rows_to_json(rows: dict, **extra) -> str:
    out = {name: (rows[name].to_dict() if rows[name] is not None else "empty") for name in ROWS}
    out.update(extra)
    return json.dumps(out, indent=2)


def _fmt(v) -> str:
    return UNDEFINED if v is None else f"{v:.4f}"


def rows_to_text(rows: dict, title: str = "") -> str:
    head = f"{'':<16}{'accuracy':>10}{'precision':>11}{'recall':>10}{'TP':>7}{'FP':>7}{'TN':>7}{'FN':>7}{'N':>7}"
    lines = [title] if title else []
    lines.append(head)
    labels = {"stage1": "stage-1", "corrected_only": "corrected only", "final_corrected": "final corrected"}
    for name in ROWS:
        r = rows[name]
        if r is None:
            lines.append(f"{labels[name]:<16}{'(no flagged samples)':>30}")
            continue
        c = r.counts
        lines.append(f"{labels[name]:<16}{_fmt(r.accuracy):>10}{_fmt(r.precision):>11}{_fmt(r.recall):>10}"
                     f"{c.tp:>7}{c.fp:>7}{c.tn:>7}{c.fn:>7}{r.n_evaluated:>7}")
    return "\n".join(lines) + "\n"
