"""Closed-form accuracy algebra for selective correction, its Monte Carlo check,
the improvement heatmap, precision collapse under low prevalence, and threshold
sweeps over scored evaluation sets.

Scalar formulas are evaluated in exact rational arithmetic on the decimal
values passed in and rounded once on return, so the worked example
``acc_corrected(0.7, 0.8, 0.75)`` is exactly ``0.785``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .corrector import correct_arrays
from .costmodel import CostParams, OperatingMetrics, cost_reduction_pct, expected_cost
from .errors import DataError
from .metrics import confusion, report
from .seeding import rng_for

DEFAULT_GRID = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


def _q(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(repr(float(x)))


def _check_prob(name, v):
    if not 0 <= v <= 1:
        raise DataError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class OperatingPoint:
    """Stage-1 accuracy ``pi`` and the corrector's TPR/TNR on the correct/incorrect classes."""

    pi: float
    tpr: float
    tnr: float

    def __post_init__(self):
        for k in ("pi", "tpr", "tnr"):
            _check_prob(k, getattr(self, k))


@dataclass(frozen=True)
class PrevalencePoint:
    """Event prevalence with event-level (not correctness-level) TPR and FPR."""

    p: float
    tpr_event: float
    fpr_event: float

    def __post_init__(self):
        for k in ("p", "tpr_event", "fpr_event"):
            _check_prob(k, getattr(self, k))


def _acc_corrected_q(op: OperatingPoint) -> Fraction:
    pi = _q(op.pi)
    return pi * _q(op.tpr) + (1 - pi) * _q(op.tnr)


def _net_improvement_q(op: OperatingPoint) -> Fraction:
    pi = _q(op.pi)
    return (1 - pi) * _q(op.tnr) - pi * (1 - _q(op.tpr))


def acc_corrected(op: OperatingPoint) -> float:
    return float(_acc_corrected_q(op))


def net_improvement(op: OperatingPoint) -> float:
    return float(_net_improvement_q(op))


def improves(op: OperatingPoint) -> bool:
    """True iff correction strictly raises accuracy: (1 - pi) TNR > pi (1 - TPR)."""
    pi = _q(op.pi)
    return (1 - pi) * _q(op.tnr) > pi * (1 - _q(op.tpr))


def precision_at_prevalence(pt: PrevalencePoint) -> Optional[float]:
    """Expected precision ``p TPR / (p TPR + (1 - p) FPR)``; ``None`` when nothing is predicted positive."""
    p = _q(pt.p)
    num = p * _q(pt.tpr_event)
    den = num + (1 - p) * _q(pt.fpr_event)
    return None if den == 0 else float(num / den)


def trivial_accuracy(p: float) -> float:
    """Accuracy of always predicting the majority (negative) class."""
    _check_prob("prevalence", p)
    return float(1 - _q(p))


# --------------------------------------------------------------------------
# heatmap

@dataclass
class HeatmapGrid:
    pi: float
    tpr: np.ndarray
    tnr: np.ndarray
    delta: np.ndarray  # delta[i, j] at (tpr[i], tnr[j])

    def rows(self):
        for i, a in enumerate(self.tpr):
            for j, b in enumerate(self.tnr):
                yield float(a), float(b), float(self.delta[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["tpr", "tnr", "delta"])
            for a, b, d in self.rows():
                w.writerow([repr(a), repr(b), repr(d)])

    def to_svg(self, path, cell: int = 12) -> None:
        """Diverging raster: red where correction hurts, blue where it helps."""
        n_i, n_j = self.delta.shape
        lim = float(np.max(np.abs(self.delta))) or 1.0
        pad = 40
        w, h = n_j * cell + 2 * pad, n_i * cell + 2 * pad
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">']
        for i in range(n_i):
            for j in range(n_j):
                t = self.delta[i, j] / lim
                if t >= 0:
                    rgb = (int(255 * (1 - t)), int(255 * (1 - t)), 255)
                else:
                    rgb = (255, int(255 * (1 + t)), int(255 * (1 + t)))
                # TPR increases upward, TNR to the right
                y = pad + (n_i - 1 - i) * cell
                x = pad + j * cell
                parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                             f'fill="rgb({rgb[0]},{rgb[1]},{rgb[2]})"/>')
        parts.append(f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle" font-size="12">TNR</text>')
        parts.append(f'<text x="12" y="{h / 2}" font-size="12" transform="rotate(-90 12 {h / 2})">TPR</text>')
        parts.append(f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="12">'
                     f'net improvement, baseline accuracy {self.pi:g}</text>')
        parts.append("</svg>")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(parts) + "\n")


def heatmap_grid(pi: float, tpr_steps: int = 101, tnr_steps: Optional[int] = None) -> HeatmapGrid:
    """Net improvement on the inclusive uniform grid [0, 1] x [0, 1]."""
    tnr_steps = tpr_steps if tnr_steps is None else tnr_steps
    if tpr_steps < 2 or tnr_steps < 2:
        raise DataError("heatmap needs at least 2 steps per axis")
    _check_prob("pi", pi)
    tpr = np.arange(tpr_steps) / (tpr_steps - 1)
    tnr = np.arange(tnr_steps) / (tnr_steps - 1)
    delta = (1 - pi) * tnr[None, :] - pi * (1 - tpr[:, None])
    return HeatmapGrid(pi, tpr, tnr, delta)


# --------------------------------------------------------------------------
# Monte Carlo

def monte_carlo_acc(op: OperatingPoint, n: int, seed: int = 0, prevalence: float = 0.5) -> float:
    """Empirical post-correction accuracy from ``n`` simulated samples.

    Ground truth, stage-1 correctness (rate ``pi``) and the corrector's verdict
    (per TPR/TNR) are drawn; conclusions judged incorrect are flipped.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    rng = rng_for(seed, "monte-carlo")
    truth = rng.random(n) < prevalence
    correct = rng.random(n) < op.pi
    concl = np.where(correct, truth, ~truth)
    u = rng.random(n)
    judged_correct = np.where(correct, u < op.tpr, u >= op.tnr)
    final = np.where(judged_correct, concl, ~concl)
    return float(np.count_nonzero(final == truth)) / n


# --------------------------------------------------------------------------
# threshold sweep

SWEEP_COLUMNS = ("P", "acc", "precision", "recall", "flagged", "cost", "reduction_pct")


@dataclass
class SweepResult:
    rows: list
    p_opt_acc: float
    p_opt_cost: Optional[float]
    extra: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        def fmt(v):
            if v is None:
                return "undefined"
            return repr(v) if isinstance(v, float) else v

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r[k]) for k in SWEEP_COLUMNS])


def evaluate_threshold(conclusions, p_correct, truths, P: float, costs: Optional[CostParams] = None) -> dict:
    """Final-corrected metrics (and cost, if ``costs`` given) at one threshold."""
    final, flipped, flagged = correct_arrays(conclusions, p_correct, P)
    rep = report(confusion(final.tolist(), list(truths)))
    row = {
        "P": float(P),
        "acc": rep.accuracy,
        "precision": rep.precision,
        "recall": rep.recall,
        "flagged": int(np.count_nonzero(flagged)),
        "flipped": int(np.count_nonzero(flipped)),
        "cost": None,
        "reduction_pct": None,
    }
    if costs is not None:
        m = OperatingMetrics(rep.recall or 0.0, rep.precision)
        row["cost"] = expected_cost(costs, m)
        row["reduction_pct"] = cost_reduction_pct(costs, m) if costs.ep * costs.ce > 0 else None
    return row


def sweep_threshold(conclusions, p_correct, truths, costs: Optional[CostParams] = None,
                    grid: Sequence[float] = DEFAULT_GRID) -> SweepResult:
    """Re-apply the flip rule at every grid threshold; pick best accuracy and lowest cost.

    Ties go to the smaller threshold.
    """
    grid = sorted(set(float(g) for g in grid))
    if not grid:
        raise DataError("threshold grid is empty")
    if len(conclusions) == 0:
        raise DataError("evaluation set is empty")
    conclusions = np.asarray(conclusions)
    p_correct = np.asarray(p_correct, dtype=float)
    truths = np.asarray(truths)
    rows = [evaluate_threshold(conclusions, p_correct, truths, P, costs) for P in grid]

    best_acc = rows[0]
    for r in rows[1:]:
        if r["acc"] > best_acc["acc"]:
            best_acc = r
    p_opt_cost = None
    if costs is not None:
        best_cost = rows[0]
        for r in rows[1:]:
            if r["cost"] < best_cost["cost"]:
                best_cost = r
        p_opt_cost = best_cost["P"]
    return SweepResult(rows, best_acc["P"], p_opt_cost)
