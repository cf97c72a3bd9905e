"""Expected cost of acting on a classifier's positive predictions.

Per sample, with event prevalence ``ep``, event cost ``ce``, intervention cost
``ci`` and intervention efficacy ``e``, intervening on every predicted positive
at recall ``R`` and precision ``Pr`` costs

    ep * (R * (ci / Pr - e * ce) + ce)

Interventions are paid on every predicted positive but only prevent events on
true positives. Currency is an abstract unit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

from .errors import DataError

DEFAULT_EFFICACY = 0.7


@dataclass(frozen=True)
class CostParams:
    ep: float
    ce: float
    ci: float
    e: float = DEFAULT_EFFICACY

    def __post_init__(self):
        if not 0 <= self.ep <= 1:
            raise DataError(f"event prevalence must lie in [0, 1], got {self.ep}")
        if self.ce < 0 or self.ci < 0:
            raise DataError("costs must be non-negative")
        if not 0 <= self.e <= 1:
            raise DataError(f"intervention efficacy must lie in [0, 1], got {self.e}")

    def with_prevalence(self, ep: float) -> "CostParams":
        return replace(self, ep=ep)


# Event / intervention costs for the three worked domains; prevalence comes from data.
PRESETS = {
    "complaints": dict(ce=1500.0, ci=50.0),
    "readmission": dict(ce=20000.0, ci=400.0),
    "ihca": dict(ce=50000.0, ci=1000.0),
}
PRESET_ALIASES = {"example1": "complaints", "example2": "readmission", "example3": "ihca"}


def preset(name: str, ep: float, e: float = DEFAULT_EFFICACY) -> CostParams:
    key = PRESET_ALIASES.get(name, name)
    if key not in PRESETS:
        raise DataError(f"unknown cost preset {name!r}; choose from {sorted(PRESETS) + sorted(PRESET_ALIASES)}")
    return CostParams(ep=ep, e=e, **PRESETS[key])


@dataclass(frozen=True)
class OperatingMetrics:
    recall: float
    precision: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.recall <= 1:
            raise DataError(f"recall must lie in [0, 1], got {self.recall}")
        if self.precision is not None and not 0 <= self.precision <= 1:
            raise DataError(f"precision must lie in [0, 1], got {self.precision}")


def baseline_cost(p: CostParams) -> float:
    return p.ep * p.ce


def expected_cost(p: CostParams, m: OperatingMetrics) -> float:
    if m.recall == 0:
        return baseline_cost(p)
    if not m.precision:
        raise DataError("recall > 0 requires a defined, positive precision")
    return p.ep * (m.recall * (p.ci / m.precision - p.e * p.ce) + p.ce)


def cost_reduction_pct(p: CostParams, m: OperatingMetrics) -> float:
    base = baseline_cost(p)
    if base == 0:
        raise DataError("baseline cost is zero; cost reduction is undefined")
    return (base - expected_cost(p, m)) / base * 100.0


def equal_cost_savings(pi: float, acc_corr: float, c: float, n: int) -> float:
    """Total savings when every final error costs ``c``: ``n * (acc_corr - pi) * c``."""
    if not (0 <= pi <= 1 and 0 <= acc_corr <= 1):
        raise DataError("accuracies must lie in [0, 1]")
    return n * (acc_corr - pi) * c


COST_COLUMNS = ("threshold", "R", "Pr", "cost_per_sample", "baseline", "reduction_pct")


def cost_row(p: CostParams, m: OperatingMetrics, threshold=None) -> dict:
    return {
        "threshold": "" if threshold is None else threshold,
        "R": m.recall,
        "Pr": "undefined" if m.precision is None else m.precision,
        "cost_per_sample": expected_cost(p, m),
        "baseline": baseline_cost(p),
        "reduction_pct": cost_reduction_pct(p, m),
    }


def write_cost_csv(rows, path) -> None:
    def fmt(k, v):
        if isinstance(v, float) and k in ("cost_per_sample", "baseline", "reduction_pct"):
            return f"{v:.2f}"
        return v

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COST_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: fmt(k, r[k]) for k in COST_COLUMNS})
