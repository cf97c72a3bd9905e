import csv
import itertools

import numpy as np
import pytest

from lpcorp.costmodel import (CostParams, OperatingMetrics, baseline_cost, cost_reduction_pct, cost_row,
                              equal_cost_savings, expected_cost, preset, write_cost_csv)
from lpcorp.errors import DataError


def test_ihca_worked_point():
    p = preset("ihca", ep=0.02)
    m = OperatingMetrics(1.0, 1.0)
    assert baseline_cost(p) == pytest.approx(1000.0)
    assert expected_cost(p, m) == pytest.approx(320.0)
    assert cost_reduction_pct(p, m) == pytest.approx(68.0)


def test_preset_aliases():
    assert preset("example3", 0.02) == preset("ihca", 0.02)
    assert preset("example1", 0.1).ce == 1500 and preset("example1", 0.1).ci == 50
    assert preset("example2", 0.1).ce == 20000 and preset("example2", 0.1).ci == 400
    with pytest.raises(DataError):
        preset("nope", 0.1)


@pytest.mark.parametrize("ep,ce,want", [(0.02, 50000, 1000.0), (0.0, 50000, 0.0), (0.1057, 1500, 158.55)])
def test_baseline(ep, ce, want):
    assert baseline_cost(CostParams(ep, ce, 10)) == pytest.approx(want, abs=1e-9)


def test_zero_recall_is_baseline():
    p = preset("readmission", 0.15)
    assert expected_cost(p, OperatingMetrics(0.0)) == baseline_cost(p)
    assert cost_reduction_pct(p, OperatingMetrics(0.0)) == 0.0


def test_recall_without_precision_rejected():
    with pytest.raises(DataError):
        expected_cost(preset("ihca", 0.02), OperatingMetrics(0.5))
    with pytest.raises(DataError):
        expected_cost(preset("ihca", 0.02), OperatingMetrics(0.5, 0.0))


def test_zero_baseline_rejected():
    with pytest.raises(DataError):
        cost_reduction_pct(CostParams(0.0, 100, 10), OperatingMetrics(0.5, 0.5))


@pytest.mark.parametrize("bad", [dict(ep=1.5, ce=1, ci=1), dict(ep=0.1, ce=-1, ci=1), dict(ep=0.1, ce=1, ci=1, e=2)])
def test_param_ranges(bad):
    with pytest.raises(DataError):
        CostParams(**bad)


@pytest.mark.parametrize("r,pr", [(0.2, 0.1), (1.0, 1.0), (0.7, 0.03)])
def test_useless_intervention_never_helps(r, pr):
    p = CostParams(0.05, 1000, 20, e=0.0)
    assert expected_cost(p, OperatingMetrics(r, pr)) >= baseline_cost(p)


def test_many_false_positives_increase_cost():
    # a stage-1 style point: decent recall, precision around 2%
    p = preset("ihca", 0.02)
    assert cost_reduction_pct(p, OperatingMetrics(0.6, 0.02)) < 0


def test_equal_cost_savings():
    assert equal_cost_savings(0.7, 0.785, 1, 1) == pytest.approx(0.085)
    assert equal_cost_savings(0.7, 0.7, 1, 100) == 0
    assert equal_cost_savings(0.7, 0.785, 50, 1000) == pytest.approx(4250)


grid = np.linspace(0.05, 1.0, 8)


def test_monotone_in_efficacy_precision_and_intervention_cost():
    for ep, r in itertools.product([0.01, 0.2], [0.3, 1.0]):
        for pr in grid:
            costs = [expected_cost(CostParams(ep, 5000, 100, e), OperatingMetrics(r, pr)) for e in grid]
            assert all(a >= b for a, b in zip(costs, costs[1:]))
        for e in grid:
            costs = [expected_cost(CostParams(ep, 5000, 100, e), OperatingMetrics(r, pr)) for pr in grid]
            assert all(a >= b for a, b in zip(costs, costs[1:]))
            costs = [expected_cost(CostParams(ep, 5000, ci, e), OperatingMetrics(r, 0.5)) for ci in grid * 500]
            assert all(a <= b for a, b in zip(costs, costs[1:]))


@pytest.mark.parametrize("ep,r,pr", [(0.02, 1.0, 1.0), (0.05, 0.6, 0.2), (0.1, 0.3, 0.5)])
def test_population_simulation_matches_closed_form(ep, r, pr):
    rng = np.random.default_rng(5)
    n = 200_000
    p = CostParams(ep, 5000, 300)
    events = rng.random(n) < ep
    # predicted positives: recall r among events, false positives sized so precision is pr
    tp = events & (rng.random(n) < r)
    fp_rate = ep * r * (1 - pr) / pr / (1 - ep)
    fp = ~events & (rng.random(n) < fp_rate)
    prevented = tp & (rng.random(n) < p.e)
    per_sample = p.ci * (tp | fp) + p.ce * (events & ~prevented)
    est = per_sample.mean()
    se = per_sample.std(ddof=1) / np.sqrt(n)
    assert abs(est - expected_cost(p, OperatingMetrics(r, pr))) <= 3 * se


def test_cost_csv_two_decimals(tmp_path):
    p = preset("ihca", 0.02)
    path = tmp_path / "cost.csv"
    write_cost_csv([cost_row(p, OperatingMetrics(1.0, 1.0), threshold=0.5),
                    cost_row(p, OperatingMetrics(0.0))], path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["cost_per_sample"] == "320.00" and rows[0]["reduction_pct"] == "68.00"
    assert rows[1]["Pr"] == "undefined" and rows[1]["threshold"] == ""
