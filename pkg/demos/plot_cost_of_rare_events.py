"""
Precision collapse and what it costs
====================================

At low prevalence even a good classifier mostly raises false alarms, yet
acting on its alarms can still be far cheaper than doing nothing when an
event costs much more than an intervention.
"""

from lpcorp.analytics import PrevalencePoint, precision_at_prevalence, trivial_accuracy
from lpcorp.costmodel import OperatingMetrics, baseline_cost, cost_reduction_pct, expected_cost, preset

# same detector (90% sensitivity, 5% false alarms) at shrinking prevalence
for p in (0.2, 0.05, 0.01, 0.001):
    pr = precision_at_prevalence(PrevalencePoint(p, 0.9, 0.05))
    print(f"prevalence {p:<6} precision {pr:.3f}   always-negative accuracy {trivial_accuracy(p):.3f}")

# an in-hospital event at 2% prevalence: 50,000 per event, 1,000 per intervention,
# and interventions prevent 70% of the events they reach
costs = preset("ihca", ep=0.02)
print("\nno model:", baseline_cost(costs), "per patient")
for recall, precision in [(1.0, 1.0), (0.9, 0.25), (0.9, 0.1), (0.7, 0.05), (0.6, 0.02)]:
    m = OperatingMetrics(recall, precision)
    print(f"R={recall:.1f} Pr={precision:.2f}: {expected_cost(costs, m):8.2f} per patient, "
          f"{cost_reduction_pct(costs, m):+7.2f}%")

# below some precision, intervening costs more than it saves
