"""
When does flipping doubtful answers help?
=========================================

A corrector judges each stage-1 answer correct or incorrect and flips the
ones it judges incorrect. Its quality on the two kinds of answer decides
whether the final accuracy goes up or down.
"""

import numpy as np

from lpcorp.analytics import (OperatingPoint, acc_corrected, heatmap_grid, improves, monte_carlo_acc,
                              net_improvement)

# a stage-1 model right 70% of the time, and a corrector that keeps 80% of
# the right answers and catches 75% of the wrong ones
op = OperatingPoint(pi=0.7, tpr=0.8, tnr=0.75)
print("corrected accuracy:", acc_corrected(op))
print("net improvement:  ", net_improvement(op))
print("improves:         ", improves(op))

# the closed form against a simulation of a million answers
print("simulated:        ", monte_carlo_acc(op, 10**6, seed=0))

# a weak corrector on a strong stage-1 model does harm
weak = OperatingPoint(pi=0.9, tpr=0.5, tnr=0.5)
print("coin-flip corrector on a 90% model:", net_improvement(weak))

# the whole (TPR, TNR) plane at baseline 0.7; the break-even line runs
# where 0.3 * TNR == 0.7 * (1 - TPR)
grid = heatmap_grid(0.7, 21)
helps = grid.delta > 0
print(f"{helps.mean():.0%} of the grid improves on the baseline")
for i in range(20, -1, -5):
    print(f"TPR {grid.tpr[i]:.2f} ", "".join("+" if d > 0 else ("." if d == 0 else "-") for d in grid.delta[i]))

grid.to_csv("heatmap.csv")
grid.to_svg("heatmap.svg")
