"""
Aligning negatives with positives in time
=========================================

Positive admissions are cut six hours before their event. Negative ones
have no event, so each gets a pseudo-event drawn from the positives'
admission-to-event times, limited to what fits inside its stay.
"""

import numpy as np

from lpcorp.temporal import align_cohort, export_distributions, synthetic_cohort

cohort = synthetic_cohort(n_pos=500, n_neg=3000, seed=0)
res = align_cohort(cohort, seed=0)
print(res.exclusion_report())

pos, neg = res.positive_offsets.offsets, res.negative_offsets.offsets
print(f"positive offsets: median {np.median(pos):.1f} h, negatives' pseudo-offsets: median {np.median(neg):.1f} h")

# negatives with short stays can only take early offsets, which pulls their
# distribution left of the positives'
ex = export_distributions(res.positive_offsets, res.negative_offsets, bins=20)
scale = 40 / max(ex.pos_density.max(), ex.neg_density.max())
for k in range(8):
    print(f"{ex.edges[k]:6.1f}-{ex.edges[k + 1]:6.1f} h  pos {'#' * int(scale * ex.pos_density[k])}")
    print(f"{'':15}  neg {'#' * int(scale * ex.neg_density[k])}")

ex.histogram_csv("offsets_hist.csv")
ex.kde_csv("offsets_kde.csv")

# the model only ever sees notes written up to the index time
s = res.dataset.samples[0]
print(s.id, s.meta["index_time"], repr(s.text[:80]))
