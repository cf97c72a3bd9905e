"""
Two-stage correction on a synthetic rare-event corpus
=====================================================

Stage 1 is a scripted stand-in for a reasoning model: 70% accurate, with a
few cue phrases in its reasoning that hint whether it got the case right.
Stage 2 learns those hints from TF-IDF features of text plus reasoning and
flips the answers it believes are wrong.
"""

from lpcorp.corpus import synthetic_dataset
from lpcorp.costmodel import preset
from lpcorp.metrics import rows_to_text
from lpcorp.pipeline import run_correction
from lpcorp.reasoner import PromptTemplate, SyntheticOracle, run_stage1

ds = synthetic_dataset(10_000, prevalence=0.02, seed=0)
print(ds.class_counts(), "(negative, positive)")

oracle = SyntheticOracle(acc_with_signal=0.7, acc_without_signal=0.7, seed=1)
stage1 = run_stage1(ds, oracle, PromptTemplate.for_dataset(ds))
print(stage1.reasoned[0].reasoning[:120], "...")

# stage-1 answers are right about 70% of the time, so the correctness
# target is far less skewed than the 2% event rate
run = run_correction(ds, stage1.reasoned, costs=preset("ihca", 0.02))
print(f"correct / all stage-1 answers in training: {run.target_balance:.3f}")

for P, rows in run.reports.items():
    print(rows_to_text(rows, title=f"threshold {P}"))

for r in run.sweep.rows:
    print(f"P={r['P']:.2f} acc={r['acc']:.3f} flagged={r['flagged']:5d} cost={r['cost']:8.2f} "
          f"({r['reduction_pct']:+.1f}%)")
print("best threshold for accuracy:", run.sweep.p_opt_acc, " for cost:", run.sweep.p_opt_cost)
