"""Stage-2 orchestration: split, vectorize, train, score, correct and evaluate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import features
from .analytics import DEFAULT_GRID, SweepResult, sweep_threshold
from .corpus import Dataset, SplitSpec, prevalence, split
from .corrector import CorrectionModel, CorrectionSet, apply_correction, make_labels, train
from .costmodel import CostParams
from .errors import DataError
from .metrics import three_row_report
from .reasoner import Conclusion, ReasonedSample

log = logging.getLogger(__name__)


@dataclass
class TrainParams:
    l2: Optional[float] = None
    tol: float = 1e-6
    max_iter: int = 1000


@dataclass
class CorrectionRun:
    vectorizer: features.TfidfModel
    model: CorrectionModel
    train_set: CorrectionSet
    test_set: CorrectionSet
    p_correct: np.ndarray          # on the test set
    n_excluded_train: int
    n_excluded_test: int
    sweep: Optional[SweepResult] = None
    reports: dict = field(default_factory=dict)  # P -> three-row report

    @property
    def target_balance(self) -> float:
        """Fraction of training conclusions that were correct."""
        return float(np.mean(self.train_set.y))

    def decisions(self, P: float) -> list:
        out = []
        for sid, c, p in zip(self.test_set.ids, self.test_set.conclusions, self.p_correct):
            r = ReasonedSample(sid, "", Conclusion.from_label(int(c)), "")
            out.append(apply_correction(r, float(p), P))
        return out

    def three_rows(self, P: float) -> dict:
        stage1 = [Conclusion.from_label(int(c)) for c in self.test_set.conclusions]
        return three_row_report(stage1, self.decisions(P), self.test_set.truths.tolist(),
                                n_excluded=self.n_excluded_test)


def run_correction(ds: Dataset, reasoned: Sequence[ReasonedSample], split_spec: SplitSpec = SplitSpec(),
                   tfidf: features.TfidfConfig = features.TfidfConfig(),
                   params: TrainParams = TrainParams(), costs: Optional[CostParams] = None,
                   grid: Sequence[float] = DEFAULT_GRID, report_thresholds: Sequence[float] = (0.5, 0.7),
                   prevalence_from_test: bool = True) -> CorrectionRun:
    """Train the corrector on the train split and evaluate it on the test split.

    The split is over dataset samples; not-sure conclusions on either side are
    dropped after splitting. When ``costs`` is given and
    ``prevalence_from_test`` is set, its event prevalence is replaced by the
    test split's.
    """
    if len(reasoned) != len(ds):
        by_id = {r.sample_id for r in reasoned}
        missing = [s.id for s in ds.samples if s.id not in by_id]
        raise DataError(f"{len(missing)} dataset samples lack stage-1 output (e.g. {missing[:3]})")
    train_ds, test_ds = split(ds, split_spec)
    r_by_id = {r.sample_id: r for r in reasoned}
    train_r = [r_by_id[s.id] for s in train_ds.samples]
    test_r = [r_by_id[s.id] for s in test_ds.samples]
    tr = make_labels(train_r, train_ds)
    te = make_labels(test_r, test_ds)
    if len(te.ids) == 0:
        raise DataError("no decisive stage-1 conclusions in the test split")
    n_ok = int(tr.y.sum())
    if n_ok in (0, len(tr.y)):
        raise DataError(f"correction target is single-class (correct={n_ok}, incorrect={len(tr.y) - n_ok})")

    vec = features.fit(tr.docs, tfidf)
    X_tr = vec.transform_many(tr.docs)
    X_te = vec.transform_many(te.docs)
    model = train(X_tr, tr.y, l2=params.l2, tol=params.tol, max_iter=params.max_iter,
                  fingerprint=vec.fingerprint())
    p = model.predict_proba(X_te)
    log.info("corrector: %d features, %d train / %d test, grad %.2e after %d iterations",
             len(vec), len(tr.ids), len(te.ids), model.grad_norm, model.n_iter)

    run = CorrectionRun(vec, model, tr, te, p, len(train_r) - len(tr.ids), len(test_r) - len(te.ids))
    if costs is not None and prevalence_from_test:
        costs = costs.with_prevalence(prevalence(test_ds.subset(
            [s for s in test_ds.samples if s.id in set(te.ids)])))
    run.sweep = sweep_threshold(te.conclusions, p, te.truths, costs, grid)
    run.sweep.extra["costs"] = costs
    for P in report_thresholds:
        run.reports[float(P)] = run.three_rows(P)
    return run
