"""Index times for positive and negative admissions, with leakage-free note windows.

Positives are cut ``h`` hours before the event. Negatives get a pseudo index
time ``t_adm + offset``, with the offset resampled from the positives'
admission-to-event offsets restricted to ``offset <= LOS - h``. Only notes
stamped at or before the index time reach the model.

Durations are carried as float hours.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional, Sequence

import numpy as np
from scipy.stats import gaussian_kde

from .corpus import Dataset, Sample
from .errors import DataError
from .seeding import rng_for

HOUR = timedelta(hours=1)


class AdmissionExcluded(DataError):
    def __init__(self, admission_id, reason):
        super().__init__(f"admission {admission_id!r} excluded: {reason}")
        self.admission_id = admission_id
        self.reason = reason


def parse_time(value) -> datetime:
    if isinstance(value, datetime):
        return value
    text = str(value).strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise DataError(f"not an ISO-8601 timestamp: {value!r}") from None


def hours(td: timedelta) -> float:
    return td / HOUR


@dataclass
class AdmissionTimeline:
    admission_id: str
    t_adm: datetime
    t_dis: datetime
    t_event: Optional[datetime] = None
    notes: list = field(default_factory=list)  # (timestamp, text) pairs

    def __post_init__(self):
        if self.t_adm > self.t_dis:
            raise DataError(f"{self.admission_id}: discharge precedes admission")
        if self.t_event is not None and not self.t_adm <= self.t_event <= self.t_dis:
            raise DataError(f"{self.admission_id}: event time outside the stay")
        for t, _ in self.notes:
            if not self.t_adm <= t <= self.t_dis:
                raise DataError(f"{self.admission_id}: note at {t.isoformat()} outside the stay")

    @property
    def positive(self) -> bool:
        return self.t_event is not None

    @property
    def los_hours(self) -> float:
        return hours(self.t_dis - self.t_adm)

    @classmethod
    def from_record(cls, rec: dict) -> "AdmissionTimeline":
        try:
            notes = [(parse_time(n["t"]), n["text"]) for n in rec.get("notes", [])]
            ev = rec.get("t_event")
            return cls(str(rec["admission_id"]), parse_time(rec["t_adm"]), parse_time(rec["t_dis"]),
                       parse_time(ev) if ev not in (None, "") else None, notes)
        except KeyError as exc:
            raise DataError(f"timeline record lacks field {exc.args[0]!r}") from None

    def to_record(self) -> dict:
        return {
            "admission_id": self.admission_id,
            "t_adm": self.t_adm.isoformat(),
            "t_dis": self.t_dis.isoformat(),
            "t_event": self.t_event.isoformat() if self.t_event else None,
            "notes": [{"t": t.isoformat(), "text": x} for t, x in self.notes],
        }


def read_timelines(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(AdmissionTimeline.from_record(json.loads(line)))
            except (json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def write_timelines(timelines, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in timelines:
            fh.write(json.dumps(a.to_record(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class HorizonConfig:
    h: float = 6.0

    def __post_init__(self):
        if self.h <= 0:
            raise DataError("horizon must be positive")


@dataclass
class OffsetDistribution:
    """Multiset of admission-to-event offsets in hours, held sorted."""

    offsets: np.ndarray

    def __post_init__(self):
        self.offsets = np.sort(np.asarray(self.offsets, dtype=float))
        if np.any(self.offsets < 0):
            raise DataError("offsets must be non-negative")

    def __len__(self):
        return len(self.offsets)

    def feasible(self, limit: float) -> np.ndarray:
        return self.offsets[: np.searchsorted(self.offsets, limit, side="right")]


def positive_index_time(a: AdmissionTimeline, h: HorizonConfig = HorizonConfig()) -> datetime:
    if a.t_event is None:
        raise DataError(f"admission {a.admission_id!r} has no event time")
    t = a.t_event - h.h * HOUR
    if t < a.t_adm:
        raise AdmissionExcluded(a.admission_id, "insufficient pre-event window")
    return t


def collect_offsets(positives: Sequence[AdmissionTimeline]) -> OffsetDistribution:
    """Offsets from every positive admission, including ones later excluded for a short pre-event window."""
    if not positives:
        raise DataError("no positive admissions to build an offset distribution from")
    out = []
    for a in positives:
        if a.t_event is None:
            raise DataError(f"admission {a.admission_id!r} has no event time")
        out.append(hours(a.t_event - a.t_adm))
    return OffsetDistribution(np.array(out))


def sample_pseudo_event(a: AdmissionTimeline, dist: OffsetDistribution,
                        h: HorizonConfig = HorizonConfig(), seed: int = 0) -> datetime:
    """Pseudo index time for a negative admission.

    The offset is drawn uniformly from the positive offsets not exceeding
    ``LOS - h``, using a stream keyed by ``(seed, admission_id)``.
    """
    if a.t_event is not None:
        raise DataError(f"admission {a.admission_id!r} is positive; it has a real event time")
    if len(dist) == 0:
        raise DataError("offset distribution is empty")
    support = dist.feasible(a.los_hours - h.h)
    if len(support) == 0:
        raise AdmissionExcluded(a.admission_id, "no feasible pseudo-offset")
    rng = rng_for(seed, "pseudo-event", a.admission_id)
    off = float(support[rng.integers(len(support))])
    t = a.t_adm + off * HOUR
    # float round-trip through timedelta is microsecond-rounded; keep the bound
    return min(t, a.t_dis - h.h * HOUR)


def clip_notes(a: AdmissionTimeline, t_index: datetime) -> str:
    """Chronological notes with timestamp <= ``t_index``, newline-joined."""
    if not a.t_adm <= t_index <= a.t_dis:
        raise DataError(f"index time {t_index.isoformat()} outside admission {a.admission_id!r}")
    kept = sorted(((t, i, x) for i, (t, x) in enumerate(a.notes) if t <= t_index))
    return "\n".join(x for _, _, x in kept)


# --------------------------------------------------------------------------
# cohort construction

@dataclass
class AlignmentResult:
    dataset: Dataset
    exclusions: Counter
    positive_offsets: OffsetDistribution
    negative_offsets: OffsetDistribution
    index_times: dict

    def exclusion_report(self) -> dict:
        n0, n1 = self.dataset.class_counts()
        return {
            "emitted": len(self.dataset),
            "emitted_positive": n1,
            "emitted_negative": n0,
            "excluded": dict(sorted(self.exclusions.items())),
        }


def align_cohort(timelines: Sequence[AdmissionTimeline], h: HorizonConfig = HorizonConfig(),
                 seed: int = 0, class0_name: str = "Will not have event",
                 class1_name: str = "Will have event") -> AlignmentResult:
    """Build one labeled sample per admission from the notes visible at its index time."""
    positives = [a for a in timelines if a.positive]
    if not positives:
        raise DataError("cohort has no positive admissions")
    dist = collect_offsets(positives)
    samples, excl, idx, neg_offsets = [], Counter(), {}, []
    for a in timelines:
        try:
            if a.positive:
                t = positive_index_time(a, h)
            else:
                t = sample_pseudo_event(a, dist, h, seed)
        except AdmissionExcluded as exc:
            excl[exc.reason] += 1
            continue
        text = clip_notes(a, t)
        if not text.strip():
            excl["no notes in window"] += 1
            continue
        if not a.positive:
            neg_offsets.append(hours(t - a.t_adm))
        idx[a.admission_id] = t
        samples.append(Sample(a.admission_id, text, int(a.positive),
                              {"index_time": t.isoformat(), "admission_id": a.admission_id}))
    ds = Dataset(samples, class0_name, class1_name)
    return AlignmentResult(ds, excl, dist, OffsetDistribution(np.array(neg_offsets)), idx)


# --------------------------------------------------------------------------
# distribution exports

@dataclass
class DistributionExport:
    edges: np.ndarray
    pos_density: np.ndarray
    neg_density: Optional[np.ndarray]
    kde_x: np.ndarray
    pos_kde: np.ndarray
    neg_kde: Optional[np.ndarray]

    def histogram_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "positive_density"]
                       + (["negative_density"] if self.neg_density is not None else []))
            for k in range(len(self.edges) - 1):
                row = [repr(float(self.edges[k])), repr(float(self.edges[k + 1])), repr(float(self.pos_density[k]))]
                if self.neg_density is not None:
                    row.append(repr(float(self.neg_density[k])))
                w.writerow(row)

    def kde_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["hours", "positive_kde"] + (["negative_kde"] if self.neg_kde is not None else []))
            for k, x in enumerate(self.kde_x):
                row = [repr(float(x)), repr(float(self.pos_kde[k]))]
                if self.neg_kde is not None:
                    row.append(repr(float(self.neg_kde[k])))
                w.writerow(row)


def _kde(values, grid):
    if len(values) < 2 or np.ptp(values) == 0:
        return None
    return gaussian_kde(values, bw_method="silverman")(grid)


def export_distributions(pos: OffsetDistribution, neg_sampled: Optional[OffsetDistribution] = None,
                         bins: int = 30, kde_points: int = 200) -> DistributionExport:
    """Density-normalized histograms over a shared bin grid plus Gaussian KDEs.

    KDEs use Silverman's bandwidth and are evaluated on ``kde_points`` points
    spanning the data range padded by four bandwidths on each side.
    """
    if bins < 2:
        raise DataError("need at least 2 bins")
    if len(pos) == 0 or (neg_sampled is not None and len(neg_sampled) == 0):
        raise DataError("distributions must be nonempty")
    allv = pos.offsets if neg_sampled is None else np.concatenate([pos.offsets, neg_sampled.offsets])
    lo, hi = float(allv.min()), float(allv.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    pos_d, _ = np.histogram(pos.offsets, bins=edges, density=True)
    neg_d = None if neg_sampled is None else np.histogram(neg_sampled.offsets, bins=edges, density=True)[0]

    bw = 0.0
    for d in (pos, neg_sampled):
        if d is not None and len(d) > 1 and np.ptp(d.offsets) > 0:
            k = gaussian_kde(d.offsets, bw_method="silverman")
            bw = max(bw, float(np.sqrt(k.covariance[0, 0])))
    grid = np.linspace(lo - 4 * bw, hi + 4 * bw, kde_points)
    pos_k = _kde(pos.offsets, grid)
    neg_k = None if neg_sampled is None else _kde(neg_sampled.offsets, grid)
    if pos_k is None:
        pos_k = np.zeros_like(grid)
    if neg_sampled is not None and neg_k is None:
        neg_k = np.zeros_like(grid)
    return DistributionExport(edges, pos_d, neg_d, grid, pos_k, neg_k)


# --------------------------------------------------------------------------
# synthetic cohort

_NOTE_WORDS = (
    "vitals stable afebrile tachycardic hypotensive responsive alert oriented "
    "labs reviewed potassium low troponin trending lactate rising oxygen weaned "
    "diuresis continued plan unchanged family meeting telemetry ectopy pressors"
).split()


def synthetic_cohort(n_pos: int, n_neg: int, seed: int = 0, start: datetime = datetime(2020, 1, 1),
                     notes_per_day: float = 3.0, offset_shape: float = 1.3,
                     offset_scale: float = 60.0) -> list:
    """Admissions with gamma-distributed (right-skewed) event offsets and random notes.

    Every admission gets a note soon after admission so its window is
    never empty for lack of early notes.
    """
    rng = rng_for(seed, "synthetic-cohort")
    out = []
    for k in range(n_pos + n_neg):
        positive = k < n_pos
        t_adm = start + float(rng.uniform(0, 24 * 365)) * HOUR
        if positive:
            off = float(rng.gamma(offset_shape, offset_scale))
            los = off + float(rng.exponential(48.0))
        else:
            los = float(rng.lognormal(np.log(120.0), 0.6))
        t_dis = t_adm + los * HOUR
        n_notes = 1 + rng.poisson(notes_per_day * los / 24.0)
        times = np.sort(np.concatenate([[min(0.5, los)], rng.uniform(0, los, n_notes - 1)]))
        notes = [(t_adm + float(t) * HOUR, " ".join(rng.choice(_NOTE_WORDS, size=8))) for t in times]
        aid = f"adm{k:06d}"
        out.append(AdmissionTimeline(aid, t_adm, t_dis, t_adm + off * HOUR if positive else None, notes))
    return out
