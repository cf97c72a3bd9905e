"""Samples, datasets, ingestion, splitting and majority-class downsampling."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import DataError, IngestionError
from .seeding import rng_for


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    label: int
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise DataError("sample id must be nonempty")
        if not self.text.strip():
            raise DataError(f"sample {self.id!r}: text is empty")
        if self.label not in (0, 1):
            raise DataError(f"sample {self.id!r}: label must be 0 or 1, got {self.label!r}")


@dataclass
class Dataset:
    """Ordered collection of samples. Class 1 is always the rare/positive event."""

    samples: list
    class0_name: str = "class0"
    class1_name: str = "class1"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DataError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int8)

    def by_id(self) -> dict:
        return {s.id: s for s in self.samples}

    def class_counts(self) -> tuple:
        n1 = sum(s.label for s in self.samples)
        return len(self.samples) - n1, n1

    def require_both_classes(self):
        n0, n1 = self.class_counts()
        if n0 == 0 or n1 == 0:
            raise DataError(f"dataset must contain both classes (class0={n0}, class1={n1})")

    def subset(self, ids_or_samples: Iterable) -> "Dataset":
        return Dataset(list(ids_or_samples), self.class0_name, self.class1_name)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise DataError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise DataError("seed must be a non-negative integer")


# --------------------------------------------------------------------------
# ingestion

def _decode(path: Path) -> str:
    raw = path.read_bytes()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw[: exc.start].count(b"\n") + 1
        col = exc.start - (raw.rfind(b"\n", 0, exc.start) + 1) + 1
        raise IngestionError(
            f"{path}: invalid UTF-8 at byte {exc.start} (line {line}, column {col})"
        ) from None


def _parse_label(value, label_map, where):
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, int) and value in (0, 1):
        return value
    text = str(value).strip()
    if text in ("0", "1"):
        return int(text)
    if label_map:
        for key, lab in label_map.items():
            if key.casefold() == text.casefold():
                if lab not in (0, 1):
                    raise IngestionError(f"label mapping for {key!r} must be 0 or 1")
                return lab
    raise IngestionError(f"{where}: unparseable label {value!r}")


def _records_jsonl(text, path):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise IngestionError(f"{path}:{lineno}: record is not an object")
        yield lineno, rec


def _records_csv(text, path):
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if reader.fieldnames is None or not {"id", "text", "label"} <= set(reader.fieldnames):
        raise IngestionError(f"{path}: CSV header must include id, text, label")
    for row in reader:
        # line_num is the physical line of the end of the record
        rec = {k: row[k] for k in ("id", "text", "label")}
        rec["meta"] = {k: v for k, v in row.items() if k not in rec and k is not None and v != ""}
        yield reader.line_num, rec


def load_dataset(path, format: Optional[str] = None, label_map: Optional[Mapping[str, int]] = None,
                 class0_name: str = "class0", class1_name: str = "class1") -> Dataset:
    """Read a JSONL or CSV dataset file, preserving file order.

    ``label_map`` maps class-name strings to 0/1 (case-insensitive), for files
    whose label column holds outcome names rather than digits. Records with
    blank text are skipped and counted in ``Dataset.info["n_rejected_empty"]``.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("jsonl", "csv"):
        raise IngestionError(f"{path}: unsupported format {fmt!r} (expected jsonl or csv)")
    text = _decode(path)
    records = _records_jsonl(text, path) if fmt == "jsonl" else _records_csv(text, path)

    samples, seen, rejected = [], {}, 0
    for lineno, rec in records:
        where = f"{path}:{lineno}"
        sid = rec.get("id")
        if sid is None or str(sid).strip() == "":
            raise IngestionError(f"{where}: record has no id")
        sid = str(sid)
        if sid in seen:
            raise IngestionError(f"{where}: duplicate id {sid!r} (first seen on line {seen[sid]})")
        seen[sid] = lineno
        if "label" not in rec:
            raise IngestionError(f"{where}: record {sid!r} has no label")
        label = _parse_label(rec["label"], label_map, f"{where} (record {sid!r})")
        body = rec.get("text")
        if not isinstance(body, str) or not body.strip():
            rejected += 1
            continue
        meta = rec.get("meta") or {}
        samples.append(Sample(sid, body, label, {str(k): str(v) for k, v in meta.items()}))

    ds = Dataset(samples, class0_name, class1_name)
    ds.info["n_rejected_empty"] = rejected
    ds.info["source"] = str(path)
    return ds


def write_jsonl(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            rec = {"id": s.id, "text": s.text, "label": s.label, "meta": dict(s.meta)}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# splitting and resampling

def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple:
    """Deterministic train/test partition.

    The train side holds ``round_half_up(train_fraction * N)`` samples. When
    every sample carries ``meta["group_id"]`` the split is done group-wise (whole
    groups go to one side) and the train size is the first group boundary at or
    past that target.
    """
    n = len(ds)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    n_train = _round_half_up(_as_fraction(spec.train_fraction) * n)
    rng = rng_for(spec.seed, "split")

    if all("group_id" in s.meta for s in ds.samples):
        groups = {}
        for i, s in enumerate(ds.samples):
            groups.setdefault(s.meta["group_id"], []).append(i)
        keys = sorted(groups)
        train_idx = set()
        for k in rng.permutation(len(keys)):
            if len(train_idx) >= n_train:
                break
            train_idx.update(groups[keys[k]])
    else:
        train_idx = set(rng.permutation(n)[:n_train].tolist())

    train = [s for i, s in enumerate(ds.samples) if i in train_idx]
    test = [s for i, s in enumerate(ds.samples) if i not in train_idx]
    if not train or not test:
        raise DataError(f"split leaves an empty side (train={len(train)}, test={len(test)})")
    return ds.subset(train), ds.subset(test)


def prevalence(ds: Dataset) -> float:
    if len(ds) == 0:
        raise DataError("prevalence of an empty dataset is undefined")
    return sum(s.label for s in ds.samples) / len(ds)


def downsample_majority(ds: Dataset, ratio, seed: int) -> Dataset:
    """Keep every minority sample and ``floor(ratio * n_minority)`` majority ones.

    Retained samples keep their original order. If the majority class is too
    small to reach the target it is kept whole and ``info["capped"]`` is set.
    """
    ratio = _as_fraction(ratio)
    if ratio < 1:
        raise DataError(f"downsampling ratio must be >= 1, got {float(ratio)}")
    n0, n1 = ds.class_counts()
    if n0 == 0 or n1 == 0:
        raise DataError("downsampling needs both classes present")
    minority = 1 if n1 <= n0 else 0
    n_min = n1 if minority == 1 else n0
    maj_idx = [i for i, s in enumerate(ds.samples) if s.label != minority]
    target = math.floor(ratio * n_min)
    capped = target > len(maj_idx)
    if capped:
        keep_maj = set(maj_idx)
    else:
        rng = rng_for(seed, "downsample")
        keep_maj = {maj_idx[j] for j in rng.choice(len(maj_idx), size=target, replace=False)}
    kept = [s for i, s in enumerate(ds.samples) if s.label == minority or i in keep_maj]
    out = ds.subset(kept)
    out.info.update(capped=capped, majority_target=target, majority_available=len(maj_idx))
    return out


# --------------------------------------------------------------------------
# synthetic narratives

_FILLER = (
    "patient admitted with shortness of breath chest pain fever cough fatigue "
    "blood pressure stable heart rate elevated oxygen saturation improved lactate "
    "creatinine normal sodium potassium imaging unremarkable follow up planned "
    "medication adjusted antibiotics started fluids given monitoring continued "
    "family updated ambulating tolerating diet pain controlled wound clean "
    "telemetry sinus rhythm no acute distress labs pending consult requested"
).split()


def synthetic_dataset(n: int, prevalence: float, seed: int, signal_token: str = "sigmarker",
                      signal_rate_pos: float = 0.6, signal_rate_neg: float = 0.1,
                      words: int = 30, class0_name: str = "Will not have event",
                      class1_name: str = "Will have event") -> Dataset:
    """Random narratives with exactly ``round(n * prevalence)`` positives.

    Positives carry ``signal_token`` more often than negatives, which gives a
    synthetic oracle keyed on that token something to react to.
    """
    if n < 1:
        raise DataError("n must be positive")
    rng = rng_for(seed, "synthetic-dataset")
    n_pos = _round_half_up(_as_fraction(prevalence) * n)
    labels = np.zeros(n, dtype=int)
    labels[rng.choice(n, size=n_pos, replace=False)] = 1
    samples = []
    for i, lab in enumerate(labels):
        toks = list(rng.choice(_FILLER, size=words))
        rate = signal_rate_pos if lab else signal_rate_neg
        if rng.random() < rate:
            toks.insert(int(rng.integers(0, len(toks) + 1)), signal_token)
        samples.append(Sample(f"s{i:06d}", " ".join(toks), int(lab)))
    return Dataset(samples, class0_name, class1_name)
