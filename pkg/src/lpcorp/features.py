"""Word n-gram TF-IDF over (narrative, reasoning) documents.

Weights are raw counts times a smoothed idf, ``ln((1 + N) / (1 + df)) + 1``,
then L2-normalized per document. A document may be a plain string or a tuple
of segments; n-grams never span a segment boundary.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ModelMismatchError

FORMAT_VERSION = 1

_TOKEN = re.compile(r"(?u)\b\w\w+\b")

Document = Union[str, Sequence[str]]


@dataclass(frozen=True)
class TfidfConfig:
    ngram_min: int = 1
    ngram_max: int = 4
    min_df: int = 1
    max_features: Optional[int] = None
    lowercase: bool = True

    def __post_init__(self):
        if self.ngram_min < 1 or self.ngram_max < self.ngram_min:
            raise DataError(f"invalid n-gram range ({self.ngram_min}, {self.ngram_max})")
        if self.min_df < 1:
            raise DataError("min_df must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise DataError("max_features must be positive")


def tokenize(text: str, lowercase: bool = True) -> list:
    if lowercase:
        text = text.lower()
    return _TOKEN.findall(text)


def _segments(doc: Document) -> Sequence[str]:
    return (doc,) if isinstance(doc, str) else doc


def ngrams(doc: Document, cfg: TfidfConfig) -> list:
    out = []
    for seg in _segments(doc):
        toks = tokenize(seg, cfg.lowercase)
        for n in range(cfg.ngram_min, cfg.ngram_max + 1):
            out.extend(" ".join(toks[i:i + n]) for i in range(len(toks) - n + 1))
    return out


@dataclass
class TfidfModel:
    vocabulary: dict
    idf: np.ndarray
    config: TfidfConfig

    def __len__(self):
        return len(self.vocabulary)

    @property
    def terms(self) -> list:
        return sorted(self.vocabulary, key=self.vocabulary.__getitem__)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for t in self.terms:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def transform(self, doc: Document) -> sp.csr_matrix:
        return transform(self, doc)

    def transform_many(self, docs) -> sp.csr_matrix:
        return transform_many(self, docs)

    def save(self, path) -> None:
        rec = {
            "format": "lpcorp-tfidf",
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "terms": self.terms,
            "idf": self.idf.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rec, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "TfidfModel":
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
        if rec.get("format") != "lpcorp-tfidf" or rec.get("version") != FORMAT_VERSION:
            raise ModelMismatchError(
                f"{path}: expected lpcorp-tfidf v{FORMAT_VERSION}, "
                f"found {rec.get('format')} v{rec.get('version')}"
            )
        terms = rec["terms"]
        return cls({t: i for i, t in enumerate(terms)}, np.asarray(rec["idf"], dtype=float),
                   TfidfConfig(**rec["config"]))


def fit(train_docs: Sequence[Document], cfg: TfidfConfig = TfidfConfig()) -> TfidfModel:
    if not train_docs:
        raise DataError("cannot fit TF-IDF on an empty corpus")
    df = Counter()
    for doc in train_docs:
        df.update(set(ngrams(doc, cfg)))
    kept = [(t, c) for t, c in df.items() if c >= cfg.min_df]
    if cfg.max_features is not None and len(kept) > cfg.max_features:
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        kept = kept[: cfg.max_features]
    if not kept:
        raise DataError("TF-IDF vocabulary is empty (no tokens of two or more word characters)")
    kept.sort()
    n = len(train_docs)
    vocab = {t: i for i, (t, _) in enumerate(kept)}
    idf = np.array([math.log((1 + n) / (1 + c)) + 1.0 for _, c in kept])
    return TfidfModel(vocab, idf, cfg)


def _row(model: TfidfModel, doc: Document):
    counts = Counter(g for g in ngrams(doc, model.config) if g in model.vocabulary)
    if not counts:
        return np.empty(0, dtype=np.int64), np.empty(0)
    cols = np.fromiter((model.vocabulary[g] for g in counts), dtype=np.int64, count=len(counts))
    order = np.argsort(cols)
    cols = cols[order]
    vals = np.fromiter(counts.values(), dtype=float, count=len(counts))[order] * model.idf[cols]
    return cols, vals / np.linalg.norm(vals)


def transform(model: TfidfModel, doc: Document) -> sp.csr_matrix:
    """One document as a 1 x |vocabulary| sparse row (unit L2 norm, or all zero)."""
    return transform_many(model, [doc])


def transform_many(model: TfidfModel, docs: Sequence[Document]) -> sp.csr_matrix:
    indptr, indices, data = [0], [], []
    for doc in docs:
        cols, vals = _row(model, doc)
        indices.append(cols)
        data.append(vals)
        indptr.append(indptr[-1] + len(cols))
    return sp.csr_matrix(
        (np.concatenate(data) if data else np.empty(0),
         np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
         np.asarray(indptr)),
        shape=(len(docs), len(model.vocabulary)),
    )


def compose_document(s, r) -> str:
    """Narrative and reasoning joined by a newline."""
    if r.sample_id != s.id:
        raise DataError(f"reasoning for {r.sample_id!r} paired with sample {s.id!r}")
    return s.text + "\n" + r.reasoning


def compose_segments(s, r) -> tuple:
    """Same pairing as :func:`compose_document`, kept as two segments for n-gram extraction."""
    if r.sample_id != s.id:
        raise DataError(f"reasoning for {r.sample_id!r} paired with sample {s.id!r}")
    return (s.text, r.reasoning)
