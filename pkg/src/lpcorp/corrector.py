"""Stage 2: learn whether a stage-1 conclusion is correct, then flip the doubtful ones.

The correctness classifier is L2-regularized logistic regression on TF-IDF
features. Training minimizes

    (1/n) * sum_i log(1 + exp(-y_i * (w.x_i + b))) + (lam/2) * |w|^2 + (eps/2) * b^2

with y in {-1, +1} and a negligible ``eps`` on the bias so the problem stays
strictly convex. Any optimizer reaching the gradient tolerance is acceptable;
L-BFGS is used here, with a Newton-CG finish when it stalls.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import expit

from .corpus import Dataset
from .errors import ConvergenceError, DataError, ModelMismatchError
from .features import compose_segments
from .reasoner import Conclusion

FORMAT_VERSION = 1
BIAS_PENALTY = 1e-12


class CorrectionSet(NamedTuple):
    ids: list
    docs: list
    y: np.ndarray          # 1 = stage-1 conclusion was correct
    conclusions: np.ndarray  # stage-1 conclusion as 0/1
    truths: np.ndarray


def make_labels(reasoned: Sequence, ds: Dataset) -> CorrectionSet:
    """Correctness targets for every decisive stage-1 conclusion; NOT_SURE is dropped."""
    by_id = ds.by_id()
    ids, docs, y, concl, truth = [], [], [], [], []
    for r in reasoned:
        if r.sample_id not in by_id:
            raise DataError(f"reasoned sample {r.sample_id!r} not found in dataset")
        if r.conclusion is Conclusion.NOT_SURE:
            continue
        s = by_id[r.sample_id]
        ids.append(s.id)
        docs.append(compose_segments(s, r))
        c = r.conclusion.label
        concl.append(c)
        truth.append(s.label)
        y.append(int(c == s.label))
    return CorrectionSet(ids, docs, np.array(y, dtype=np.int8), np.array(concl, dtype=np.int8),
                         np.array(truth, dtype=np.int8))


# --------------------------------------------------------------------------
# objective

def _design(X):
    return X.tocsr() if sp.issparse(X) else np.asarray(X, dtype=float)


def objective(params: np.ndarray, X, y01: np.ndarray, l2: float) -> float:
    w, b = params[:-1], params[-1]
    ys = 2.0 * np.asarray(y01, dtype=float) - 1.0
    z = X @ w + b
    return (float(np.mean(np.logaddexp(0.0, -ys * z)))
            + 0.5 * l2 * float(w @ w) + 0.5 * BIAS_PENALTY * b * b)


def gradient(params: np.ndarray, X, y01: np.ndarray, l2: float) -> np.ndarray:
    w, b = params[:-1], params[-1]
    ys = 2.0 * np.asarray(y01, dtype=float) - 1.0
    z = X @ w + b
    r = -ys * expit(-ys * z) / len(ys)
    g = np.empty_like(params)
    g[:-1] = X.T @ r + l2 * w
    g[-1] = r.sum() + BIAS_PENALTY * b
    return g


def hessian_vector(params: np.ndarray, v: np.ndarray, X, y01: np.ndarray, l2: float) -> np.ndarray:
    w, b = params[:-1], params[-1]
    s = expit(X @ w + b)
    d = s * (1.0 - s) / X.shape[0]
    u = d * (X @ v[:-1] + v[-1])
    out = np.empty_like(v)
    out[:-1] = X.T @ u + l2 * v[:-1]
    out[-1] = u.sum() + BIAS_PENALTY * v[-1]
    return out


def _loss_and_grad(params, X, y01, l2):
    return objective(params, X, y01, l2), gradient(params, X, y01, l2)


@dataclass
class CorrectionModel:
    weights: np.ndarray
    bias: float
    l2: float
    tol: float
    max_iter: int
    vectorizer_fingerprint: str = ""
    grad_norm: float = float("nan")
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return len(self.weights)

    def decision(self, X) -> np.ndarray:
        X = _design(X)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.dim:
            raise DataError(f"feature dimension {X.shape[1]} does not match model dimension {self.dim}")
        return np.asarray(X @ self.weights + self.bias).ravel()

    def predict_proba(self, X) -> np.ndarray:
        """P(stage-1 conclusion is correct) for each row of ``X``."""
        return expit(self.decision(X))

    def save(self, path) -> None:
        rec = {
            "format": "lpcorp-corrector",
            "version": FORMAT_VERSION,
            "vectorizer_fingerprint": self.vectorizer_fingerprint,
            "l2": self.l2,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "grad_norm": self.grad_norm,
            "n_iter": self.n_iter,
            "bias": self.bias,
            "weights": self.weights.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rec, fh)

    @classmethod
    def load(cls, path, vectorizer=None) -> "CorrectionModel":
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
        if rec.get("format") != "lpcorp-corrector" or rec.get("version") != FORMAT_VERSION:
            raise ModelMismatchError(f"{path}: not an lpcorp-corrector v{FORMAT_VERSION} file")
        model = cls(np.asarray(rec["weights"], dtype=float), rec["bias"], rec["l2"], rec["tol"],
                    rec["max_iter"], rec["vectorizer_fingerprint"], rec["grad_norm"], rec["n_iter"])
        if vectorizer is not None:
            if vectorizer.fingerprint() != model.vectorizer_fingerprint or len(vectorizer) != model.dim:
                raise ModelMismatchError(f"{path}: model was trained against a different vectorizer")
        return model


def train(X, y, l2: Optional[float] = None, tol: float = 1e-6, max_iter: int = 1000,
          seed: int = 0, fingerprint: str = "") -> CorrectionModel:
    """Fit the correctness classifier from a zero start.

    ``l2`` defaults to ``1/n`` (unit regularization strength in the sum-of-losses
    scaling). ``seed`` is accepted for interface symmetry; the problem is convex
    and the start point fixed, so training is deterministic.
    """
    X = _design(X)
    y = np.asarray(y)
    if X.shape[0] != len(y) or len(y) == 0:
        raise DataError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if not set(np.unique(y)) <= {0, 1}:
        raise DataError("correctness labels must be 0/1")
    n1 = int(y.sum())
    if n1 == 0 or n1 == len(y):
        raise DataError(f"correctness labels are single-class (correct={n1}, incorrect={len(y) - n1})")
    if l2 is None:
        l2 = 1.0 / len(y)
    if l2 <= 0:
        raise DataError("l2 strength must be positive")

    x0 = np.zeros(X.shape[1] + 1)
    res = minimize(_loss_and_grad, x0, args=(X, y, l2), jac=True, method="L-BFGS-B",
                   options={"gtol": tol * 0.1, "ftol": 0.0, "maxiter": max_iter, "maxcor": 20})
    x, nit = res.x, res.nit
    gnorm = float(np.max(np.abs(gradient(x, X, y, l2))))
    if gnorm > tol and nit < max_iter:
        # ill-conditioned problems (very large l2) stall L-BFGS; finish with Newton-CG
        res = minimize(_loss_and_grad, x, args=(X, y, l2), jac=True, method="trust-ncg",
                       hessp=hessian_vector, options={"gtol": tol * 0.1, "maxiter": max_iter - nit})
        x, nit = res.x, nit + res.nit
        gnorm = float(np.max(np.abs(gradient(x, X, y, l2))))
    if gnorm > tol:
        raise ConvergenceError(
            f"logistic regression did not reach gradient tolerance {tol:g} "
            f"in {nit} iterations (final {gnorm:.3g}; {res.message})", grad_norm=gnorm)
    return CorrectionModel(x[:-1].copy(), float(x[-1]), l2, tol, max_iter, fingerprint, gnorm, int(nit))


def predict_correct(model: CorrectionModel, x) -> float:
    return float(model.predict_proba(x)[0])


# --------------------------------------------------------------------------
# flip rule

@dataclass(frozen=True)
class CorrectionDecision:
    sample_id: str
    original: Conclusion
    p_correct: float
    flipped: bool
    flagged: bool
    final_conclusion: Conclusion


def check_threshold(P: float) -> None:
    if not 0.5 <= P < 1:
        raise DataError(f"threshold P must lie in [0.5, 1), got {P}")


def apply_correction(reasoned, p_correct: float, P: float) -> CorrectionDecision:
    """Flip when the classifier is at least ``P`` sure the conclusion is wrong.

    A sample is flagged when the classifier is at least ``P`` sure either way;
    at ``P = 0.5`` every sample is flagged.
    """
    check_threshold(P)
    if reasoned.conclusion is Conclusion.NOT_SURE:
        raise DataError(f"sample {reasoned.sample_id!r}: not-sure conclusions cannot be corrected")
    p_wrong = 1.0 - p_correct
    flipped = p_wrong >= P
    flagged = max(p_correct, p_wrong) >= P
    final = reasoned.conclusion.flipped() if flipped else reasoned.conclusion
    return CorrectionDecision(reasoned.sample_id, reasoned.conclusion, float(p_correct),
                              bool(flipped), bool(flagged), final)


def correct_arrays(conclusions: np.ndarray, p_correct: np.ndarray, P: float):
    """Vectorized flip rule over 0/1 conclusions: returns (final, flipped, flagged)."""
    check_threshold(P)
    p_correct = np.asarray(p_correct, dtype=float)
    p_wrong = 1.0 - p_correct
    flipped = p_wrong >= P
    flagged = np.maximum(p_correct, p_wrong) >= P
    final = np.where(flipped, 1 - np.asarray(conclusions), conclusions)
    return final, flipped, flagged
