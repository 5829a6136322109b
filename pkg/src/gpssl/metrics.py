"""Classification metrics: accuracy, ROC AUC, risk-coverage / AURC, pMSE."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RiskCoveragePoint:
    coverage: float
    risk: float
    threshold: float


def _probs(probs, y=None):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError("probs must be an (N, C) matrix")
    if y is not None:
        y = np.asarray(y, dtype=int)
        if len(y) != len(probs):
            raise ValueError(f"{len(probs)} prediction rows but {len(y)} labels")
    return probs, y


def accuracy(probs, y) -> float:
    """Fraction of rows whose argmax (ties -> lowest class) equals the label."""
    probs, y = _probs(probs, y)
    return float(np.mean(np.argmax(probs, axis=1) == y))


def _binary_auc(scores, positive) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with mid-ranks for ties."""
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_auc(probs, y) -> float:
    """Binary AUC on the class-1 column; macro one-vs-rest for C > 2."""
    probs, y = _probs(probs, y)
    C = probs.shape[1]
    if C < 2:
        raise ValueError("ROC AUC needs at least two classes")
    if C == 2:
        pos = y == 1
        if pos.all() or not pos.any():
            raise ValueError("binary ROC AUC needs both classes in y")
        return _binary_auc(probs[:, 1], pos)
    aucs = []
    for c in range(C):
        pos = y == c
        if not pos.any() or pos.all():
            logger.warning("class %d absent from labels (or the only class); skipped in macro AUC", c)
            continue
        aucs.append(_binary_auc(probs[:, c], pos))
    if not aucs:
        raise ValueError("no class usable for one-vs-rest AUC")
    return float(np.mean(aucs))


def risk_coverage(probs, y):
    """Risk at each coverage k/N after sorting by confidence; AURC is their mean.

    Returns (points, aurc). Ties in confidence are broken by row index.
    """
    probs, y = _probs(probs, y)
    conf = probs.max(axis=1)
    wrong = (np.argmax(probs, axis=1) != y).astype(float)
    order = np.lexsort((np.arange(len(conf)), -conf))
    k = np.arange(1, len(conf) + 1)
    risks = np.cumsum(wrong[order]) / k
    n = len(conf)
    points = [RiskCoveragePoint(float(c), float(r), float(t))
              for c, r, t in zip(k / n, risks, conf[order])]
    return points, float(risks.mean())


def aurc(probs, y) -> float:
    return risk_coverage(probs, y)[1]


def pmse(probs, true_probs) -> float:
    probs = np.asarray(probs, dtype=float)
    true_probs = np.asarray(true_probs, dtype=float)
    if probs.shape != true_probs.shape:
        raise ValueError(f"shape mismatch {probs.shape} vs {true_probs.shape}")
    return float(np.mean((probs - true_probs) ** 2))


def log_likelihood(probs, y, floor: float = 1e-300) -> float:
    """Mean log predictive probability of the true class."""
    probs, y = _probs(probs, y)
    return float(np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], floor))))


def entropy(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    return -(probs * np.log(np.clip(probs, 1e-300, None))).sum(axis=1)


def summary(probs, y) -> dict:
    return {"accuracy": accuracy(probs, y), "roc_auc": roc_auc(probs, y), "aurc": aurc(probs, y)}
