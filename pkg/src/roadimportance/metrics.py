"""Ranking and thresholded metrics over pooled object scores."""
from __future__ import annotations

from typing import Sequence

import numpy as np


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    return s, y


def ranking(scores) -> np.ndarray:
    """Indices by descending score; equal scores keep their original order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mean of the precision measured at the rank of each positive."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positive labels")
    hits = y[ranking(s)]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    return float(precision[hits == 1].sum() / n_pos)


def precision_recall_curve(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) after each rank position, recall non-decreasing."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("precision-recall is undefined without positive labels")
    hits = y[ranking(s)]
    tp = np.cumsum(hits)
    k = np.arange(1, len(hits) + 1)
    return [(float(r), float(p)) for r, p in zip(tp / n_pos, tp / k)]


def confusion(scores, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with prediction ``score >= threshold``."""
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return (int(np.sum(pred & pos)), int(np.sum(pred & ~pos)), int(np.sum(~pred & pos)),
            int(np.sum(~pred & ~pos)))


def f1_score(scores, labels, threshold: float = 0.5) -> float:
    tp, fp, fn, _ = confusion(scores, labels, threshold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    tp, fp, fn, tn = confusion(scores, labels, threshold)
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("accuracy over zero objects is undefined")
    return (tp + tn) / total
