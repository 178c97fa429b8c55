"""Evaluation metrics: macro mAP for tagging, accuracy for classification."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, MetricUndefinedError


def average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """AP for one class: mean precision at each positive's rank.

    Ranking is by descending score; ties keep ascending sample index
    (stable sort), so results are deterministic.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    targets = np.asarray(targets).ravel()
    if scores.shape != targets.shape:
        raise DimensionError(f"scores {scores.shape} vs targets {targets.shape}")
    positives = int((targets > 0).sum())
    if positives == 0:
        raise MetricUndefinedError("average precision undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = (targets[order] > 0).astype(np.float64)
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float((precision_at * hits).sum() / positives)


def mean_average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """Macro average of per-class AP; classes with no positives are skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.ndim != 2 or scores.shape != targets.shape:
        raise DimensionError(
            f"expected matching (samples, classes) arrays, got {scores.shape} vs {targets.shape}"
        )
    values = []
    for c in range(scores.shape[1]):
        if (targets[:, c] > 0).any():
            values.append(average_precision(scores[:, c], targets[:, c]))
    if not values:
        raise MetricUndefinedError("no class has a positive example")
    return float(np.mean(values))


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose argmax score matches the integer label."""
    scores = np.asarray(scores)
    labels = np.asarray(labels).ravel()
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DimensionError(f"scores {scores.shape} do not pair with labels {labels.shape}")
    if len(labels) == 0:
        raise MetricUndefinedError("accuracy undefined on zero samples")
    return float((scores.argmax(axis=1) == labels).mean())
