"""Classification metrics and seed aggregation."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """``M[i, j]`` counts samples with true class ``i`` predicted as ``j``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"label arrays differ in shape: {y_true.shape} vs {y_pred.shape}")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.size == 0:
        raise ContractError("accuracy of an empty split")
    return float(np.mean(y_true == y_pred))


def f1_score(y_true, y_pred, n_classes: int | None = None, average: str = "weighted") -> float:
    """Per-class F1 averaged by true support (``weighted``) or uniformly over present classes (``macro``).

    A class with no true positives has F1 = 0.
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.size == 0:
        raise ContractError("F1 of an empty split")
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    m = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(m).astype(np.float64)
    support = m.sum(axis=1).astype(np.float64)
    predicted = m.sum(axis=0).astype(np.float64)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    if average == "weighted":
        return float((f1 * support).sum() / support.sum())
    if average == "macro":
        present = denom > 0
        return float(f1[present].mean())
    raise ContractError(f"unknown F1 average {average!r}")


def mean_std(values) -> tuple:
    """Mean and population standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("cannot aggregate an empty list")
    return float(values.mean()), float(values.std())
