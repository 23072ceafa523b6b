"""Log-scale evaluation metrics for popularity predictions."""
from __future__ import annotations

import numpy as np


def _check(p, p_hat):
    p = np.asarray(p, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if p.shape != p_hat.shape or p.ndim != 1:
        raise ValueError("expected two 1-d sequences of equal length")
    if p.size == 0:
        raise ValueError("metrics need at least one prediction")
    if np.any(p < 0):
        raise ValueError("true popularity must be non-negative")
    if np.any(p_hat <= -1):
        raise ValueError("predictions must exceed -1")
    return p, p_hat


def msle(p, p_hat) -> float:
    p, p_hat = _check(p, p_hat)
    return float(np.mean((np.log2(p + 1) - np.log2(p_hat + 1)) ** 2))


def mape(p, p_hat) -> float:
    p, p_hat = _check(p, p_hat)
    return float(np.mean(np.abs(np.log2(p + 2) - np.log2(p_hat + 2)) / np.log2(p + 2)))


def r2(p, p_hat) -> float:
    """Coefficient of determination on ``log2(P + 1)``.

    With a constant target the total sum of squares is zero; a perfect
    prediction then scores 1 and anything else is undefined (nan).
    """
    p, p_hat = _check(p, p_hat)
    y, y_hat = np.log2(p + 1), np.log2(p_hat + 1)
    sse = np.sum((y - y_hat) ** 2)
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        return 1.0 if sse == 0 else float("nan")
    return float(1.0 - sse / sst)


def all_metrics(p, p_hat) -> dict:
    return {"msle": msle(p, p_hat), "mape": mape(p, p_hat), "r2": r2(p, p_hat)}
