"""Point-accuracy metrics."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _pair(predictions, truths):
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise DataError(f"{p.size} predictions but {t.size} truths")
    if p.size == 0:
        raise DataError("metrics need at least one prediction")
    return p, t


def metric_mae(predictions, truths) -> float:
    p, t = _pair(predictions, truths)
    return float(np.mean(np.abs(p - t)))


def metric_rmse(predictions, truths) -> float:
    p, t = _pair(predictions, truths)
    return float(np.sqrt(np.mean((p - t) ** 2)))
