"""Count-error metrics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from mvcount.errors import DomainError


def _pairs(preds: Sequence[float], gts: Sequence[float]):
    preds, gts = np.asarray(preds, dtype=float), np.asarray(gts, dtype=float)
    if preds.shape != gts.shape or preds.ndim != 1:
        raise DomainError("predictions and ground truths must be equal-length lists")
    if preds.size == 0:
        raise DomainError("metrics need at least one pair")
    return preds, gts


def mae(preds: Sequence[float], gts: Sequence[float]) -> float:
    preds, gts = _pairs(preds, gts)
    return float(np.mean(np.abs(preds - gts)))


def nae(preds: Sequence[float], gts: Sequence[float]) -> float:
    """Mean of ``|pred - gt| / gt``; every ground truth must be positive."""
    preds, gts = _pairs(preds, gts)
    if np.any(gts <= 0):
        raise DomainError("NAE is undefined for non-positive ground-truth counts")
    return float(np.mean(np.abs(preds - gts) / gts))
