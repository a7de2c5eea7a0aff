"""Error metrics."""
from __future__ import annotations

import numpy as np

from .errors import LengthMismatch


def l2e(pred, ref) -> float:
    """Root-mean-square deviation between predictions and reference values."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.size != ref.size:
        raise LengthMismatch(f"{pred.size} predictions vs {ref.size} reference values")
    if pred.size == 0:
        raise LengthMismatch("need at least one point")
    diff = pred - ref
    return float(np.sqrt(np.mean(diff * diff)))


def max_abs(pred, ref) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.size != ref.size:
        raise LengthMismatch(f"{pred.size} predictions vs {ref.size} reference values")
    return float(np.max(np.abs(pred - ref)))
