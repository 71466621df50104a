"""Masked multi-label sigmoid cross-entropy over a supervision matrix.

Each (proposal, class) entry is its own binary problem: target 1 for
Positive, 0 for Negative, and no contribution at all for Ignore. The
per-entry loss uses the standard overflow-safe rearrangement
``max(z, 0) - z*y + log1p(exp(-|z|))``, so logits of any magnitude stay
finite.
"""

from __future__ import annotations

import numpy as np

from .assignment import SupervisionMatrix, SupervisionState
from .errors import NonFiniteLogitError, ShapeMismatchError


def _validate(logits, sup: SupervisionMatrix):
    logits = np.asarray(logits, dtype=np.float64)
    expected = (sup.num_proposals, sup.num_classes)
    if logits.shape != expected:
        raise ShapeMismatchError(f"logits shape {logits.shape} != supervision shape {expected}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLogitError("logits contain NaN or infinity")
    y = (sup.states == int(SupervisionState.POSITIVE)).astype(np.float64)
    supervised = sup.states != int(SupervisionState.IGNORE)
    return logits, y, supervised


def sigmoid_ce(logits, sup: SupervisionMatrix, normalize: bool = False):
    """Masked sigmoid cross-entropy.

    Returns ``(total, per_entry)`` where ``per_entry`` is exactly zero at
    Ignore entries and ``total`` sums the supervised entries. With
    ``normalize=True`` the total (and nothing else) is divided by the
    supervised-entry count.
    """
    logits, y, supervised = _validate(logits, sup)
    per_entry = np.zeros_like(logits)
    z = logits[supervised]
    per_entry[supervised] = np.maximum(z, 0.0) - z * y[supervised] + np.log1p(np.exp(-np.abs(z)))
    total = float(per_entry.sum())
    if normalize:
        total /= max(int(supervised.sum()), 1)
    return total, per_entry


def sigmoid_ce_grad(logits, sup: SupervisionMatrix, normalize: bool = False) -> np.ndarray:
    """Gradient of :func:`sigmoid_ce` with respect to the logits.

    ``sigmoid(z) - y`` on supervised entries, zero on Ignore entries, with
    the same optional normalization as the loss.
    """
    logits, y, supervised = _validate(logits, sup)
    grad = np.zeros_like(logits)
    z = logits[supervised]
    # piecewise-stable sigmoid, never exponentiates a positive argument
    sig = np.where(z >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    grad[supervised] = sig - y[supervised]
    if normalize:
        grad /= max(int(supervised.sum()), 1)
    return grad
