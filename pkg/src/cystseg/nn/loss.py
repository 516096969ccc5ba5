"""Softmax cross-entropy with a closed-form gradient."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _accumulate, _result, _track


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of one-hot targets.

    Gradient with respect to the logits is (softmax - target) / N.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.data.shape}")
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.data.shape:
        raise ShapeError(f"targets shape {targets.shape} != logits shape {logits.data.shape}")
    row_sums = targets.sum(axis=1)
    if not np.allclose(row_sums, 1.0) or ((targets != 0) & (targets != 1)).any():
        raise ShapeError("targets must be one-hot rows")

    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_den = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_den
    loss_value = -(targets * log_probs).sum() / n

    tracked = _track(logits)
    out = _result(np.asarray(loss_value, dtype=logits.data.dtype), (logits,), tracked)
    if tracked:
        probs = np.exp(log_probs)

        def backward():
            _accumulate(logits, out.grad * (probs - targets) / n)
        out._backward = backward
    return out
