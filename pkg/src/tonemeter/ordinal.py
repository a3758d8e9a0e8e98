"""CORAL ordinal encoding, loss and decoding, plus the softmax classification head.

Loss functions take logits of shape ``(K-1,)``/``(K,)`` for a single sample
or ``(N, K-1)``/``(N, K)`` for a batch; batch losses are averaged over
samples. Each returns ``(loss, grad)`` with ``grad`` shaped like ``logits``.
"""

from __future__ import annotations

import numpy as np

NUM_CLASSES = 6


class NonFiniteLogitsError(ValueError):
    """Logits contain NaN or infinity."""


def _check_labels(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise ValueError(f"labels must be integers, got {labels!r}")
        y = y.astype(np.int64)
    if np.any((y < 1) | (y > num_classes)):
        raise ValueError(f"labels must lie in 1..{num_classes}, got {labels!r}")
    return y


def encode_ordinal(label, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Extended binary encoding: entry ``j`` (0-based) is 1 iff ``label > j + 1``."""
    y = _check_labels(label, num_classes)
    return (y[..., None] > np.arange(1, num_classes)).astype(np.float64)


def _log_sigmoid(z):
    # log(sigmoid(z)) = -log(1 + exp(-z)), stable for both signs
    return -np.logaddexp(0.0, -z)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(_log_sigmoid(z))


def coral_loss(logits, target, num_classes: int | None = None):
    """Summed binary cross-entropy over the K-1 rank thresholds.

    ``-sum_k [ y_k log s(z_k) + (1 - y_k) log(1 - s(z_k)) ]`` per sample.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteLogitsError("logits must be finite")
    k = z.shape[-1] + 1 if num_classes is None else num_classes
    levels = encode_ordinal(target, k)
    if levels.shape != z.shape:
        raise ValueError(f"logits shape {z.shape} does not match targets {levels.shape}")
    # log(1 - s(z)) = log s(-z)
    per = -(levels * _log_sigmoid(z) + (1.0 - levels) * _log_sigmoid(-z)).sum(axis=-1)
    grad = sigmoid(z) - levels
    if z.ndim == 1:
        return float(per), grad
    n = z.shape[0]
    return float(per.mean()), grad / n


def decode_rank(logits) -> np.ndarray | int:
    """Rank = 1 + number of thresholds whose probability strictly exceeds 0.5."""
    z = np.asarray(logits, dtype=np.float64)
    # sigmoid(z) > 0.5 <=> z > 0; a logit of exactly 0 is "not exceeded"
    out = 1 + np.sum(z > 0.0, axis=-1)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


def rank_probabilities(logits) -> np.ndarray:
    """P(y > k) for each threshold k."""
    return sigmoid(logits)


def project_biases(biases: np.ndarray) -> np.ndarray:
    """Sort threshold biases in non-increasing order (in place) and return them."""
    biases[:] = np.sort(biases)[::-1]
    return biases


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_head_loss(logits, target, num_classes: int | None = None):
    """Cross-entropy for the plain K-way classification head."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteLogitsError("logits must be finite")
    k = z.shape[-1] if num_classes is None else num_classes
    y = _check_labels(target, k)
    onehot = (y[..., None] == np.arange(1, k + 1)).astype(np.float64)
    if onehot.shape != z.shape:
        raise ValueError(f"logits shape {z.shape} does not match targets {onehot.shape}")
    m = z.max(axis=-1, keepdims=True)
    logz = (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]
    per = logz - (onehot * z).sum(axis=-1)
    grad = softmax(z) - onehot
    if z.ndim == 1:
        return float(per), grad
    n = z.shape[0]
    return float(per.mean()), grad / n


def decode_softmax(logits) -> np.ndarray | int:
    """Argmax class (1-based); ties resolve to the lowest class."""
    out = 1 + np.argmax(np.asarray(logits), axis=-1)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)
