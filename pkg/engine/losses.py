"""Softmax and the classification loss used by both puzzle and action heads."""

from typing import Tuple

import numpy as np

from .tensor import Tensor, as_tensor


def softmax(logits) -> Tensor:
    """Row-wise softmax with max-subtraction."""
    logits = as_tensor(logits, 2, "logits")
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(logits.dtype)


def softmax_cross_entropy(logits, labels) -> Tuple[float, Tensor]:
    """
    Mean cross-entropy of a batch of logits against integer labels.

    Args:
        logits: [N, K] scores
        labels: N integer class ids in [0, K)

    Returns:
        (loss, grad_logits) where grad_logits = (softmax - onehot) / N
    """
    logits = as_tensor(logits, 2, "logits")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"got {labels.shape[0]} labels for {n} logit rows")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")

    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))

    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)
