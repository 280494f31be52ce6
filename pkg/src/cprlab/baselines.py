"""Comparison regularizers: DeCov, the OrthoReg cost, and squentropy."""
from __future__ import annotations

import numpy as np

from .errors import BatchTooSmall, LabelOutOfRange
from .model import cross_entropy, softmax
from .numerics import normalize_backward, normalize_rows


def decov_loss(features):
    """Half the squared Frobenius norm of the off-diagonal batch covariance.

    Returns ``(loss, dloss/dH)`` for an ``(n, d)`` activation batch ``H``.
    """
    H = np.asarray(features, dtype=np.float64)
    n = H.shape[0]
    if n < 2:
        raise BatchTooSmall(f"DeCov needs at least 2 samples, got {n}")
    Hc = H - H.mean(axis=0)
    C = Hc.T @ Hc / n
    off = C - np.diag(np.diag(C))
    loss = 0.5 * float(np.sum(off * off))
    return loss, (2.0 / n) * Hc @ off


def orthoreg_cost(weight_rows, mode: str = "both"):
    """``0.5 * sum_{i != j} CS(w_i, w_j)^2`` over the rows of a weight matrix.

    ``mode="positive"`` drops pairs with negative cosine similarity, so only
    positively correlated filters are penalized.
    """
    W = np.asarray(weight_rows, dtype=np.float64)
    if mode not in ("both", "positive"):
        raise ValueError(f"mode must be 'both' or 'positive', got {mode!r}")
    U, norms = normalize_rows(W)
    C = U @ U.T
    np.fill_diagonal(C, 0.0)
    if mode == "positive":
        C = np.where(C > 0, C, 0.0)
    loss = 0.5 * float(np.sum(C * C))
    return loss, normalize_backward(U, norms, 2.0 * C @ U)


def squentropy_loss(z, label: int):
    """Cross-entropy plus the mean squared non-true logit."""
    z = np.asarray(z, dtype=np.float64)
    K = z.size
    if K < 2:
        raise LabelOutOfRange("squentropy needs at least 2 classes")
    ce, grad = cross_entropy(z, label)
    mask = np.ones(K, dtype=bool)
    mask[label] = False
    loss = ce + float(np.sum(z[mask] ** 2)) / (K - 1)
    grad = grad + np.where(mask, 2.0 * z / (K - 1), 0.0)
    return loss, grad


def squentropy_batch(z, labels):
    """Batch-mean squentropy; gradient rows already divided by n."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n, K = z.shape
    if labels.min() < 0 or labels.max() >= K:
        raise LabelOutOfRange(f"labels must lie in [0, {K})")
    rows = np.arange(n)
    m = z.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
    ce = lse - z[rows, labels]
    mask = np.ones_like(z, dtype=bool)
    mask[rows, labels] = False
    zm = np.where(mask, z, 0.0)
    loss = float(np.mean(ce + np.sum(zm * zm, axis=1) / (K - 1)))
    grad = softmax(z)
    grad[rows, labels] -= 1.0
    grad += 2.0 * zm / (K - 1)
    return loss, grad / n
