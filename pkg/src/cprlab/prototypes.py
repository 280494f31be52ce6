"""Learnable class prototypes and the losses that depend on them.

Prototypes are stored unnormalized; every loss consumes normalized copies
and returns gradients w.r.t. the raw storage.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyClass, InvalidParam, LabelOutOfRange
from .numerics import cosine_matrix, normalize, normalize_backward, normalize_rows


@dataclass
class PrototypeSet:
    vectors: np.ndarray                      # (K, J)
    counts: np.ndarray = field(default=None)  # N_k used at initialization

    def __post_init__(self):
        self.vectors = np.array(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise InvalidParam(f"need at least 2 prototypes, got shape {self.vectors.shape}")
        if self.counts is None:
            self.counts = np.zeros(self.vectors.shape[0], dtype=np.int64)
        normalize_rows(self.vectors)  # ZeroNorm check

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def unit(self) -> np.ndarray:
        return normalize_rows(self.vectors)[0]

    def copy(self) -> "PrototypeSet":
        return PrototypeSet(self.vectors.copy(), self.counts.copy())


def _vectors(proto) -> np.ndarray:
    return proto.vectors if isinstance(proto, PrototypeSet) else np.asarray(proto, dtype=np.float64)


def class_means(features, labels, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class arithmetic mean of ``features``; returns ``(means, counts)``."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if counts.size > n_classes:
        raise LabelOutOfRange(f"label {labels.max()} >= {n_classes}")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyClass(f"class {int(empty[0])} has no samples")
    sums = np.zeros((n_classes, features.shape[1]))
    np.add.at(sums, labels, features)
    return sums / counts[:, None], counts


def init_prototypes_from_means(params, dataset, batch_size: int = 1024) -> PrototypeSet:
    """Set ``p_k`` to the mean penultimate feature of class ``k`` over ``dataset``."""
    from .model import forward

    feats = np.concatenate([forward(params, dataset.x[i:i + batch_size]).features
                            for i in range(0, dataset.n, batch_size)])
    means, counts = class_means(feats, dataset.y, dataset.n_classes)
    return PrototypeSet(means, counts)


def proto_loss(v, proto, label: int, normalized: bool = True):
    """Squared distance between one feature vector and its class prototype.

    Returns ``(loss, dloss/dv, dloss/dp_k)``. With ``normalized`` (default)
    the distance is taken between unit vectors and gradients are pulled back
    through both normalizations.
    """
    P = _vectors(proto)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (P.shape[1],):
        raise DimensionMismatch(f"feature length {v.shape} != prototype dim {P.shape[1]}")
    if normalized:
        normalize(v)  # a single zero vector is an error, unlike a zero row in a batch
    loss, gv, gp = proto_loss_batch(v[None, :], np.array([label]), P, normalized=normalized,
                                    reduction="sum")
    return loss, gv[0], gp[label]


def proto_loss_batch(features, labels, proto, normalized: bool = True, reduction: str = "mean"):
    """Batched prototype loss; returns ``(loss, dloss/dV (n, J), dloss/dP (K, J))``."""
    P = _vectors(proto)
    V = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= P.shape[0]:
        raise LabelOutOfRange(f"labels must lie in [0, {P.shape[0]})")
    n = V.shape[0]
    scale = 1.0 / n if reduction == "mean" else 1.0
    if normalized:
        vh, vn = normalize_rows(V, strict=False)
        ph, pn = normalize_rows(P)
        diff = vh - ph[labels]
        loss = float(np.sum(diff * diff)) * scale
        g_vh = 2.0 * diff * scale
        g_v = normalize_backward(vh, vn, g_vh)
        g_ph = np.zeros_like(P)
        np.add.at(g_ph, labels, -g_vh)
        g_p = normalize_backward(ph, pn, g_ph)
    else:
        diff = V - P[labels]
        loss = float(np.sum(diff * diff)) * scale
        g_v = 2.0 * diff * scale
        g_p = np.zeros_like(P)
        np.add.at(g_p, labels, -g_v)
    return loss, g_v, g_p


def dissimilarities(proto) -> np.ndarray:
    """``DS_k = 1 - mean_{i != k} CS(p_k, p_i)`` for every class."""
    P = _vectors(proto)
    K = P.shape[0]
    if K < 2:
        raise InvalidParam("dissimilarity needs at least 2 prototypes")
    C = cosine_matrix(P)
    off = C.sum(axis=1) - np.diag(C)
    return 1.0 - off / (K - 1)


def dissimilarity(proto, k: int) -> float:
    return float(dissimilarities(proto)[k])


def cs_loss(proto):
    """Mean squared cosine similarity over ordered prototype pairs.

    Returns ``(loss, dloss/dP)`` for the raw (K, J) prototype storage.
    """
    P = _vectors(proto)
    K = P.shape[0]
    ph, pn = normalize_rows(P)
    C = ph @ ph.T
    np.fill_diagonal(C, 0.0)
    norm = 1.0 / (K * (K - 1))
    loss = float(np.sum(C * C)) * norm
    g_ph = 4.0 * norm * (C @ ph)
    return loss, normalize_backward(ph, pn, g_ph)


def save_snapshot(proto, path) -> None:
    P = _vectors(proto)
    Path(path).write_text(json.dumps({str(k): P[k].tolist() for k in range(P.shape[0])}, indent=1))


def load_snapshot(path) -> PrototypeSet:
    doc = json.loads(Path(path).read_text())
    keys = sorted(doc, key=int)
    if [int(k) for k in keys] != list(range(len(keys))):
        raise InvalidParam(f"prototype snapshot class ids must be 0..K-1, got {keys}")
    return PrototypeSet(np.array([doc[k] for k in keys], dtype=np.float64))
