"""A small MLP classifier with hand-written backprop and SGD with momentum.

The network is ``f(x) = h(g(x))``: ``g`` is a stack of dense layers, each
followed by the hidden activation (the last one produces the J penultimate
features), and ``h`` is a single linear layer producing K logits.
Weights are stored as ``(out, in)`` matrices, so layer output is
``x @ W.T + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidArchitecture, LabelOutOfRange
from .numerics import make_rng

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class ModelParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_features(self) -> int:
        """J, the width of the penultimate feature layer."""
        return self.weights[-1].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.activation)


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]    # pre-activations of the g layers
    acts: list[np.ndarray]   # post-activations of the g layers
    logits: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """Penultimate features v (before any normalization), shape (n, J)."""
        return self.acts[-1]


def init_model(layer_widths, activation: str = "relu", seed: int = 0) -> ModelParams:
    """He-uniform init: ``W ~ U(-a, a)`` with ``a = sqrt(6 / fan_in)``, zero biases.

    ``layer_widths`` is ``[d_in, hidden..., J, K]``; at least one hidden
    (feature) layer is required so that g is non-trivial.
    """
    widths = [int(w) for w in layer_widths]
    if len(widths) < 3:
        raise InvalidArchitecture(f"need [d_in, ..., J, K], got {widths}")
    if any(w <= 0 for w in widths):
        raise InvalidArchitecture(f"layer widths must be positive, got {widths}")
    if activation not in ACTIVATIONS:
        raise InvalidArchitecture(f"unknown activation {activation!r}")
    rng = make_rng(seed, 0)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, activation)


def _act(kind, x):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    return x


def _act_grad(kind, pre, act, upstream):
    if kind == "relu":
        return upstream * (pre > 0)
    if kind == "tanh":
        return upstream * (1.0 - act * act)
    return upstream


def forward(params: ModelParams, batch) -> ForwardTrace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.weights[0].shape[1]:
        raise DimensionMismatch(
            f"input width {x.shape[1]} != first layer width {params.weights[0].shape[1]}")
    pre, acts = [], []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = h @ w.T + b
        h = _act(params.activation, a)
        pre.append(a)
        acts.append(h)
    logits = h @ params.weights[-1].T + params.biases[-1]
    return ForwardTrace(x, pre, acts, logits)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels, k):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy(z, label):
    """Softmax cross-entropy for one logit vector.

    Returns ``(loss, dloss/dz)`` with the gradient ``softmax(z) - onehot``.
    """
    z = np.asarray(z, dtype=np.float64)
    label = int(label)
    if not 0 <= label < z.size:
        raise LabelOutOfRange(f"label {label} outside [0, {z.size})")
    m = z.max()
    lse = m + math.log(np.exp(z - m).sum())
    grad = softmax(z)
    grad[label] -= 1.0
    return lse - z[label], grad


def cross_entropy_batch(z, labels):
    """Mean CE over a batch; gradient is w.r.t. each row of ``z`` (already divided by n)."""
    z = np.asarray(z, dtype=np.float64)
    labels = _check_labels(labels, z.shape[1])
    n = z.shape[0]
    m = z.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    grad = softmax(z)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def backward(params: ModelParams, trace: ForwardTrace, d_features=None, d_logits=None) -> ParamGrads:
    """Exact gradients of a loss given its upstream derivatives.

    ``d_features`` is dL/dv (shape ``(n, J)``) for losses that act on the
    penultimate layer; ``d_logits`` is dL/dz. Either may be ``None``. Losses
    expressed on normalized features must be pulled back to v first
    (see :func:`cprlab.numerics.normalize_backward`).
    """
    n = trace.inputs.shape[0]
    J, K = params.n_features, params.n_classes
    if d_logits is None:
        d_logits = np.zeros((n, K))
    if d_features is None:
        d_features = np.zeros((n, J))
    d_logits = np.asarray(d_logits, dtype=np.float64)
    d_features = np.asarray(d_features, dtype=np.float64)
    if d_logits.shape != (n, K) or d_features.shape != (n, J):
        raise DimensionMismatch(
            f"upstream shapes {d_features.shape}, {d_logits.shape} do not match (n={n}, J={J}, K={K})")

    n_layers = len(params.weights)
    gw: list = [None] * n_layers
    gb: list = [None] * n_layers
    feats = trace.acts[-1]
    gw[-1] = d_logits.T @ feats
    gb[-1] = d_logits.sum(axis=0)
    dh = d_logits @ params.weights[-1] + d_features
    for i in range(n_layers - 2, -1, -1):
        da = _act_grad(params.activation, trace.pre[i], trace.acts[i], dh)
        below = trace.acts[i - 1] if i > 0 else trace.inputs
        gw[i] = da.T @ below
        gb[i] = da.sum(axis=0)
        if i > 0:
            dh = da @ params.weights[i]
    return ParamGrads(gw, gb)


@dataclass
class OptimState:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    total_epochs: int = 100
    warmup_epochs: int = 10
    epoch: int = 0
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lr0 < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr0}")


def lr_at(opt: OptimState, epoch: int) -> float:
    """Cosine-annealed rate ``0.5 * lr0 * (1 + cos(pi * epoch / T))``."""
    return 0.5 * opt.lr0 * (1.0 + math.cos(math.pi * epoch / opt.total_epochs))


def sgd_momentum_step(arrays, grads, opt: OptimState, lr=None, key="model", weight_decay=None):
    """In-place heavy-ball update of each array in ``arrays``.

    ``buf <- m * buf + (g + wd * p)``; ``p <- p - lr * buf``. Buffers live in
    ``opt.buffers[key]`` so several parameter groups can share one state.
    Returns ``arrays``.
    """
    if lr is None:
        lr = lr_at(opt, opt.epoch)
    wd = opt.weight_decay if weight_decay is None else weight_decay
    if len(arrays) != len(grads):
        raise DimensionMismatch(f"{len(arrays)} params but {len(grads)} grads")
    bufs = opt.buffers.get(key)
    if bufs is None:
        bufs = [np.zeros_like(p) for p in arrays]
        opt.buffers[key] = bufs
    for p, g, b in zip(arrays, grads, bufs):
        if p.shape != g.shape:
            raise DimensionMismatch(f"param shape {p.shape} != grad shape {g.shape}")
        if wd:
            g = g + wd * p
        b *= opt.momentum
        b += g
        p -= lr * b
    return arrays


def save_checkpoint(params: ModelParams, path) -> None:
    doc = {
        "format": "cprlab-mlp/1",
        "activation": params.activation,
        "widths": params.widths,
        "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(params.weights, params.biases)],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    weights = [np.array(layer["weight"], dtype=np.float64) for layer in doc["layers"]]
    biases = [np.array(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
    params = ModelParams(weights, biases, doc.get("activation", "relu"))
    if params.widths != doc["widths"]:
        raise InvalidArchitecture(f"checkpoint widths {doc['widths']} inconsistent with arrays")
    return params
