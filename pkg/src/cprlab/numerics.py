"""Vector kernels shared by every other module.

Everything works in float64. Functions accept a single vector or, where
noted, a batch of row vectors.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, ZeroNorm

EPS_NORM = 1e-12


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains NaN or Inf")
    return arr


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm. Raises ZeroNorm when ``||v|| <= EPS_NORM``."""
    v = as_vector(v)
    n = np.linalg.norm(v)
    if n <= EPS_NORM:
        raise ZeroNorm(f"cannot normalize vector with norm {n:.3g}")
    return v / n


def normalize_rows(m, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise normalize a 2-d array; returns ``(unit_rows, norms)``.

    With ``strict=False`` rows at or below ``EPS_NORM`` (e.g. all-dead ReLU
    features) map to the zero vector and report an infinite norm, so
    :func:`normalize_backward` sends them no gradient.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d array, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    bad = norms <= EPS_NORM
    if bad.any():
        if strict:
            i = int(np.flatnonzero(bad)[0])
            raise ZeroNorm(f"row {i} has norm {norms[i]:.3g}")
        norms = np.where(bad, np.inf, norms)
    return m / norms[:, None], norms


def normalize_backward(unit, norms, grad_unit) -> np.ndarray:
    """Pull a gradient w.r.t. ``x / ||x||`` back to ``x``.

    Works for a single vector (``norms`` scalar) or row batches.
    """
    unit = np.asarray(unit)
    grad_unit = np.asarray(grad_unit)
    if unit.ndim == 1:
        return (grad_unit - unit * (unit @ grad_unit)) / norms
    radial = np.einsum("ij,ij->i", unit, grad_unit)
    return (grad_unit - unit * radial[:, None]) / np.asarray(norms)[:, None]


def cosine_similarity(v, u) -> float:
    v = as_vector(v)
    u = as_vector(u)
    if v.shape != u.shape:
        raise DimensionMismatch(f"lengths differ: {v.size} vs {u.size}")
    cs = float(normalize(v) @ normalize(u))
    return min(1.0, max(-1.0, cs))


def cosine_matrix(rows) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``rows``."""
    unit, _ = normalize_rows(rows)
    return np.clip(unit @ unit.T, -1.0, 1.0)


def sort_with_permutation(v, order: str = "descending") -> tuple[np.ndarray, np.ndarray]:
    """Stable sort returning ``(sorted, perm)`` with ``sorted == v[perm]``.

    ``perm[i]`` is the original index of the element now at position ``i``;
    ties keep their original relative order.
    """
    v = as_vector(v)
    if order == "descending":
        perm = np.argsort(-v, kind="stable")
    elif order == "ascending":
        perm = np.argsort(v, kind="stable")
    else:
        raise ValueError(f"order must be 'ascending' or 'descending', got {order!r}")
    return v[perm], perm


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed`` and an optional stream path.

    Distinct stream paths give independent generators; the same
    ``(seed, *stream)`` always reproduces the same draws.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))
