"""Prototype-weighted feature covariance: the sort-and-shift loss, the exact
covariance matrix, and the Chebyshev / Cantelli risk bounds built on it.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateDissimilarity, DimensionMismatch, EmptyInput, InvalidNu, InvalidParam
from .numerics import invert_permutation, normalize, normalize_backward, normalize_rows, sort_with_permutation


@dataclass(frozen=True)
class CovLossConfig:
    nu: int = 0                  # 0: |products|, +1: positive only, -1: negative only
    r_max: int = 10
    pad_mode: str = "uniform"    # "uniform": r ~ U{1..r_max}; "fixed": r = r_max
    order: str = "descending"

    def __post_init__(self):
        if self.nu not in (-1, 0, 1):
            raise InvalidNu(f"nu must be -1, 0 or 1, got {self.nu!r}")
        if int(self.r_max) < 1:
            raise InvalidParam(f"r_max must be >= 1, got {self.r_max}")
        if self.pad_mode not in ("uniform", "fixed"):
            raise InvalidParam(f"pad_mode must be 'uniform' or 'fixed', got {self.pad_mode!r}")
        if self.order not in ("ascending", "descending"):
            raise InvalidParam(f"order must be 'ascending' or 'descending', got {self.order!r}")

    def draw_r(self, rng, size=None):
        if self.pad_mode == "fixed":
            return self.r_max if size is None else np.full(size, self.r_max, dtype=np.int64)
        return rng.integers(1, self.r_max + 1, size=size)


def delta_vector(v_unit, p_unit) -> np.ndarray:
    """``delta_j = p_j * (v_j - p_j)``; the prototype is a constant here."""
    v_unit = np.asarray(v_unit, dtype=np.float64)
    p_unit = np.asarray(p_unit, dtype=np.float64)
    if v_unit.shape != p_unit.shape:
        raise DimensionMismatch(f"shapes differ: {v_unit.shape} vs {p_unit.shape}")
    return p_unit * (v_unit - p_unit)


def _filter(prod, nu):
    if nu == 0:
        return np.abs(prod), np.sign(prod)
    mask = (nu * prod) > 0
    return np.where(mask, nu * prod, 0.0), np.where(mask, float(nu), 0.0)


def cov_loss_single(v, proto, label: int, cfg: CovLossConfig = CovLossConfig(), rng=None, r=None):
    """Sort-and-shift covariance loss for one example of class ``label``.

    The class prototype is sorted (recording the permutation), the example is
    reindexed the same way, ``delta`` is zero-padded by ``r`` on the left and
    on the right, and the padded copies are multiplied elementwise. The
    products are sign-filtered by ``nu`` and averaged over ``J + r``.

    ``r`` overrides the draw from ``rng``. Returns ``(loss, dloss/dv)``; the
    prototype receives no gradient from this loss.
    """
    P = proto.vectors if hasattr(proto, "vectors") else np.asarray(proto, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (P.shape[1],):
        raise DimensionMismatch(f"feature length {v.shape} != prototype dim {P.shape[1]}")
    if r is None:
        if rng is None and cfg.pad_mode == "uniform":
            raise InvalidParam("an rng is required when r is drawn")
        r = cfg.draw_r(rng)
    r = int(r)
    if r < 1:
        raise InvalidParam(f"pad radius must be >= 1, got {r}")
    vn = np.linalg.norm(v)
    v_unit = normalize(v)
    p_sorted, perm = sort_with_permutation(normalize(P[label]), cfg.order)
    delta = delta_vector(v_unit[perm], p_sorted)
    J = delta.size
    zeros = np.zeros(r)
    left = np.concatenate([zeros, delta])
    right = np.concatenate([delta, zeros])
    prod = left * right
    _, dz = _filter(prod, cfg.nu)
    # nu=0 is summed as its two signed halves so that the sign decomposition holds bit for bit
    loss = sum(float(_filter(prod, s)[0].sum()) / (J + r) for s in ((1, -1) if cfg.nu == 0 else (cfg.nu,)))

    g_left = dz * right / (J + r)
    g_right = dz * left / (J + r)
    g_delta = g_left[r:] + g_right[:J]
    g_vunit = np.empty(J)
    g_vunit[perm] = g_delta * p_sorted
    return loss, normalize_backward(v_unit, vn, g_vunit)


def cov_loss_batch(features, labels, proto, cfg: CovLossConfig, rng=None, r=None):
    """Mean of :func:`cov_loss_single` over a batch, vectorized.

    ``r`` may be an int or a per-example array; otherwise one radius per
    example is drawn from ``rng``. Returns ``(loss, dloss/dV)``.
    """
    P = proto.vectors if hasattr(proto, "vectors") else np.asarray(proto, dtype=np.float64)
    V = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n, J = V.shape
    if r is None:
        r = cfg.draw_r(rng, size=n)
    r = np.broadcast_to(np.asarray(r, dtype=np.int64), (n,))

    vh, vn = normalize_rows(V, strict=False)
    ph, _ = normalize_rows(P)
    sign = -1.0 if cfg.order == "descending" else 1.0
    perms = np.argsort(sign * ph, axis=1, kind="stable")  # (K, J)
    perm = perms[labels]
    p_sorted = np.take_along_axis(ph[labels], perm, axis=1)
    delta = p_sorted * (np.take_along_axis(vh, perm, axis=1) - p_sorted)

    total = 0.0
    g_delta = np.zeros_like(delta)
    for rv in np.unique(r):
        rows = np.flatnonzero(r == rv)
        if rv >= J:
            continue
        a = delta[rows, :J - rv]
        b = delta[rows, rv:]
        z, dz = _filter(a * b, cfg.nu)
        w = 1.0 / ((J + rv) * n)
        total += float(z.sum()) * w
        g_delta[rows, :J - rv] += dz * b * w
        g_delta[rows, rv:] += dz * a * w
    g_sorted = g_delta * p_sorted
    g_vh = np.empty_like(g_sorted)
    np.put_along_axis(g_vh, perm, g_sorted, axis=1)
    return total, normalize_backward(vh, vn, g_vh)


def product_matrix(features, prototype) -> np.ndarray:
    """Rows ``a_n = v_hat_n * p_hat`` whose entries sum to CS(v_n, p).

    A zero feature vector has no direction and contributes a zero row.
    """
    vh, _ = normalize_rows(np.atleast_2d(np.asarray(features, dtype=np.float64)), strict=False)
    return vh * normalize(prototype)


def cov_matrix_oracle(features, prototype) -> np.ndarray:
    """Exact J x J population covariance of the prototype-weighted products."""
    A = product_matrix(features, prototype)
    if A.shape[0] < 1:
        raise EmptyInput("covariance needs at least one sample")
    Ac = A - A.mean(axis=0)
    return (Ac.T @ Ac) / A.shape[0]


def sum_s(features, prototype) -> float:
    """``1^T S 1`` without forming S (population variance of the CS values)."""
    A = product_matrix(features, prototype)
    if A.shape[0] < 1:
        raise EmptyInput("covariance needs at least one sample")
    return float(np.var(A.sum(axis=1)))


def _check_ds(ds):
    if not ds > 0:
        raise DegenerateDissimilarity(f"dissimilarity must be > 0, got {ds}")


def cpr_metric(S, ds: float) -> float:
    _check_ds(ds)
    return float(np.sum(S)) / ds ** 2


def chebyshev_two_sided(sum_S: float, ds: float) -> float:
    """Two-sided Chebyshev bound ``1^T S 1 / DS^2``; can exceed 1."""
    _check_ds(ds)
    return sum_S / ds ** 2


def cantelli_one_sided(sum_S: float, ds: float) -> float:
    """Lower-tail Cantelli bound ``1^T S 1 / (1^T S 1 + DS^2)``, always in [0, 1]."""
    _check_ds(ds)
    if sum_S == 0:
        return 0.0
    if np.isinf(sum_S):
        return 1.0
    return sum_S / (sum_S + ds ** 2)


@dataclass(frozen=True)
class BoundReport:
    sum_S: float
    ds: float
    ds2: float
    two_sided: float
    one_sided: float
    cpr: float

    def to_dict(self):
        return asdict(self)


def bound_report(sum_S: float, ds: float) -> BoundReport:
    two = chebyshev_two_sided(sum_S, ds)
    return BoundReport(float(sum_S), float(ds), float(ds) ** 2, two,
                       cantelli_one_sided(sum_S, ds), two)


def empirical_tail_probability(features, prototype, ds: float, tail: str = "two_sided") -> float:
    """Fraction of samples whose CS to ``prototype`` deviates from the mean CS by ``ds``.

    ``tail="two_sided"`` counts ``|dev| >= ds``; ``tail="lower"`` counts ``dev <= -ds``.
    """
    A = product_matrix(features, prototype)
    if A.shape[0] < 2:
        raise EmptyInput("tail estimate needs at least two samples")
    cs = A.sum(axis=1)
    dev = cs - cs.mean()
    if tail == "two_sided":
        return float(np.mean(np.abs(dev) >= ds))
    if tail == "lower":
        return float(np.mean(dev <= -ds))
    raise ValueError(f"tail must be 'two_sided' or 'lower', got {tail!r}")


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def benchmark_scaling(dims=(1024, 2048, 4096, 8192), repeats: int = 20, n_samples: int = 32,
                      seed: int = 0, inner: int = 20):
    """Median wall time of the sort-and-shift loss vs the exact covariance per J.

    The loss is timed over ``inner`` single-example calls so each sample is
    well above timer resolution. Returns rows ``(J, approx_seconds, oracle_seconds)``.
    """
    from .numerics import make_rng

    rows = []
    cfg = CovLossConfig(nu=0, pad_mode="fixed")
    for J in sorted(dims):
        rng = make_rng(seed, J)
        P = np.abs(rng.normal(size=(2, J))) + 1e-3
        feats = np.abs(rng.normal(size=(n_samples, J)))
        v = feats[0]

        def approx():
            for _ in range(inner):
                cov_loss_single(v, P, 0, cfg)

        approx_t = _median_time(approx, repeats) / inner
        oracle_t = _median_time(lambda: cov_matrix_oracle(feats, P[0]), repeats)
        rows.append((J, approx_t, oracle_t))
    return rows
