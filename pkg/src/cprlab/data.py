"""Datasets: synthetic blobs, CSV ingestion, standardization, and the
stratified subset-resampling protocol.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FractionTooSmall, InconsistentWidth, InvalidParam, ParseError, UnknownLabel
from .numerics import make_rng


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int
    label_names: list = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise InvalidParam(f"x shape {self.x.shape} does not match {self.y.shape[0]} labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise InvalidParam(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.x)):
            raise InvalidParam("inputs contain NaN or Inf")
        if self.label_names is None:
            self.label_names = [str(k) for k in range(self.n_classes)]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.n_classes, list(self.label_names))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update(str(self.n_classes).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        std = data.x.std(axis=0)
        return cls(data.x.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, data: Dataset) -> Dataset:
        return Dataset((data.x - self.mean) / self.scale, data.y, data.n_classes, list(data.label_names))


def _blob_means(n_classes, d_in, overlap, rng):
    u = rng.normal(size=(n_classes, d_in))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return (1.0 - overlap) * u


def _sample_blobs(means, n_per_class, spread, rng):
    K, d = means.shape
    y = np.repeat(np.arange(K), n_per_class)
    x = means[y] + spread * rng.normal(size=(y.size, d))
    return x, y


def _balanced_label_noise(y, rho, rng):
    """Shuffle the labels of a random ``rho`` fraction of samples among themselves.

    Class counts are preserved exactly; a shuffled sample may keep its label,
    so the realized flip rate is about ``rho * (1 - 1/K)``.
    """
    y = y.copy()
    m = int(round(rho * y.size))
    if m < 2:
        return y
    picked = rng.choice(y.size, size=m, replace=False)
    y[picked] = y[rng.permutation(picked)]
    return y


def _check_blob_args(n_classes, d_in, n_per_class, spread, overlap, label_noise):
    if n_classes < 2:
        raise InvalidParam(f"need at least 2 classes, got {n_classes}")
    if d_in < 1 or n_per_class < 1:
        raise InvalidParam("input dimension and per-class count must be positive")
    if spread < 0:
        raise InvalidParam(f"spread must be >= 0, got {spread}")
    if not 0.0 <= overlap < 1.0:
        raise InvalidParam(f"overlap must be in [0, 1), got {overlap}")
    if not 0.0 <= label_noise <= 1.0:
        raise InvalidParam(f"label_noise must be in [0, 1], got {label_noise}")


def generate_blobs(n_classes: int, d_in: int, n_per_class: int, spread: float = 0.3,
                   overlap: float = 0.0, seed: int = 0, label_noise: float = 0.0) -> Dataset:
    """Gaussian blobs around class means on a sphere of radius ``1 - overlap``.

    Random unit directions in ``d_in`` dimensions are close to orthogonal, so
    mean separation is about ``sqrt(2) * (1 - overlap)``.
    """
    _check_blob_args(n_classes, d_in, n_per_class, spread, overlap, label_noise)
    rng = make_rng(seed, 1)
    means = _blob_means(n_classes, d_in, overlap, rng)
    x, y = _sample_blobs(means, n_per_class, spread, rng)
    if label_noise:
        y = _balanced_label_noise(y, label_noise, rng)
    return Dataset(x, y, n_classes)


def make_blob_splits(n_classes: int, d_in: int, n_train_per_class: int, n_test_per_class: int,
                     spread: float = 0.3, overlap: float = 0.0, seed: int = 0,
                     label_noise: float = 0.0) -> tuple[Dataset, Dataset]:
    """Train and test blobs sharing class means; label noise hits the train split only."""
    _check_blob_args(n_classes, d_in, n_train_per_class, spread, overlap, label_noise)
    if n_test_per_class < 1:
        raise InvalidParam("test split needs at least one sample per class")
    rng = make_rng(seed, 1)
    means = _blob_means(n_classes, d_in, overlap, rng)
    xtr, ytr = _sample_blobs(means, n_train_per_class, spread, make_rng(seed, 2))
    xte, yte = _sample_blobs(means, n_test_per_class, spread, make_rng(seed, 3))
    if label_noise:
        ytr = _balanced_label_noise(ytr, label_noise, make_rng(seed, 4))
    return Dataset(xtr, ytr, n_classes), Dataset(xte, yte, n_classes)


def _label_mapping(raw_labels):
    uniq = sorted(set(raw_labels))
    try:
        uniq = sorted(uniq, key=int)
    except ValueError:
        pass
    return {lab: i for i, lab in enumerate(uniq)}


def load_csv_dataset(path, label_col: str = "label", mapping=None) -> Dataset:
    """Load ``label,f0,f1,...`` rows; labels are remapped to dense ``0..K-1``.

    Pass the training split's ``mapping`` (``{raw: index}``) when loading a
    test split so that unseen labels raise :class:`UnknownLabel`.
    """
    raw_labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if label_col not in header:
            raise ParseError(f"no {label_col!r} column in header", line=1)
        li = header.index(label_col)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise InconsistentWidth(f"expected {width} fields, got {len(row)}", line=lineno)
            try:
                vals = [float(c) for j, c in enumerate(row) if j != li]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            raw_labels.append(row[li].strip())
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows", line=2)
    if mapping is None:
        mapping = _label_mapping(raw_labels)
    try:
        y = np.array([mapping[lab] for lab in raw_labels], dtype=np.int64)
    except KeyError as exc:
        raise UnknownLabel(f"label {exc.args[0]!r} not in the training label set") from None
    names = [None] * len(mapping)
    for lab, i in mapping.items():
        names[i] = lab
    return Dataset(np.array(rows), y, len(mapping), names)


def label_mapping(data: Dataset) -> dict:
    return {name: i for i, name in enumerate(data.label_names)}


def save_csv_dataset(data: Dataset, path, features=None) -> None:
    """Write ``label,f0,...`` with shortest round-trip float formatting.

    ``features`` replaces ``data.x`` (used to dump penultimate features).
    """
    x = data.x if features is None else np.asarray(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(x.shape[1])])
        for lab, row in zip(data.y, x):
            w.writerow([data.label_names[lab]] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class SubsetPlan:
    indices: tuple
    fraction: float
    per_class: int
    seeds: tuple
    source: str

    @property
    def draws(self) -> int:
        return len(self.indices)


def stratified_subsets(data: Dataset, draws: int = 12, fraction: float = 0.5, seed: int = 0) -> SubsetPlan:
    """Draw ``draws`` class-balanced subsets without replacement.

    Each class contributes ``floor(fraction * min_k N_k)`` samples, which is
    ``floor(fraction * N_k)`` on balanced sources. Draw ``i`` uses seed
    ``seed + i``.
    """
    if not 0.0 < fraction <= 1.0:
        raise FractionTooSmall(f"fraction must be in (0, 1], got {fraction}")
    if draws < 1:
        raise InvalidParam(f"draws must be >= 1, got {draws}")
    counts = data.class_counts()
    per_class = int(np.floor(fraction * counts.min() + 1e-9))
    if per_class < 1:
        raise FractionTooSmall(f"fraction {fraction} leaves no samples for the smallest class")
    by_class = [np.flatnonzero(data.y == k) for k in range(data.n_classes)]
    out, seeds = [], []
    for i in range(draws):
        s = seed + i
        rng = make_rng(s, 5)
        picked = np.concatenate([rng.choice(idx, size=per_class, replace=False) for idx in by_class])
        out.append(np.sort(picked)[rng.permutation(picked.size)])
        seeds.append(s)
    return SubsetPlan(tuple(out), float(fraction), per_class, tuple(seeds), data.fingerprint())
