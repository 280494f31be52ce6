"""Composite loss, warmup-gated training, evaluation and CPR reporting."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines
from .covariance import CovLossConfig, bound_report, cov_loss_batch, product_matrix
from .data import Dataset, Standardizer, stratified_subsets
from .errors import ConfigError, DegenerateDissimilarity, EmptyInput, NonFiniteLoss, PrototypesUninitialized
from .model import (ModelParams, OptimState, backward, cross_entropy_batch, forward, init_model, lr_at,
                    sgd_momentum_step)
from .numerics import make_rng
from .prototypes import PrototypeSet, class_means, cs_loss, dissimilarities, init_prototypes_from_means, proto_loss_batch

REGULARIZERS = ("none", "excpr", "decov", "orthoreg", "squentropy")


@dataclass
class TrainConfig:
    hidden: tuple = (64, 32)          # widths of g; the last entry is J
    activation: str = "relu"
    regularizer: str = "excpr"
    beta: float = 1.0
    gamma: float = 10.0
    zeta: float = 1.0
    nu: int = 0
    r_max: int = 10
    pad_mode: str = "uniform"
    sort_order: str = "descending"
    proto_normalized: bool = True
    baseline_weight: float = 0.1      # DeCov w / OrthoReg weight
    orthoreg_mode: str = "positive"
    epochs: int = 100
    warmup: int = 10
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    seed: int = 0
    report_every: int = 10

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.regularizer not in REGULARIZERS:
            raise ConfigError("regularizer", f"must be one of {REGULARIZERS}, got {self.regularizer!r}")
        for key in ("beta", "gamma", "zeta", "baseline_weight", "weight_decay", "lr"):
            val = getattr(self, key)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(key, f"must be finite and >= 0, got {val}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum", f"must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup < self.epochs:
            raise ConfigError("warmup", f"must satisfy 0 <= warmup < epochs ({self.epochs}), got {self.warmup}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.nu not in (-1, 0, 1):
            raise ConfigError("nu", f"must be -1, 0 or 1, got {self.nu}")
        if self.r_max < 1:
            raise ConfigError("r_max", f"must be >= 1, got {self.r_max}")
        if self.pad_mode not in ("uniform", "fixed"):
            raise ConfigError("pad_mode", f"must be 'uniform' or 'fixed', got {self.pad_mode!r}")
        if self.sort_order not in ("ascending", "descending"):
            raise ConfigError("sort_order", f"must be 'ascending' or 'descending', got {self.sort_order!r}")
        if self.orthoreg_mode not in ("both", "positive"):
            raise ConfigError("orthoreg_mode", f"must be 'both' or 'positive', got {self.orthoreg_mode!r}")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigError("hidden", f"widths must be positive, got {self.hidden}")
        if self.report_every < 1:
            raise ConfigError("report_every", f"must be >= 1, got {self.report_every}")

    @property
    def cov_config(self) -> CovLossConfig:
        return CovLossConfig(self.nu, self.r_max, self.pad_mode, self.sort_order)

    def loss_weights(self) -> tuple[float, float, float]:
        if self.regularizer != "excpr":
            return 0.0, 0.0, 0.0
        return self.beta, self.gamma, self.zeta

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown key")
        return cls(**doc)


@dataclass
class LossBreakdown:
    ce: float = 0.0
    proto: float = 0.0
    cov: float = 0.0
    cs: float = 0.0
    baseline: float = 0.0     # DeCov / OrthoReg cost, or the squentropy penalty
    beta: float = 0.0
    gamma: float = 0.0
    zeta: float = 0.0
    baseline_weight: float = 0.0
    total: float = 0.0
    epoch: int = 0
    batch: int = 0

    def weighted_total(self) -> float:
        return (self.ce + self.beta * self.proto + self.gamma * self.cov + self.zeta * self.cs
                + self.baseline_weight * self.baseline)


@dataclass
class Upstream:
    d_logits: np.ndarray
    d_features: np.ndarray = None
    d_proto: np.ndarray = None
    d_feature_weights: np.ndarray = None   # OrthoReg gradient on the rows of the feature layer


def total_loss(params: ModelParams, trace, labels, proto, cfg: TrainConfig, rng=None,
               active: bool = True, epoch: int = 0, batch: int = 0):
    """Evaluate the composite loss on one batch and route its gradients.

    CE -> model; prototype loss -> features and prototypes; covariance loss ->
    features only; CS loss -> prototypes only. Baseline arms add their term
    on top of CE. With ``active=False`` (warmup) only CE is evaluated.
    Returns ``(LossBreakdown, Upstream)``.
    """
    labels = np.asarray(labels)
    ce, d_logits = cross_entropy_batch(trace.logits, labels)
    bd = LossBreakdown(ce=ce, epoch=epoch, batch=batch)
    up = Upstream(d_logits=d_logits)
    if not active:
        bd.total = ce
        return bd, up

    beta, gamma, zeta = cfg.loss_weights()
    bd.beta, bd.gamma, bd.zeta = beta, gamma, zeta
    feats = trace.features
    if beta or gamma or zeta:
        if proto is None:
            raise PrototypesUninitialized("prototype losses requested before prototypes exist")
        d_feat = np.zeros_like(feats)
        d_proto = np.zeros_like(proto.vectors)
        if beta:
            bd.proto, gv, gp = proto_loss_batch(feats, labels, proto, normalized=cfg.proto_normalized)
            d_feat += beta * gv
            d_proto += beta * gp
        if gamma:
            bd.cov, gv = cov_loss_batch(feats, labels, proto, cfg.cov_config, rng=rng)
            d_feat += gamma * gv
        if zeta:
            bd.cs, gp = cs_loss(proto)
            d_proto += zeta * gp
        up.d_features = d_feat
        up.d_proto = d_proto

    reg = cfg.regularizer
    if reg == "decov":
        bd.baseline_weight = cfg.baseline_weight
        bd.baseline, g = baselines.decov_loss(feats)
        up.d_features = cfg.baseline_weight * g
    elif reg == "orthoreg":
        bd.baseline_weight = cfg.baseline_weight
        bd.baseline, g = baselines.orthoreg_cost(params.weights[-2], cfg.orthoreg_mode)
        up.d_feature_weights = cfg.baseline_weight * g
    elif reg == "squentropy":
        bd.baseline_weight = 1.0
        sq, d_logits = baselines.squentropy_batch(trace.logits, labels)
        bd.baseline = sq - ce
        up.d_logits = d_logits
    bd.total = bd.weighted_total()
    return bd, up


def evaluate(params: ModelParams, data: Dataset, batch_size: int = 4096) -> float:
    """Argmax-logit accuracy; ties go to the lowest class index."""
    if data.n == 0:
        raise EmptyInput("cannot evaluate on an empty dataset")
    correct = 0
    for i in range(0, data.n, batch_size):
        z = forward(params, data.x[i:i + batch_size]).logits
        correct += int(np.sum(np.argmax(z, axis=1) == data.y[i:i + batch_size]))
    return correct / data.n


def features_of(params: ModelParams, data: Dataset, batch_size: int = 4096) -> np.ndarray:
    return np.concatenate([forward(params, data.x[i:i + batch_size]).features
                           for i in range(0, data.n, batch_size)])


def _check_finite(epoch, batch, bd, grads, up):
    if not math.isfinite(bd.total):
        raise NonFiniteLoss(epoch, batch)
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(epoch, batch, "gradient")
    if up.d_proto is not None and not np.all(np.isfinite(up.d_proto)):
        raise NonFiniteLoss(epoch, batch, "prototype gradient")


def train_step(params, proto, opt, cfg, xb, yb, rng, active, epoch=0, batch=0, lr=None):
    """One forward/backward/update on a batch; mutates ``params``, ``proto`` and ``opt``."""
    trace = forward(params, xb)
    bd, up = total_loss(params, trace, yb, proto, cfg, rng, active, epoch, batch)
    grads = backward(params, trace, up.d_features, up.d_logits)
    if up.d_feature_weights is not None:
        grads.weights[-2] = grads.weights[-2] + up.d_feature_weights
    _check_finite(epoch, batch, bd, grads, up)
    sgd_momentum_step(params.arrays(), grads.arrays(), opt, lr=lr)
    if up.d_proto is not None:
        sgd_momentum_step([proto.vectors], [up.d_proto], opt, lr=lr, key="proto", weight_decay=0.0)
    opt.step += 1
    return bd


def _split_stats(feats, labels, n_classes, prototypes=None):
    """Per-class ``1^T S 1``, trace(S), DS^2 and both bounds on one split."""
    means, _ = class_means(feats, labels, n_classes)
    P = means if prototypes is None else prototypes
    ds = dissimilarities(P)
    out = []
    for k in range(n_classes):
        A = product_matrix(feats[labels == k], P[k])
        cs = A.sum(axis=1)
        s = float(np.var(cs))
        tr = float(np.sum(np.var(A, axis=0)))
        entry = {"class": k, "sum_S": s, "trace_S": tr, "ds": float(ds[k]), "ds2": float(ds[k] ** 2)}
        try:
            b = bound_report(s, float(ds[k]))
            entry.update(two_sided=b.two_sided, one_sided=b.one_sided, cpr=b.cpr)
        except DegenerateDissimilarity:
            entry.update(two_sided=None, one_sided=None, cpr=None)
        out.append(entry)
    return out


@dataclass
class CprReport:
    per_class: list
    sum_S_train: float
    sum_S_test: float
    sum_S_gap: float          # test - train
    ds2_train: float
    ds2_test: float
    ds2_gap: float            # train - test
    trace_train: float
    trace_test: float
    accuracy_train: float
    accuracy_test: float
    arm: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def cpr_report(params: ModelParams, proto, train: Dataset, test: Dataset, arm: str = "") -> CprReport:
    """Exact CPR components per class on both splits.

    With ``proto=None`` each split uses its own class-mean features as the
    prototypes; otherwise the given prototypes are used for both splits.
    """
    P = None if proto is None else (proto.vectors if isinstance(proto, PrototypeSet) else np.asarray(proto))
    tr = _split_stats(features_of(params, train), train.y, train.n_classes, P)
    te = _split_stats(features_of(params, test), test.y, test.n_classes, P)
    per_class = [{"class": a["class"], "train": a, "test": b} for a, b in zip(tr, te)]

    def avg(rows, key):
        return float(np.mean([r[key] for r in rows]))

    s_tr, s_te = avg(tr, "sum_S"), avg(te, "sum_S")
    d_tr, d_te = avg(tr, "ds2"), avg(te, "ds2")
    return CprReport(per_class, s_tr, s_te, s_te - s_tr, d_tr, d_te, d_tr - d_te,
                     avg(tr, "trace_S"), avg(te, "trace_S"),
                     evaluate(params, train), evaluate(params, test), arm)


HISTORY_COLUMNS = ("epoch", "ce", "proto", "cov", "cs", "total", "lr", "train_acc", "test_acc")


@dataclass
class RunResult:
    params: ModelParams
    prototypes: PrototypeSet
    history: list
    cpr_history: list = field(default_factory=list)


def train_run(cfg: TrainConfig, train: Dataset, test: Dataset = None) -> RunResult:
    """Train one model.

    Epochs before ``cfg.warmup`` optimize CE only. When warmup ends the
    prototypes are set to the class-mean features of the training split and
    the full loss takes over.
    """
    cfg.validate()
    widths = [train.dim, *cfg.hidden, train.n_classes]
    params = init_model(widths, cfg.activation, cfg.seed)
    opt = OptimState(cfg.lr, cfg.momentum, cfg.weight_decay, cfg.epochs, cfg.warmup)
    shuffle_rng = make_rng(cfg.seed, 10)
    pad_rng = make_rng(cfg.seed, 11)
    proto = None
    history, cpr_history = [], []
    n = train.n
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        if epoch == cfg.warmup:
            proto = init_prototypes_from_means(params, train)
        active = epoch >= cfg.warmup
        lr = lr_at(opt, epoch)
        order = shuffle_rng.permutation(n)
        sums = dict.fromkeys(("ce", "proto", "cov", "cs", "total"), 0.0)
        n_batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            bd = train_step(params, proto, opt, cfg, train.x[idx], train.y[idx], pad_rng,
                            active, epoch, b, lr=lr)
            for key in sums:
                sums[key] += getattr(bd, key)
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}, "lr": lr,
               "train_acc": evaluate(params, train),
               "test_acc": evaluate(params, test) if test is not None else float("nan")}
        history.append(row)
        last = epoch == cfg.epochs - 1
        if test is not None and (last or (epoch + 1) % cfg.report_every == 0):
            rep = cpr_report(params, None, train, test)
            cpr_history.append({"epoch": epoch, "sum_S_train": rep.sum_S_train, "sum_S_test": rep.sum_S_test,
                                "ds2_train": rep.ds2_train, "ds2_test": rep.ds2_test,
                                "trace_train": rep.trace_train, "trace_test": rep.trace_test})
    if proto is None:
        proto = init_prototypes_from_means(params, train)
    return RunResult(params, proto, history, cpr_history)


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])


@dataclass(frozen=True)
class AccuracySummary:
    mu: float
    sigma: float
    min: float
    n: int

    @classmethod
    def from_values(cls, values) -> "AccuracySummary":
        a = np.asarray(values, dtype=np.float64)
        return cls(float(a.mean()), float(a.std()), float(a.min()), int(a.size))


@dataclass
class SuiteResult:
    records: list
    summaries: dict
    reports: dict
    curves: dict
    plan: object

    def summary_dict(self) -> dict:
        out = {}
        for arm, s in self.summaries.items():
            reps = self.reports[arm]
            out[arm] = {
                "accuracy": asdict(s),
                "sum_S_train": float(np.mean([r.sum_S_train for r in reps])),
                "sum_S_test": float(np.mean([r.sum_S_test for r in reps])),
                "ds2_train": float(np.mean([r.ds2_train for r in reps])),
                "ds2_test": float(np.mean([r.ds2_test for r in reps])),
            }
            out[arm]["sum_S_gap"] = out[arm]["sum_S_test"] - out[arm]["sum_S_train"]
            out[arm]["ds2_gap"] = out[arm]["ds2_train"] - out[arm]["ds2_test"]
        return out


def _run_one(job):
    arm, draw, cfg, train, test, idx, standardize = job
    sub, tst = train.subset(idx), test
    if standardize:
        std = Standardizer.fit(sub)
        sub, tst = std.apply(sub), std.apply(test)
    res = train_run(cfg, sub, tst)
    rep = cpr_report(res.params, None, sub, tst, arm=arm)
    return arm, draw, cfg.seed, res.history, res.cpr_history, rep


def experiment_suite(arms: dict, train: Dataset, test: Dataset, draws: int = 12, fraction: float = 0.5,
                     seed: int = 0, out_dir=None, threads: int = None,
                     standardize: bool = True) -> SuiteResult:
    """Train every arm on the same stratified subsets and summarize test accuracy.

    Run ``d`` of every arm uses subset ``d`` and model seed ``cfg.seed + d``,
    so arms are paired. ``threads`` (default: ``CPRLAB_THREADS`` or 1) sets the
    number of worker processes; aggregation order is fixed by (arm, draw).
    Inputs are standardized with statistics of each training subset.
    """
    if not arms:
        raise ConfigError("arms", "at least one arm is required")
    plan = stratified_subsets(train, draws, fraction, seed)
    jobs = [(arm, d, replace(cfg, seed=cfg.seed + d), train, test, plan.indices[d], standardize)
            for arm, cfg in arms.items() for d in range(plan.draws)]
    if threads is None:
        threads = int(os.environ.get("CPRLAB_THREADS", "1") or 1)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    arm_order = {a: i for i, a in enumerate(arms)}
    outs.sort(key=lambda o: (arm_order[o[0]], o[1]))

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "histories").mkdir(parents=True, exist_ok=True)
    records, reports, curves = [], {a: [] for a in arms}, {}
    acc = {a: [] for a in arms}
    hist_by_arm = {a: [] for a in arms}
    for arm, draw, run_seed, history, cpr_hist, rep in outs:
        hpath = None
        if out_dir is not None:
            hpath = f"histories/{arm}_draw{draw:02d}.csv"
            write_history_csv(history, out_dir / hpath)
        per_class_bounds = [{"class": pc["class"],
                             "train": {k: pc["train"][k] for k in ("two_sided", "one_sided")},
                             "test": {k: pc["test"][k] for k in ("two_sided", "one_sided")}}
                            for pc in rep.per_class]
        records.append({
            "arm": arm, "draw": draw, "seed": run_seed, "accuracy": rep.accuracy_test,
            "cpr_components": {k: getattr(rep, k) for k in
                               ("sum_S_train", "sum_S_test", "sum_S_gap", "ds2_train", "ds2_test",
                                "ds2_gap", "trace_train", "trace_test", "accuracy_train")},
            "cpr_history": cpr_hist,
            "bounds": per_class_bounds,
            "history_path": hpath,
        })
        reports[arm].append(rep)
        acc[arm].append(rep.accuracy_test)
        hist_by_arm[arm].append(history)
    for arm, hs in hist_by_arm.items():
        epochs = [r["epoch"] for r in hs[0]]
        curves[arm] = {"epoch": epochs}
        for metric in ("test_acc", "train_acc", "total", "cov", "proto"):
            curves[arm][metric] = np.mean([[r[metric] for r in h] for h in hs], axis=0).tolist()
    summaries = {a: AccuracySummary.from_values(v) for a, v in acc.items()}
    return SuiteResult(records, summaries, reports, curves, plan)
