"""Figure rendering for suite, train and benchmark reports.

All figures go straight to files through the Agg backend; nothing here
opens a window.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def figsize(width=5.0, ratio=None):
    if ratio is None:
        ratio = (math.sqrt(5) - 1.0) / 2.0
    return width, width * ratio


@contextmanager
def report_style():
    with plt.rc_context(STYLE):
        yield


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_accuracy_summary(records, path, title="Test accuracy over subset draws"):
    """Box plot of per-draw test accuracy, one box per arm."""
    arms = list(dict.fromkeys(r["arm"] for r in records))
    data = [[r["accuracy"] for r in records if r["arm"] == a] for a in arms]
    with report_style():
        fig, ax = plt.subplots(figsize=figsize())
        ax.boxplot(data, showmeans=True)
        ax.set_xticks(range(1, len(arms) + 1), arms)
        ax.set_ylabel("test accuracy")
        ax.set_title(title)
        return _save(fig, path)


def plot_cpr_components(summary, path):
    """Train/test bars for the class-averaged 1'S1 and DS^2 of each arm."""
    arms = list(summary)
    x = range(len(arms))
    w = 0.38
    with report_style():
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figsize(8.0, 0.4))
        for ax, key, label in ((a1, "sum_S", r"$\frac{1}{K}\sum_k \mathbf{1}^T S_k \mathbf{1}$"),
                               (a2, "ds2", r"$DS^2$")):
            ax.bar([i - w / 2 for i in x], [summary[a][f"{key}_train"] for a in arms], w, label="train")
            ax.bar([i + w / 2 for i in x], [summary[a][f"{key}_test"] for a in arms], w, label="test")
            ax.set_xticks(list(x), arms)
            ax.set_ylabel(label)
        a1.legend(frameon=False)
        return _save(fig, path)


def plot_curves(curves, metric, path, ylabel=None):
    """One line per arm of an epoch-indexed metric."""
    with report_style():
        fig, ax = plt.subplots(figsize=figsize())
        for arm, c in curves.items():
            ax.plot(c["epoch"], c[metric], label=arm, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel or metric)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_history(history, path):
    """Loss components and accuracies of a single run."""
    ep = [r["epoch"] for r in history]
    with report_style():
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figsize(8.0, 0.4))
        for key in ("ce", "proto", "cov", "cs", "total"):
            vals = [r[key] for r in history]
            if any(v > 0 for v in vals):
                a1.plot(ep, vals, label=key, lw=1.2)
        a1.set_yscale("log")
        a1.set_xlabel("epoch")
        a1.set_ylabel("loss")
        a1.legend(frameon=False)
        a2.plot(ep, [r["train_acc"] for r in history], label="train")
        a2.plot(ep, [r["test_acc"] for r in history], label="test")
        a2.set_xlabel("epoch")
        a2.set_ylabel("accuracy")
        a2.legend(frameon=False)
        return _save(fig, path)


def plot_scaling(rows, path):
    """Log-log timing of the sort-and-shift loss vs the exact covariance."""
    J = [r[0] for r in rows]
    with report_style():
        fig, ax = plt.subplots(figsize=figsize())
        ax.loglog(J, [r[1] for r in rows], "o-", label="sort-and-shift loss (per example)")
        ax.loglog(J, [r[2] for r in rows], "s-", label="exact covariance")
        ax.set_xlabel("J")
        ax.set_ylabel("median seconds")
        ax.legend(frameon=False)
        return _save(fig, path)
