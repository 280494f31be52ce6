"""Command-line entry point.

    cprlab train     --config c.json [overrides]
    cprlab suite     --config c.json [overrides]
    cprlab bounds    --prototypes p.json --features f.csv
    cprlab report    --run-dir DIR
    cprlab bench-cov [--dims 1024 2048 ...]

The JSON config is the source of truth; command-line flags override it.
Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import shutil
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .errors import ConfigError, CprError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

DATA_DEFAULTS = {
    "source": "blobs",           # "blobs" or "csv"
    "n_classes": 10,
    "d_in": 50,
    "n_train_per_class": 60,
    "n_test_per_class": 200,
    "spread": 0.3,
    "overlap": 0.0,
    "label_noise": 0.1,
    "seed": 0,
    "train_csv": None,
    "test_csv": None,
    "standardize": True,
}

SUITE_DEFAULTS = {"draws": 12, "fraction": 0.5, "seed": 0}

ARM_DEFAULTS = {
    "base": {"regularizer": "none"},
    "excpr": {"regularizer": "excpr", "nu": -1, "beta": 2.0, "gamma": 10000.0, "zeta": 5.0},
}

TOP_KEYS = ("data", "train", "arms", "suite", "output_dir")

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "beta": float, "gamma": float, "zeta": float, "nu": int, "r_max": int,
    "epochs": int, "warmup": int, "lr": float, "momentum": float,
    "weight_decay": float, "batch_size": int, "seed": int, "regularizer": str,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliConfig:
    command: str
    data: dict = field(default_factory=lambda: dict(DATA_DEFAULTS))
    train: dict = field(default_factory=dict)
    arms: dict = field(default_factory=lambda: copy.deepcopy(ARM_DEFAULTS))
    suite: dict = field(default_factory=lambda: dict(SUITE_DEFAULTS))
    output_dir: str = "cprlab_out"
    overrides: dict = field(default_factory=dict)
    args: argparse.Namespace = None

    def arm_configs(self):
        from .trainer import TrainConfig

        out = {}
        for name, over in self.arms.items():
            doc = {**self.train, **over, **self.overrides}
            out[name] = TrainConfig.from_dict(doc)
        return out

    def base_config(self, arm=None):
        from .trainer import TrainConfig

        over = self.arms[arm] if arm else {}
        return TrainConfig.from_dict({**self.train, **over, **self.overrides})

    def to_dict(self) -> dict:
        return {"data": self.data, "train": self.train, "arms": self.arms,
                "suite": self.suite, "output_dir": self.output_dir, "overrides": self.overrides}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cprlab", description="Chebyshev prototype risk experiments")
    p.add_argument("--version", action="version", version=f"cprlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_run_flags(sp):
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--out", dest="output_dir", help="output directory")
        for name, typ in TRAIN_FLAGS.items():
            sp.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)

    sp = sub.add_parser("train", help="train one model on the full training split")
    add_run_flags(sp)
    sp.add_argument("--arm", help="apply this arm's overrides from the config")

    sp = sub.add_parser("suite", help="paired multi-arm experiment over stratified subsets")
    add_run_flags(sp)
    sp.add_argument("--draws", type=int, default=None)
    sp.add_argument("--fraction", type=float, default=None)
    sp.add_argument("--suite-seed", dest="suite_seed", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None,
                    help="worker processes (default: $CPRLAB_THREADS or 1)")

    sp = sub.add_parser("bounds", help="per-class risk bounds from a prototype snapshot and a feature dump")
    sp.add_argument("--prototypes", type=Path, required=True)
    sp.add_argument("--features", type=Path, required=True)
    sp.add_argument("--out", type=Path, default=None)

    sp = sub.add_parser("report", help="render tables and figures for a finished suite run")
    sp.add_argument("--run-dir", type=Path, required=True)
    sp.add_argument("--out", type=Path, default=None, help="defaults to the run directory")

    sp = sub.add_parser("bench-cov", help="time the sort-and-shift loss against the exact covariance")
    sp.add_argument("--dims", type=int, nargs="+", default=[1024, 2048, 4096, 8192])
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--samples", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, default=None)
    return p


def _merge_section(name, defaults, doc):
    if doc is None:
        return dict(defaults)
    if not isinstance(doc, dict):
        raise ConfigError(name, "must be a JSON object")
    for key in doc:
        if key not in defaults:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return {**defaults, **doc}


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a JSON object")
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(key, "unknown key")
    return doc


def parse_and_validate(argv) -> CliConfig:
    """Parse ``argv``; flags override the config file, which overrides defaults."""
    from .trainer import TrainConfig

    args = build_parser().parse_args(argv)
    cfg = CliConfig(command=args.command, args=args)
    if args.command not in ("train", "suite"):
        return cfg

    doc = load_config_file(args.config) if args.config else {}
    cfg.data = _merge_section("data", DATA_DEFAULTS, doc.get("data"))
    train_keys = {f.name: f.default for f in fields(TrainConfig)}
    cfg.train = _merge_section("train", train_keys, doc.get("train"))
    cfg.train["hidden"] = list(cfg.train["hidden"])
    cfg.suite = _merge_section("suite", SUITE_DEFAULTS, doc.get("suite"))
    if "arms" in doc:
        if not isinstance(doc["arms"], dict) or not doc["arms"]:
            raise ConfigError("arms", "must be a non-empty object of name -> overrides")
        cfg.arms = {}
        for name, over in doc["arms"].items():
            cfg.arms[name] = _merge_section(f"arms.{name}", train_keys, over or {})
            cfg.arms[name] = {k: v for k, v in cfg.arms[name].items() if k in (over or {})}
    cfg.output_dir = doc.get("output_dir", cfg.output_dir)

    cfg.overrides = {k: getattr(args, k) for k in TRAIN_FLAGS if getattr(args, k) is not None}
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.command == "suite":
        for flag, key in (("draws", "draws"), ("fraction", "fraction"), ("suite_seed", "seed")):
            if getattr(args, flag) is not None:
                cfg.suite[key] = getattr(args, flag)
    if cfg.data["source"] not in ("blobs", "csv"):
        raise ConfigError("data.source", f"must be 'blobs' or 'csv', got {cfg.data['source']!r}")
    if cfg.data["source"] == "csv" and not (cfg.data["train_csv"] and cfg.data["test_csv"]):
        raise ConfigError("data.train_csv", "csv source needs train_csv and test_csv")
    if args.command == "train" and args.arm and args.arm not in cfg.arms:
        raise ConfigError("arm", f"no arm named {args.arm!r}")
    # validate every derived TrainConfig now so errors surface before any work
    cfg.base_config(args.arm if args.command == "train" else None)
    cfg.arm_configs()
    return cfg


def load_data(data_cfg: dict):
    from .data import label_mapping, load_csv_dataset, make_blob_splits

    if data_cfg["source"] == "csv":
        train = load_csv_dataset(data_cfg["train_csv"])
        test = load_csv_dataset(data_cfg["test_csv"], mapping=label_mapping(train))
        return train, test
    return make_blob_splits(
        data_cfg["n_classes"], data_cfg["d_in"], data_cfg["n_train_per_class"],
        data_cfg["n_test_per_class"], spread=data_cfg["spread"], overlap=data_cfg["overlap"],
        seed=data_cfg["seed"], label_noise=data_cfg["label_noise"])


class OutputDir:
    """Build results in a sibling temp directory and move it into place on success.

    On failure the temp directory is kept as ``<name>.partial`` with a
    ``PARTIAL`` marker file.
    """

    MARKER = "metadata.json"

    def __init__(self, path):
        self.final = Path(path)
        self.tmp = self.final.with_name(f".{self.final.name}.tmp-{os.getpid()}")

    def __enter__(self) -> Path:
        if self.final.exists() and not (self.final / self.MARKER).exists():
            raise ConfigError("output_dir", f"{self.final} exists and is not a cprlab output directory")
        self.final.parent.mkdir(parents=True, exist_ok=True)
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir()
        self.t0 = time.time()
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            (self.tmp / "PARTIAL").write_text(f"aborted: {exc_type.__name__}: {exc}\n")
            partial = self.final.with_name(self.final.name + ".partial")
            if partial.exists():
                shutil.rmtree(partial)
            self.tmp.rename(partial)
            return False
        meta = {"created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "elapsed_seconds": round(time.time() - self.t0, 3),
                "cprlab_version": __version__}
        (self.tmp / self.MARKER).write_text(json.dumps(meta, indent=1) + "\n")
        if self.final.exists():
            shutil.rmtree(self.final)
        self.tmp.rename(self.final)
        return False


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _fmt_table(header, rows):
    cols = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cols)


def accuracy_table(summary: dict):
    """Rows mu / sigma / Min, one column per arm."""
    arms = list(summary)
    header = [""] + arms
    rows = [[label] + [f"{summary[a]['accuracy'][key]:.4f}" for a in arms]
            for label, key in (("mu", "mu"), ("sigma", "sigma"), ("Min", "min"))]
    return header, rows


def cpr_table(summary: dict):
    """One row per arm: 1'S1 train/test/gap, DS^2 train/test/gap, test accuracy."""
    header = ["arm", "S_train", "S_test", "S_gap", "DS2_train", "DS2_test", "DS2_gap", "acc"]
    rows = [[a, f"{s['sum_S_train']:.5f}", f"{s['sum_S_test']:.5f}", f"{s['sum_S_gap']:.5f}",
             f"{s['ds2_train']:.4f}", f"{s['ds2_test']:.4f}", f"{s['ds2_gap']:.4f}",
             f"{s['accuracy']['mu']:.4f}"] for a, s in summary.items()]
    return header, rows


def _write_tsv(path, header, rows):
    Path(path).write_text("\n".join("\t".join(map(str, r)) for r in [header] + rows) + "\n")


def write_report(out: Path, records: list, summary: dict, curves: dict = None) -> str:
    """Tables (text + TSV + JSON) and figures for a suite result."""
    from . import plotting

    acc_h, acc_r = accuracy_table(summary)
    cpr_h, cpr_r = cpr_table(summary)
    _write_tsv(out / "accuracy_table.tsv", acc_h, acc_r)
    _write_tsv(out / "cpr_table.tsv", cpr_h, cpr_r)
    _dump({"accuracy": {"header": acc_h, "rows": acc_r}, "cpr": {"header": cpr_h, "rows": cpr_r}},
          out / "tables.json")
    text = ("Test accuracy over subset draws\n" + _fmt_table(acc_h, acc_r)
            + "\n\nCPR components (class-averaged)\n" + _fmt_table(cpr_h, cpr_r) + "\n")
    (out / "tables.txt").write_text(text)
    figs = out / "figures"
    plotting.plot_accuracy_summary(records, figs / "accuracy.png")
    plotting.plot_cpr_components(summary, figs / "cpr_components.png")
    if curves:
        plotting.plot_curves(curves, "test_acc", figs / "test_accuracy_curves.png", "test accuracy")
        plotting.plot_curves(curves, "train_acc", figs / "train_accuracy_curves.png", "train accuracy")
    return text


def _write_curves(out: Path, curves: dict):
    cdir = out / "curves"
    cdir.mkdir(exist_ok=True)
    for arm, c in curves.items():
        for metric, vals in c.items():
            if metric == "epoch":
                continue
            lines = [f"{e} {v!r}" for e, v in zip(c["epoch"], vals)]
            (cdir / f"{arm}_{metric}.txt").write_text("\n".join(lines) + "\n")


def cmd_suite(cfg: CliConfig) -> int:
    from .trainer import experiment_suite

    train, test = load_data(cfg.data)
    arms = cfg.arm_configs()
    threads = cfg.args.threads
    with OutputDir(cfg.output_dir) as out:
        _dump(cfg.to_dict(), out / "config.json")
        res = experiment_suite(arms, train, test, draws=cfg.suite["draws"], fraction=cfg.suite["fraction"],
                               seed=cfg.suite["seed"], out_dir=out, threads=threads,
                               standardize=cfg.data["standardize"])
        summary = res.summary_dict()
        _dump(res.records, out / "results.json")
        _dump(summary, out / "summary.json")
        _dump({a: c for a, c in res.curves.items()}, out / "curves.json")
        _write_curves(out, res.curves)
        text = write_report(out, res.records, summary, res.curves)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_train(cfg: CliConfig) -> int:
    from . import plotting
    from .data import Standardizer, save_csv_dataset
    from .model import save_checkpoint
    from .prototypes import save_snapshot
    from .trainer import cpr_report, features_of, train_run, write_history_csv

    train, test = load_data(cfg.data)
    if cfg.data["standardize"]:
        std = Standardizer.fit(train)
        train, test = std.apply(train), std.apply(test)
    tcfg = cfg.base_config(cfg.args.arm)
    with OutputDir(cfg.output_dir) as out:
        _dump({**cfg.to_dict(), "effective_train": tcfg.to_dict()}, out / "config.json")
        res = train_run(tcfg, train, test)
        save_checkpoint(res.params, out / "model.json")
        save_snapshot(res.prototypes, out / "prototypes.json")
        write_history_csv(res.history, out / "history.csv")
        _dump(res.cpr_history, out / "cpr_history.json")
        save_csv_dataset(train, out / "train_features.csv", features_of(res.params, train))
        save_csv_dataset(test, out / "test_features.csv", features_of(res.params, test))
        rep = cpr_report(res.params, None, train, test, arm=cfg.args.arm or tcfg.regularizer)
        _dump(rep.to_dict(), out / "report.json")
        plotting.plot_history(res.history, out / "figures" / "history.png")
    sys.stdout.write(f"train_acc\t{rep.accuracy_train:.4f}\ntest_acc\t{rep.accuracy_test:.4f}\n"
                     f"sum_S_train\t{rep.sum_S_train:.6f}\nds2_train\t{rep.ds2_train:.4f}\n")
    return EXIT_OK


def compute_bounds(proto, features) -> list:
    """Per-class BoundReport dicts from prototypes and a labelled feature dump."""
    from .covariance import bound_report, sum_s
    from .errors import DimensionMismatch
    from .prototypes import dissimilarities

    if features.dim != proto.dim:
        raise DimensionMismatch(f"feature width {features.dim} != prototype dim {proto.dim}")
    ds = dissimilarities(proto)
    out = []
    for k in range(proto.n_classes):
        rows = features.x[features.y == k]
        if rows.shape[0] == 0:
            continue
        entry = {"class": k, "n": int(rows.shape[0])}
        entry.update(bound_report(sum_s(rows, proto.vectors[k]), float(ds[k])).to_dict())
        out.append(entry)
    return out


def cmd_bounds(cfg: CliConfig) -> int:
    from .data import load_csv_dataset
    from .prototypes import load_snapshot

    proto = load_snapshot(cfg.args.prototypes)
    mapping = {str(k): k for k in range(proto.n_classes)}
    feats = load_csv_dataset(cfg.args.features, mapping=mapping)
    rows = compute_bounds(proto, feats)
    text = json.dumps(rows, indent=1) + "\n"
    if cfg.args.out:
        Path(cfg.args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(cfg: CliConfig) -> int:
    run = cfg.args.run_dir
    try:
        records = json.loads((run / "results.json").read_text())
        summary = json.loads((run / "summary.json").read_text())
    except FileNotFoundError as exc:
        raise ConfigError("run_dir", f"missing {exc.filename}") from None
    curves_path = run / "curves.json"
    curves = json.loads(curves_path.read_text()) if curves_path.exists() else None
    out = cfg.args.out or run
    out.mkdir(parents=True, exist_ok=True)
    sys.stdout.write(write_report(out, records, summary, curves))
    return EXIT_OK


def cmd_bench(cfg: CliConfig) -> int:
    from . import plotting
    from .covariance import benchmark_scaling

    a = cfg.args
    rows = benchmark_scaling(a.dims, repeats=a.repeats, n_samples=a.samples, seed=a.seed)
    lines = ["J\tapprox_time\toracle_time"] + [f"{J}\t{t1:.6e}\t{t2:.6e}" for J, t1, t2 in rows]
    text = "\n".join(lines) + "\n"
    if a.out:
        a.out.mkdir(parents=True, exist_ok=True)
        (a.out / "bench_cov.tsv").write_text(text)
        plotting.plot_scaling(rows, a.out / "bench_cov.png")
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "suite": cmd_suite, "bounds": cmd_bounds,
            "report": cmd_report, "bench-cov": cmd_bench}


def run_subcommand(cfg: CliConfig) -> int:
    return COMMANDS[cfg.command](cfg)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_and_validate(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return run_subcommand(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CprError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
