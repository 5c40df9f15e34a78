"""Command-line entry point: ``rbnn train | eval | report | inspect``.

Settings come from three layers, highest first: command-line flags, a
``key = value`` config file (``--config``), and the defaults in
:class:`RunConfig`.  Flags are the config keys in kebab-case.

Exit codes: 0 success, 1 configuration error, 2 data error (MNIST files
missing or malformed), 3 I/O error (model or report unreadable/unwritable).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import IdxError, load_mnist, make_split
from .metrics import (
    LEARNING_OPS_FORMULA,
    emit_report,
    evaluate_error,
    op_counts,
    report_rows,
    storage_report,
)
from .model import BitLedger, ModelFormatError, freeze_and_recycle, load, new_model, save, slot_count
from .train import TrainConfig, run_recursive

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_IO = 3

ENV_MNIST_DIR = "RBNN_MNIST_DIR"

# The comparison-table configurations: run_id -> (H0, B, recursions, mode)
TABLE_CONFIGS = {
    "R_1": (200, 16, 3, "rbnn"),
    "R_2": (100, 16, 6, "rbnn"),
    "R_3": (100, 12, 3, "rbnn"),
    "B_1": (800, 12, 0, "bnn_baseline"),
    "B_2": (400, 12, 0, "bnn_baseline"),
    "B_3": (200, 6, 0, "bnn_baseline"),
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class IOFailure(Exception):
    pass


@dataclass
class RunConfig:
    # training
    learning_rate: float = 0.25
    batch_size: int = 1000
    max_epochs: int = 1000
    patience: int = 50
    min_plastic_bits: int = 2
    max_recursions: int | None = None
    seed: int = 0
    backend: str = "real"
    mode: str = "rbnn"
    binarize: bool = True
    # network
    initial_hidden: int = 100
    initial_bits: int = 16
    activation: str = "tanh_opt"
    plastic_output: str = "binary"
    layer_shifts: str = "auto"
    # data
    mnist_dir: str | None = None
    mean_mode: str = "dataset"
    validation_size: int = 10_000
    train_subset: int | None = None  # use only the first N training images
    # outputs
    out_model_path: str = "model.rbnn"
    out_report_path: str = "report.csv"
    report_format: str = "csv"
    run_id: str = "run"

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.patience,
                               self.min_plastic_bits, self.max_recursions, self.seed, self.backend,
                               self.mode, self.binarize)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def shifts(self):
        return parse_shifts(self.layer_shifts)

    def model_kwargs(self) -> dict:
        return dict(activation=self.activation, plastic_output=self.plastic_output,
                    layer_shifts=self.shifts())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("none", "") else int(text)


def _optional_str(text: str) -> str | None:
    return None if text.strip().lower() in ("none", "") else text


def parse_shifts(text: str):
    if text in ("auto", "none"):
        return text
    try:
        s1, s2 = (int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"layer_shifts must be 'auto', 'none' or 'S1,S2', got {text!r}") from None
    if s1 < 0 or s2 < 0:
        raise ConfigError("layer shifts must be non-negative")
    return (s1, s2)


_PARSERS = {
    "learning_rate": float, "batch_size": int, "max_epochs": int, "patience": int,
    "min_plastic_bits": int, "max_recursions": _optional_int, "seed": int, "binarize": _bool,
    "initial_hidden": int, "initial_bits": int, "validation_size": int,
    "train_subset": _optional_int, "mnist_dir": _optional_str,
}
_CHOICES = {
    "backend": ("real", "fixed"), "mode": ("rbnn", "bnn_baseline"), "activation": ("tanh_opt", "tanh"),
    "plastic_output": ("binary", "real"), "mean_mode": ("dataset", "half_range"),
    "report_format": ("csv", "json"),
}
KEYS = [f.name for f in fields(RunConfig)]


def convert(key: str, text: str):
    parser = _PARSERS.get(key, str)
    try:
        value = parser(text.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text.strip()!r}") from None
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {', '.join(_CHOICES[key])}, got {value!r}")
    return value


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = convert(key, value)
    return values


def resolve_config(config_path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults, then the config file, then ``overrides`` (already-typed flag values)."""
    env = os.environ if env is None else env
    values = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update(overrides or {})
    if values.get("mnist_dir") is None and env.get(ENV_MNIST_DIR):
        values["mnist_dir"] = env[ENV_MNIST_DIR]
    cfg = RunConfig(**values)
    cfg.shifts()
    return cfg


# -- helpers -----------------------------------------------------------------------

def load_data(cfg: RunConfig):
    if not cfg.mnist_dir:
        raise ConfigError(f"mnist_dir is not set (use --mnist-dir, the config file or {ENV_MNIST_DIR})")
    try:
        train_raw, test_raw = load_mnist(cfg.mnist_dir)
    except (OSError, IdxError) as exc:
        raise DataError(f"cannot load MNIST from {cfg.mnist_dir}: {exc}") from exc
    if cfg.train_subset is not None:
        train_raw = train_raw.head(cfg.train_subset)
    try:
        return make_split(train_raw, test_raw, cfg.validation_size, cfg.mean_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_model(path, cfg: RunConfig):
    try:
        return load(path, **cfg.model_kwargs())
    except (OSError, ModelFormatError) as exc:
        raise IOFailure(f"cannot read model {path}: {exc}") from exc


def train_one(cfg: RunConfig, data, out=sys.stdout):
    tcfg = cfg.train_config()
    if not 2 <= cfg.initial_bits <= 16:
        raise ConfigError("initial_bits must be in [2, 16] (plastic raws are stored as int16)")
    if cfg.initial_hidden < 1:
        raise ConfigError("initial_hidden must be >= 1")

    def summary(m, rec):
        print(f"{cfg.run_id} k={rec.recursion_index} plastic_bits={rec.plastic_bits} "
              f"epochs={len(rec.epochs)} best_epoch={rec.best_epoch} "
              f"val={rec.best_validation_error:.4f} train={rec.train_error_at_best:.4f} "
              f"test={rec.test_error_at_best:.4f}", file=out, flush=True)

    res = run_recursive(data, cfg.initial_hidden, cfg.initial_bits, tcfg, on_iteration=summary,
                        **cfg.model_kwargs())
    ledger = BitLedger(res.model.ledger.slot_count, cfg.initial_bits, 0)
    rows = report_rows(cfg.run_id, cfg.mode, res.records, cfg.initial_hidden, ledger)
    return res, rows


def write_report(rows, cfg: RunConfig):
    try:
        emit_report(rows, cfg.out_report_path, cfg.report_format)
    except OSError as exc:
        raise IOFailure(str(exc)) from exc


def sign_stats(bits_positive: np.ndarray) -> str:
    return f"{bits_positive.mean():.4f}"


# -- commands ------------------------------------------------------------------------

def cmd_train(cfg: RunConfig, out=sys.stdout) -> int:
    data = load_data(cfg)
    res, rows = train_one(cfg, data, out)
    try:
        save(res.model, cfg.out_model_path)
    except OSError as exc:
        raise IOFailure(f"cannot write model {cfg.out_model_path}: {exc.strerror or exc}") from exc
    write_report(rows, cfg)
    sr = storage_report(res.model.ledger)
    print(f"{cfg.run_id} final k={sr.recursions} synapses={sr.total_synapses} "
          f"bits_per_weight={sr.bits_per_weight:.4f} storage_bytes={sr.storage_bytes:g} "
          f"test={res.best_record.test_error_at_best:.4f}", file=out)
    return 0


def cmd_eval(cfg: RunConfig, model_path, split: str = "test", out=sys.stdout) -> int:
    m = load_model(model_path, cfg)
    data = load_data(cfg)
    examples = getattr(data, split)
    if examples.inputs.shape[1] != m.input_dim:
        raise DataError(f"model expects {m.input_dim} inputs, data has {examples.inputs.shape[1]}")
    sr = storage_report(m.ledger)
    doc = {
        "model": str(model_path),
        "split": split,
        "examples": len(examples),
        "error_rate": evaluate_error(m, examples.inputs, examples.labels, backend=cfg.backend),
        "bits_per_weight": sr.bits_per_weight,
        "storage_bytes": sr.storage_bytes,
        "storage_kB": sr.storage_kB,
        "total_synapses": sr.total_synapses,
        "recursions": sr.recursions,
    }
    print(json.dumps(doc), file=out)
    return 0


def cmd_inspect(cfg: RunConfig, model_path, out=sys.stdout) -> int:
    m = load_model(model_path, cfg)
    led = m.ledger
    sr = storage_report(led)
    print(f"model: {model_path}", file=out)
    print(f"ledger: slots={led.slot_count} initial_bits={led.initial_bits} "
          f"recursions={led.recursion_index} plastic_bits={led.plastic_bits}", file=out)
    print(f"storage: synapses={sr.total_synapses} bits_per_weight={sr.bits_per_weight:.4f} "
          f"bytes={sr.storage_bytes:g} kB={sr.storage_kB:.2f}", file=out)
    print(f"layer_shifts: {m.layer_shifts[0]},{m.layer_shifts[1]} seed={m.seed}", file=out)
    print(f"subnets: {m.subnet_count}", file=out)
    dims = f"{m.input_dim}-{m.hidden_units}-{m.output_dim}"
    for i, sub in enumerate(m.frozen):
        print(f"  subnet {i}: frozen {dims} positive_signs w1={sign_stats(sub.w1.positive)} "
              f"w2={sign_stats(sub.w2.positive)}", file=out)
    if m.plastic is not None:
        p = m.plastic
        print(f"  subnet {len(m.frozen)}: plastic {dims} {p.fmt} positive_signs w1={sign_stats(p.w1 >= 0)} "
              f"w2={sign_stats(p.w2 >= 0)}", file=out)
    return 0


def table_rows() -> list[dict]:
    rows = []
    for run_id, (h0, bits, k, mode) in TABLE_CONFIGS.items():
        sr = storage_report(BitLedger(slot_count(h0), bits, k))
        m = new_model(h0, bits)
        # op counts depend only on the subnet count, so grow an untrained model
        for _ in range(k):
            m = freeze_and_recycle(m, min_plastic_bits=2)
        rows.append({"run_id": run_id, "mode": mode, "initial_hidden": h0, "initial_bits": bits,
                     "recursions": k, "hidden_total": h0 * (k + 1), **asdict(sr), **asdict(op_counts(m))})
    return rows


def cmd_report(cfg: RunConfig, *, model_path=None, sweep=False, out=sys.stdout) -> int:
    if sweep:
        data = load_data(cfg)
        all_rows = []
        for run_id, (h0, bits, k, mode) in TABLE_CONFIGS.items():
            sub = RunConfig(**{**asdict(cfg), "run_id": run_id, "initial_hidden": h0, "initial_bits": bits,
                               "max_recursions": k, "mode": mode})
            all_rows.extend(train_one(sub, data, out)[1])
        write_report(all_rows, cfg)
        print(f"wrote {len(all_rows)} rows for {len(TABLE_CONFIGS)} runs to {cfg.out_report_path}", file=out)
        return 0
    if model_path is not None:
        m = load_model(model_path, cfg)
        doc = {"model": str(model_path), **asdict(storage_report(m.ledger)), **asdict(op_counts(m)),
               "learning_ops_formula": LEARNING_OPS_FORMULA}
        print(json.dumps(doc), file=out)
        return 0
    # default: the analytic storage/op table
    rows = table_rows()
    if cfg.report_format == "json":
        print(json.dumps({"learning_ops_formula": LEARNING_OPS_FORMULA, "rows": rows}, indent=1), file=out)
    else:
        cols = list(rows[0])
        print(",".join(cols), file=out)
        for r in rows:
            print(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols), file=out)
    return 0


# -- argument parsing --------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    for key in KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbnn", description="Recursive binary neural network on MNIST")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, write the model file and a report")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="error rate and storage of a saved model, as JSON")
    p.add_argument("model")
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    _add_config_flags(p)

    p = sub.add_parser("report", help="storage/op table, a model's report, or the six-configuration sweep")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--model", dest="report_model", help="report storage and op counts of this model")
    group.add_argument("--sweep", action="store_true", help="train all six table configurations")
    _add_config_flags(p)

    p = sub.add_parser("inspect", help="ledger, subnets and sign statistics of a model")
    p.add_argument("model")
    _add_config_flags(p)
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(message)s", stream=sys.stderr)
    try:
        overrides = {k: convert(k, v) for k, v in vars(args).items() if k in KEYS}
        cfg = resolve_config(args.config, overrides)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, args.model, args.split, out)
        if args.command == "inspect":
            return cmd_inspect(cfg, args.model, out)
        return cmd_report(cfg, model_path=args.report_model, sweep=args.sweep, out=out)
    except ConfigError as exc:
        print(f"rbnn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"rbnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IOFailure as exc:
        print(f"rbnn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
