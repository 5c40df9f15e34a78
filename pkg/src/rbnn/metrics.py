"""Storage accounting, operation counts, error rates and report files."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import BitLedger, RbnnModel, predict

KB = 1024

LEARNING_OPS_FORMULA = (
    "per training example: learning_shift = frozen_synapses + 2*plastic_synapses "
    "(forward sign-MACs everywhere, backward sign-MACs in the plastic subnet); "
    "learning_add = learning_shift + plastic_synapses (weight-gradient accumulation); "
    "learning_multiply = plastic_synapses (weight-gradient outer product)"
)


@dataclass(frozen=True)
class StorageReport:
    slot_count: int
    initial_bits: int
    recursions: int
    total_synapses: int
    bits_per_weight: float
    storage_bytes: float
    storage_kB: float


def storage_report(ledger: BitLedger) -> StorageReport:
    """Storage of a run with ``ledger``: S*B bits shared by S*(k+1) synapses."""
    k = ledger.recursion_index
    synapses = ledger.slot_count * (k + 1)
    storage_bytes = ledger.total_bits / 8
    return StorageReport(
        slot_count=ledger.slot_count,
        initial_bits=ledger.initial_bits,
        recursions=k,
        total_synapses=synapses,
        bits_per_weight=ledger.initial_bits / (k + 1),
        storage_bytes=storage_bytes,
        storage_kB=storage_bytes / KB,
    )


@dataclass(frozen=True)
class OpCountReport:
    inference_shift: int
    inference_add: int
    learning_shift: int
    learning_add: int
    learning_multiply: int


def op_counts(model: RbnnModel) -> OpCountReport:
    """Per-example operation counts; see ``LEARNING_OPS_FORMULA`` for the learning side."""
    frozen = model.ledger.slot_count * len(model.frozen)
    plastic = model.ledger.slot_count if model.plastic is not None else 0
    total = frozen + plastic
    learning_shift = frozen + 2 * plastic
    return OpCountReport(
        inference_shift=total,
        inference_add=total,
        learning_shift=learning_shift,
        learning_add=learning_shift + plastic,
        learning_multiply=plastic,
    )


def evaluate_error(model: RbnnModel, inputs: np.ndarray, labels: np.ndarray, *,
                   backend: str = "real") -> float:
    """Fraction of misclassified examples (sign-bit inference throughout)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty example set")
    return float(np.mean(predict(model, np.atleast_2d(inputs), backend=backend) != labels))


# -- report files ---------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    run_id: str
    mode: str
    iteration: int
    epoch: int
    split: str
    error_rate: float
    loss: float
    plastic_bits: int
    hidden_total: int
    synapses_total: int
    storage_bytes: float
    bits_per_weight: float


COLUMNS = [f.name for f in fields(ReportRow)]


def report_rows(run_id: str, mode: str, records, hidden_units: int, ledger: BitLedger) -> list[ReportRow]:
    """Flatten iteration records into one row per (iteration, epoch, split).

    ``ledger`` supplies the slot count and initial width; per-iteration
    storage figures are recomputed from each record's recursion index.
    """
    rows = []
    for rec in records:
        k = rec.recursion_index
        sr = storage_report(BitLedger(ledger.slot_count, ledger.initial_bits, k))
        for ep in rec.epochs:
            for split, err, loss in (("train", ep.train_error, ep.train_loss),
                                     ("validation", ep.validation_error, ep.validation_loss),
                                     ("test", ep.test_error, ep.test_loss)):
                rows.append(ReportRow(run_id, mode, k, ep.epoch, split, err, loss, rec.plastic_bits,
                                      hidden_units * (k + 1), sr.total_synapses, sr.storage_bytes,
                                      sr.bits_per_weight))
    return rows


def emit_report(rows: Iterable[ReportRow], path, fmt: str = "csv") -> Path:
    path = Path(path)
    rows = list(rows)
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(COLUMNS)
                for r in rows:
                    w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        elif fmt == "json":
            doc = {"columns": COLUMNS, "learning_ops_formula": LEARNING_OPS_FORMULA,
                   "rows": [asdict(r) for r in rows]}
            path.write_text(json.dumps(doc, indent=1) + "\n")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc.strerror or exc}") from exc
    return path


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def read_report(path) -> list[ReportRow]:
    path = Path(path)
    if path.suffix == ".json":
        return [ReportRow(**r) for r in json.loads(path.read_text())["rows"]]
    types = {f.name: f.type for f in fields(ReportRow)}
    conv = {"str": str, "int": int, "float": float}
    with open(path, newline="") as fh:
        return [ReportRow(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]
