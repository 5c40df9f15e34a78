"""Training: SGD on the plastic subnet, early stopping, and the recursion loop.

The first network is trained exactly like every later plastic subnet; with no
frozen subnets the enlarged forward pass is just the plain BNN forward pass.
Frozen subnets contribute constant logits, so they are evaluated once per
recursion and never see a gradient.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import DataSplit, Examples, batches, one_hot
from .fixedpoint import saturating_update_array
from .model import (
    ACTIVATIONS,
    BudgetExhausted,
    Forward,
    PlasticSubnet,
    RbnnModel,
    forward,
    freeze_and_recycle,
    frozen_forward,
    new_model,
    plastic_weights,
    prepare_inputs,
    to_intermediate,
)

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
EVAL_CHUNK = 10_000


@dataclass
class TrainConfig:
    learning_rate: float = 0.25
    batch_size: int = 1000
    max_epochs: int = 1000
    patience: int = 50
    min_plastic_bits: int = 2
    max_recursions: int | None = None  # None: as many as the bit budget allows
    seed: int = 0
    backend: str = "real"
    mode: str = "rbnn"
    # debug switch: run plastic MACs on the stored values instead of their signs
    binarize: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must be in [0, max_epochs]")
        if self.min_plastic_bits < 2:
            raise ValueError("min_plastic_bits must be >= 2")
        if self.max_recursions is not None and self.max_recursions < 0:
            raise ValueError("max_recursions must be >= 0")
        if self.backend not in ("real", "fixed"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.mode not in ("rbnn", "bnn_baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def recursion_limit(self, initial_bits: int) -> int:
        if self.mode == "bnn_baseline":
            return 0
        budget = max(initial_bits - self.min_plastic_bits, 0)
        return budget if self.max_recursions is None else min(self.max_recursions, budget)


@dataclass
class EpochRecord:
    epoch: int
    train_error: float
    train_loss: float
    validation_error: float
    validation_loss: float
    test_error: float
    test_loss: float


@dataclass
class IterationRecord:
    recursion_index: int
    plastic_bits: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_validation_error: float = float("inf")
    train_error_at_best: float = float("nan")
    test_error_at_best: float = float("nan")


@dataclass
class Gradients:
    w1: np.ndarray
    w2: np.ndarray


def loss_and_output_grad(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    The softmax and the loss are differentiated together: (output - target) / batch.
    """
    output = np.atleast_2d(output)
    target = np.atleast_2d(target)
    n = output.shape[0]
    loss = -np.sum(target * np.log(np.maximum(output, LOG_FLOOR))) / n
    return float(loss), (output - target) / n


def plastic_gradients(w2: np.ndarray, pre: np.ndarray, hidden: np.ndarray, inputs: np.ndarray,
                      g_logits: np.ndarray, activation: str = "tanh_opt",
                      backend: str = "real") -> Gradients:
    """Back-propagate ``g_logits`` through one subnet with dense output weights ``w2``."""
    _, act_grad = ACTIVATIONS[activation]
    q = to_intermediate if backend == "fixed" else (lambda v: v)
    g = q(g_logits)
    g2 = q(g.T @ hidden)
    g_hidden = q(q(g @ w2) * q(act_grad(pre)))
    g1 = q(g_hidden.T @ inputs)
    return Gradients(g1, g2)


def backward_incremental(m: RbnnModel, fwd: Forward, g_logits: np.ndarray, *, backend: str = "real",
                         binarize: bool = True) -> Gradients:
    """Gradients for the plastic subnet only; there is no frozen gradient to compute.

    The result is the gradient w.r.t. the weight values the MACs actually used
    (+/-2**-shift for sign bits).  Binarisation is treated as the identity
    (straight-through), so :func:`sgd_step` applies it to the stored codes.
    """
    _, w2 = plastic_weights(m, binarize)
    return plastic_gradients(w2, fwd.plastic_preact, fwd.plastic_hidden, fwd.inputs,
                             np.atleast_2d(g_logits), m.activation, backend)


def sgd_step(plastic: PlasticSubnet, grads: Gradients, lr: float) -> PlasticSubnet:
    """w <- w - lr * g, truncated and saturated in the plastic format."""
    if grads.w1.shape != plastic.w1.shape or grads.w2.shape != plastic.w2.shape:
        raise ValueError("gradient shapes do not match the plastic subnet")
    return PlasticSubnet(saturating_update_array(plastic.w1, -lr * grads.w1, plastic.fmt),
                         saturating_update_array(plastic.w2, -lr * grads.w2, plastic.fmt),
                         plastic.fmt)


def frozen_logits_for(m: RbnnModel, inputs: np.ndarray, backend: str = "real") -> np.ndarray:
    out = np.zeros((inputs.shape[0], m.output_dim))
    if not m.frozen:
        return out
    for start in range(0, inputs.shape[0], EVAL_CHUNK):
        xs = prepare_inputs(m, inputs[start:start + EVAL_CHUNK], backend)
        out[start:start + EVAL_CHUNK] = frozen_forward(m, xs, backend)[0]
    return out


def evaluate(m: RbnnModel, examples: Examples, frozen_logits: np.ndarray | None = None,
             backend: str = "real") -> tuple[float, float]:
    """(error rate, mean loss) with the plastic subnet binarised for every MAC."""
    n = len(examples)
    if n == 0:
        raise ValueError("cannot evaluate on an empty example set")
    wrong = 0
    loss = 0.0
    for start in range(0, n, EVAL_CHUNK):
        stop = min(start + EVAL_CHUNK, n)
        fl = None if frozen_logits is None else frozen_logits[start:stop]
        fwd = forward(m, examples.inputs[start:stop], backend=backend, binarize=True, frozen_logits=fl)
        labels = examples.labels[start:stop]
        wrong += int(np.count_nonzero(np.argmax(fwd.logits, axis=1) != labels))
        batch_loss, _ = loss_and_output_grad(fwd.output, one_hot(labels, m.output_dim))
        loss += batch_loss * (stop - start)
    return wrong / n, loss / n


def train_iteration(m: RbnnModel, data: DataSplit, cfg: TrainConfig) -> tuple[RbnnModel, IterationRecord]:
    """Train the plastic subnet with mini-batch SGD until early stopping.

    Returns the model holding the plastic weights with the best validation
    error seen (first occurrence wins).
    """
    if m.plastic is None:
        raise ValueError("model has no plastic subnet")
    k = m.ledger.recursion_index
    backend = cfg.backend
    fixed = {name: frozen_logits_for(m, getattr(data, name).inputs, backend)
             for name in ("train", "validation", "test")}
    record = IterationRecord(k, m.ledger.plastic_bits)
    best_plastic = m.plastic
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        for batch in batches(data, cfg.batch_size, cfg.seed, epoch, stream=k):
            fwd = forward(m, batch.inputs, backend=backend, binarize=cfg.binarize,
                          frozen_logits=fixed["train"][batch.index])
            _, g = loss_and_output_grad(fwd.output, batch.targets)
            grads = backward_incremental(m, fwd, g, backend=backend, binarize=cfg.binarize)
            m = replace(m, plastic=sgd_step(m.plastic, grads, cfg.learning_rate))
        tr = evaluate(m, data.train, fixed["train"], backend)
        va = evaluate(m, data.validation, fixed["validation"], backend)
        te = evaluate(m, data.test, fixed["test"], backend)
        record.epochs.append(EpochRecord(epoch, *tr, *va, *te))
        if va[0] < record.best_validation_error:
            record.best_validation_error = va[0]
            record.best_epoch = epoch
            record.train_error_at_best = tr[0]
            record.test_error_at_best = te[0]
            best_plastic = m.plastic
            since_best = 0
        else:
            since_best += 1
        log.debug("k=%d epoch %d: train %.4f val %.4f test %.4f", k, epoch, tr[0], va[0], te[0])
        if since_best >= cfg.patience:
            break
    log.info("k=%d (%d plastic bits): best val %.4f at epoch %d, test %.4f",
             k, record.plastic_bits, record.best_validation_error, record.best_epoch,
             record.test_error_at_best)
    return replace(m, plastic=best_plastic), record


@dataclass
class RecursiveResult:
    model: RbnnModel
    records: list[IterationRecord]

    @property
    def best_record(self) -> IterationRecord:
        return self.records[self.model.ledger.recursion_index]


def run_recursive(data: DataSplit, hidden_units: int, bits: int, cfg: TrainConfig, *,
                  activation: str = "tanh_opt", plastic_output: str = "binary",
                  layer_shifts="auto", on_iteration=None) -> RecursiveResult:
    """Train, then freeze-and-recycle while validation keeps strictly improving
    and the bit budget allows.  Returns the model from the best iteration.
    """
    input_dim = data.train.inputs.shape[1]
    m = new_model(hidden_units, bits, cfg.seed, input_dim=input_dim, activation=activation,
                  plastic_output=plastic_output, layer_shifts=layer_shifts)
    m, rec = train_iteration(m, data, cfg)
    records = [rec]
    if on_iteration:
        on_iteration(m, rec)
    best_model = m
    limit = cfg.recursion_limit(bits)
    while m.ledger.recursion_index < limit:
        try:
            m = freeze_and_recycle(m, cfg.min_plastic_bits)
        except BudgetExhausted:
            break
        m, rec = train_iteration(m, data, cfg)
        records.append(rec)
        if on_iteration:
            on_iteration(m, rec)
        if rec.best_validation_error < records[-2].best_validation_error:
            best_model = m
        else:
            break
    return RecursiveResult(best_model, records)
