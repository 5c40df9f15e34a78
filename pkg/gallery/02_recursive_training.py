"""Recursive training on a 5,000-image MNIST subset.

Trains a 784-50-10 binary network with 8-bit weights, then freezes its
sign bits and trains a second and third subnet in the recycled bits.  The
enlarged network's logits are the sum over subnets, so every recursion
adds hidden units without adding storage.

    RBNN_MNIST_DIR=/path/to/mnist python gallery/02_recursive_training.py
"""
import logging
import os

from rbnn.dataset import load_mnist, make_split
from rbnn.metrics import evaluate_error, op_counts, storage_report
from rbnn.train import TrainConfig, run_recursive

logging.basicConfig(level=logging.INFO, format="%(message)s")

train_raw, test_raw = load_mnist(os.environ.get("RBNN_MNIST_DIR", "/root/data/mnist"))
data = make_split(train_raw.head(5000), test_raw, validation_size=1000)
print(f"{len(data.train)} train, {len(data.validation)} validation, {len(data.test)} test; "
      f"pixel mean {data.mean:.2f}")

cfg = TrainConfig(learning_rate=4.0, batch_size=250, max_epochs=30, patience=30, max_recursions=2)
result = run_recursive(data, 50, 8, cfg)

for rec in result.records:
    print(f"k={rec.recursion_index}: {rec.plastic_bits}-bit plastic subnet, best validation "
          f"{rec.best_validation_error:.3f} at epoch {rec.best_epoch}, test {rec.test_error_at_best:.3f}")

m = result.model
sr = storage_report(m.ledger)
ops = op_counts(m)
print(f"kept k={m.ledger.recursion_index}: {m.total_hidden} hidden units, {sr.total_synapses} synapses, "
      f"{sr.bits_per_weight:.2f} bits/weight, {sr.storage_kB:.1f} kB")
print(f"inference: {ops.inference_shift} shifts and {ops.inference_add} adds per image")
print(f"test error (sign bits only): {evaluate_error(m, data.test.inputs, data.test.labels):.4f}")
