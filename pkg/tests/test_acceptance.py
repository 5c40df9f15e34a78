"""Acceptance checks A-1 .. A-8.

Each test prints one ``A-n PASS`` / ``A-n FAIL`` line straight to the
terminal (outside pytest's capture) and then asserts the same condition.
A-6 trains on full MNIST for tens of minutes; deselect it with
``-m "not slow"``.
"""
import io

import numpy as np
import pytest

from rbnn.cli import main
from rbnn.dataset import load_mnist, make_split
from rbnn.metrics import evaluate_error, read_report, storage_report
from rbnn.model import (
    BitLedger,
    RbnnModel,
    forward,
    freeze_and_recycle,
    load,
    new_model,
    plastic_forward,
    slot_count,
    softmax,
)
from rbnn.train import TrainConfig, backward_incremental, loss_and_output_grad, run_recursive, train_iteration

# A-5 / A-7: 5,000-image subset, the last 1,000 of them held out for validation
A5 = dict(train_subset=5000, validation_size=1000, initial_hidden=50, initial_bits=8, max_recursions=2,
          max_epochs=30, patience=30, learning_rate=4.0, batch_size=250, seed=0)
# A-6: full MNIST
# patience equal to the epoch budget: every iteration runs all 200 epochs and
# keeps its best-validation checkpoint
A6 = dict(initial_hidden=100, initial_bits=16, max_recursions=6, max_epochs=200, patience=200,
          learning_rate=2.0, batch_size=500, seed=0)


@pytest.fixture
def verdict(capsys):
    def record(name, ok, detail):
        with capsys.disabled():
            print(f"\n{name} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"{name}: {detail}"
    return record


def a5_split(raw):
    train, test = raw
    return make_split(train.head(A5["train_subset"]), test, validation_size=A5["validation_size"])


def write_cfg(path, values, **extra):
    lines = [f"{k} = {v}" for k, v in {**values, **extra}.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


# -- A-1 ----------------------------------------------------------------------------

# (H0, B, k) -> bits/weight and kB as printed, with the tolerance on kB; the
# table prints whole kB, so +/-0.5 unless the criterion states otherwise
A1_ROWS = {
    "R_1": ((200, 16, 3), 4.0, 310.0, 0.5),
    "R_2": ((100, 16, 6), 2.2857, 155.0, 0.5),
    "R_3": ((100, 12, 3), 3.0, 116.0, 0.5),
    "B_1": ((800, 12, 0), 12.0, 930.0, 0.5),
    "B_2": ((400, 12, 0), 12.0, 465.0, 0.5),
    "B_3": ((200, 6, 0), 6.0, 114.0, 1.0),
}


def test_a1_storage_ledger(verdict):
    problems = []
    for name, ((h0, bits, k), bpw, kb, kb_tol) in A1_ROWS.items():
        r = storage_report(BitLedger(slot_count(h0), bits, k))
        if abs(r.bits_per_weight - bpw) > 5e-5 or abs(r.storage_kB - kb) > kb_tol:
            problems.append(f"{name} gives {r.bits_per_weight:.4f} b/weight and {r.storage_kB:.2f} kB, "
                            f"expected {bpw} and {kb}+/-{kb_tol}")
    verdict("A-1", not problems, "; ".join(problems) or "all six storage rows match")


# -- A-2 ----------------------------------------------------------------------------

def _fd(f, w, eps=1e-6):
    g = np.zeros_like(w)
    for i in np.ndindex(w.shape):
        old = w[i]
        w[i] = old + eps
        up = f()
        w[i] = old - eps
        down = f()
        w[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def test_a2_gradients_match_finite_differences(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    failures = 0
    checked = 0
    for net in range(10):
        n_in, hidden, n_out = int(rng.integers(2, 7)), int(rng.integers(2, 17)), int(rng.integers(2, 5))
        for shifts in ("none", "auto"):
            m = new_model(hidden, 12, net, input_dim=n_in, output_dim=n_out, layer_shifts=shifts)
            for _ in range(int(rng.integers(0, 3))):
                m = freeze_and_recycle(m)
            x = rng.normal(size=(5, n_in))
            t = np.eye(n_out)[rng.integers(0, n_out, size=5)]
            fwd = forward(m, x, binarize=False)
            grads = backward_incremental(m, fwd, loss_and_output_grad(fwd.output, t)[1], binarize=False)
            # weights as the MACs see them; equal to the stored values when unshifted
            c1, c2 = 2.0 ** -m.layer_shifts[0], 2.0 ** -m.layer_shifts[1]
            w1, w2 = c1 * m.plastic.real_w1, c2 * m.plastic.real_w2

            def loss():
                logits = fwd.frozen_logits + plastic_forward(w1, w2, x, m.activation)[2]
                return -np.sum(t * np.log(softmax(logits))) / len(x)

            for g, w in ((grads.w1, w1), (grads.w2, w2)):
                fd = _fd(loss, w)
                err = np.abs(g - fd)
                bad = err > np.maximum(1e-4 * np.abs(fd), 1e-7)
                failures += int(bad.sum())
                checked += g.size
                worst = max(worst, float((err / np.maximum(np.abs(fd), 1e-3)).max()))
    verdict("A-2", failures == 0,
            f"{checked} gradient entries over 10 nets x 2 shift settings, {failures} outside tolerance "
            f"(worst relative error {worst:.2e})")


# -- A-3 ----------------------------------------------------------------------------

def test_a3_isolation_and_immutability(verdict, mnist_raw):
    data = a5_split(mnist_raw)
    m = freeze_and_recycle(freeze_and_recycle(new_model(20, 8, 3)))
    before = [sub.to_bytes() for sub in m.frozen]
    m2, rec = train_iteration(m, data, TrainConfig(learning_rate=4.0, batch_size=250, max_epochs=1, patience=1))
    same = [sub.to_bytes() for sub in m2.frozen] == before
    full = forward(m2, data.test.inputs)
    alone = forward(RbnnModel(m2.hidden_units, m2.ledger, m2.frozen, None, layer_shifts=m2.layer_shifts),
                    data.test.inputs)
    gap = float(np.abs(alone.logits + full.plastic_logits - full.logits).max())
    verdict("A-3", same and gap <= 1e-12 and len(rec.epochs) == 1,
            f"frozen bytes unchanged={same}, decomposition max gap {gap:.1e} over {len(data.test)} inputs")


# -- A-4 ----------------------------------------------------------------------------

def test_a4_fixed_matches_real(verdict):
    rng = np.random.default_rng(44)
    m = new_model(8, 8, seed=44)
    m = freeze_and_recycle(freeze_and_recycle(m))
    # inputs on the normalised pixel range
    x = rng.uniform(-0.26, 1.75, size=(100, 784))
    real = forward(m, x, backend="real").logits
    fixed = forward(m, x, backend="fixed").logits
    gap = float(np.abs(real - fixed).max())
    verdict("A-4", gap <= 1e-3, f"max |logit difference| {gap:.2e} on 100 inputs (H0=8, B=8, k=2)")


# -- A-5 ----------------------------------------------------------------------------

def test_a5_smoke_learning(verdict, mnist_raw):
    data = a5_split(mnist_raw)
    cfg = TrainConfig(learning_rate=A5["learning_rate"], batch_size=A5["batch_size"], max_epochs=A5["max_epochs"],
                      patience=A5["patience"], max_recursions=A5["max_recursions"], seed=A5["seed"])
    res = run_recursive(data, A5["initial_hidden"], A5["initial_bits"], cfg)
    test_err = evaluate_error(res.model, data.test.inputs, data.test.labels)
    v0 = res.records[0].best_validation_error
    v1 = res.records[1].best_validation_error
    ok = test_err <= 0.12 and v1 <= v0 + 0.005
    verdict("A-5", ok, f"final test error {test_err:.4f} (k={res.model.ledger.recursion_index}), "
                       f"best validation k=0 {v0:.4f}, k=1 {v1:.4f}")


# -- A-6 ----------------------------------------------------------------------------

@pytest.mark.slow
def test_a6_full_reproduction(verdict, mnist_path, tmp_path):
    cfg = write_cfg(tmp_path / "r2.cfg", A6, mnist_dir=mnist_path, run_id="R_2",
                    out_model_path=tmp_path / "r2.rbnn", out_report_path=tmp_path / "r2.csv")
    out = io.StringIO()
    assert main(["train", "--config", str(cfg)], out=out) == 0
    print(out.getvalue())
    m = load(tmp_path / "r2.rbnn")
    test = make_split(*load_mnist(mnist_path)).test
    final = evaluate_error(m, test.inputs, test.labels)
    rows = read_report(tmp_path / "r2.csv")
    by_k = {}
    for r in rows:
        by_k.setdefault(r.iteration, []).append(r)
    k0_test = _test_at_best(by_k[0])
    later = {k: _test_at_best(v) for k, v in by_k.items() if k >= 1}
    sr = storage_report(m.ledger)
    ok = (final <= 0.04 and final <= k0_test - 0.005
          and sr.total_synapses == 555_800 and abs(sr.bits_per_weight - 2.2857) < 1e-4)
    trend = ", ".join(f"k={k} {e:.4f}" for k, e in sorted({0: k0_test, **later}.items()))
    verdict("A-6", ok, f"final test error {final:.4f}; test error at best validation per iteration: {trend}; "
                       f"final storage {sr.total_synapses} synapses at {sr.bits_per_weight:.4f} b/weight")


def _test_at_best(rows):
    val = [r for r in rows if r.split == "validation"]
    best = min(val, key=lambda r: (r.error_rate, r.epoch))
    return next(r.error_rate for r in rows if r.split == "test" and r.epoch == best.epoch)


# -- A-7 ----------------------------------------------------------------------------

def test_a7_determinism(verdict, mnist_path, tmp_path):
    outputs = []
    for name in ("first", "second"):
        cfg = write_cfg(tmp_path / f"{name}.cfg", A5, mnist_dir=mnist_path, run_id="A5",
                        out_model_path=tmp_path / f"{name}.rbnn", out_report_path=tmp_path / f"{name}.csv")
        assert main(["train", "--config", str(cfg)], out=io.StringIO()) == 0
        outputs.append(((tmp_path / f"{name}.rbnn").read_bytes(), (tmp_path / f"{name}.csv").read_bytes()))
    same_model = outputs[0][0] == outputs[1][0]
    same_report = outputs[0][1] == outputs[1][1]
    verdict("A-7", same_model and same_report,
            f"model files identical={same_model} ({len(outputs[0][0])} bytes), "
            f"reports identical={same_report} ({len(outputs[0][1])} bytes)")


# -- A-8 ----------------------------------------------------------------------------

def test_a8_ingestion(verdict, mnist_raw):
    train, test = mnist_raw
    split = make_split(train, test, mean_mode="dataset")
    tail = np.array_equal(split.validation.labels, train.labels[-10_000:]) and np.array_equal(
        split.validation.inputs, (train.images[-10_000:].astype(float) - split.mean) / 255 * 2)
    mean = float(split.train.inputs.mean())
    ok = len(train) == 60_000 and len(test) == 10_000 and tail and abs(mean) <= 1e-9
    verdict("A-8", ok, f"{len(train)} train / {len(test)} test images, validation = last 10,000: {tail}, "
                       f"normalised training mean {mean:.1e}")
