import io
import json

import pytest

from rbnn.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_IO,
    ConfigError,
    RunConfig,
    main,
    read_config_file,
    resolve_config,
)
from rbnn.metrics import read_report
from rbnn.model import load

TINY = ["--initial-hidden", "4", "--initial-bits", "6", "--max-epochs", "3", "--patience", "3",
        "--batch-size", "40", "--learning-rate", "2", "--validation-size", "40"]


def run(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


def train_argv(tmp_path, mnist, *extra, name="m"):
    return ["train", "--mnist-dir", str(mnist), "--out-model-path", str(tmp_path / f"{name}.rbnn"),
            "--out-report-path", str(tmp_path / f"{name}.csv"), *TINY, *extra]


# -- configuration -----------------------------------------------------------------

def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "r2.cfg"
    cfg.write_text("# full run\ninitial_hidden = 100\ninitial-bits=16  # width\n\nmax_recursions = 6\n"
                   "binarize = false\ntrain_subset = none\nlayer_shifts = 4,2\n")
    values = read_config_file(cfg)
    assert values == {"initial_hidden": 100, "initial_bits": 16, "max_recursions": 6, "binarize": False,
                      "train_subset": None, "layer_shifts": "4,2"}


@pytest.mark.parametrize("text", ["nokey\n", "bogus = 1\n", "batch_size = ten\n", "backend = gpu\n",
                                  "layer_shifts = 1\n", "layer_shifts = -1,2\n"])
def test_config_file_errors(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigError):
        resolve_config(cfg, env={})


@pytest.mark.parametrize("key,file_value,flag_value,default", [
    ("learning_rate", "0.5", 2.0, 0.25),
    ("batch_size", "100", 7, 1000),
    ("seed", "3", 9, 0),
    ("mode", "bnn_baseline", "rbnn", "rbnn"),
    ("initial_bits", "12", 8, 16),
    ("max_recursions", "6", 2, None),
])
def test_three_layer_precedence(tmp_path, key, file_value, flag_value, default):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"{key} = {file_value}\n")
    assert getattr(resolve_config(None, {}, env={}), key) == default
    from_file = getattr(resolve_config(cfg, {}, env={}), key)
    assert from_file != default
    assert getattr(resolve_config(cfg, {key: flag_value}, env={}), key) == flag_value


def test_env_fallback_for_mnist_dir(tmp_path):
    assert resolve_config(env={"RBNN_MNIST_DIR": "/x"}).mnist_dir == "/x"
    assert resolve_config(overrides={"mnist_dir": "/y"}, env={"RBNN_MNIST_DIR": "/x"}).mnist_dir == "/y"


def test_every_field_but_mnist_dir_has_a_default():
    cfg = RunConfig()
    assert cfg.mnist_dir is None
    assert cfg.initial_hidden == 100 and cfg.initial_bits == 16 and cfg.learning_rate == 0.25


# -- train -------------------------------------------------------------------------

def test_missing_mnist_dir_names_key(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("RBNN_MNIST_DIR", raising=False)
    code, _ = run(["train", "--out-model-path", str(tmp_path / "m.rbnn")])
    assert code == EXIT_CONFIG
    assert "mnist_dir" in capsys.readouterr().err


def test_bad_data_dir_is_data_error(tmp_path):
    code, _ = run(["train", "--mnist-dir", str(tmp_path / "nowhere"), *TINY])
    assert code == EXIT_DATA


def test_bad_flag_value_is_config_error(tmp_path, fake_mnist):
    assert run(train_argv(tmp_path, fake_mnist, "--learning-rate", "-1"))[0] == EXIT_CONFIG
    assert run(train_argv(tmp_path, fake_mnist, "--patience", "9"))[0] == EXIT_CONFIG


def test_train_writes_model_and_report(tmp_path, fake_mnist):
    code, out = run(train_argv(tmp_path, fake_mnist, "--max-recursions", "2"))
    assert code == 0
    assert "k=0" in out and "final k=" in out
    m = load(tmp_path / "m.rbnn")
    assert m.hidden_units == 4 and m.ledger.initial_bits == 6
    rows = read_report(tmp_path / "m.csv")
    assert {r.split for r in rows} == {"train", "validation", "test"}
    iterations = {r.iteration for r in rows}
    assert m.ledger.recursion_index in iterations and max(iterations) <= 2


def test_unwritable_model_path_is_io_error(tmp_path, fake_mnist):
    argv = train_argv(tmp_path, fake_mnist)
    argv[argv.index("--out-model-path") + 1] = str(tmp_path / "no" / "such" / "m.rbnn")
    assert run(argv)[0] == EXIT_IO


def test_baseline_mode_trains_one_iteration(tmp_path, fake_mnist):
    code, out = run(train_argv(tmp_path, fake_mnist, "--mode", "bnn_baseline", "--initial-hidden", "8",
                               "--initial-bits", "12"))
    assert code == 0
    assert "k=1" not in out
    assert load(tmp_path / "m.rbnn").ledger.recursion_index == 0


def test_same_seed_byte_identical(tmp_path, fake_mnist):
    for name in ("a", "b"):
        assert run(train_argv(tmp_path, fake_mnist, "--seed", "5", "--report-format", "json",
                              name=name))[0] == 0
    assert (tmp_path / "a.rbnn").read_bytes() == (tmp_path / "b.rbnn").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_fixed_backend_runs(tmp_path, fake_mnist):
    assert run(train_argv(tmp_path, fake_mnist, "--backend", "fixed", "--max-recursions", "1"))[0] == 0


# -- eval / inspect / report --------------------------------------------------------

@pytest.fixture
def trained(tmp_path, fake_mnist):
    assert run(train_argv(tmp_path, fake_mnist, "--max-recursions", "1"))[0] == 0
    return tmp_path / "m.rbnn", fake_mnist


def test_eval_prints_json(trained):
    model, mnist = trained
    code, out = run(["eval", str(model), "--mnist-dir", str(mnist), "--validation-size", "40"])
    assert code == 0
    doc = json.loads(out)
    assert {"error_rate", "bits_per_weight", "storage_bytes"} <= set(doc)
    assert 0.0 <= doc["error_rate"] <= 1.0
    assert doc["examples"] == 60


def test_eval_corrupt_model(tmp_path, fake_mnist):
    bad = tmp_path / "bad.rbnn"
    bad.write_bytes(b"NOPE\x01" + bytes(40))
    assert run(["eval", str(bad), "--mnist-dir", str(fake_mnist)])[0] == EXIT_IO


def test_inspect(trained):
    model, _ = trained
    code, out = run(["inspect", str(model)])
    assert code == 0
    m = load(model)
    assert f"recursions={m.ledger.recursion_index}" in out
    assert f"subnets: {m.subnet_count}" in out
    assert out.count("  subnet ") == m.subnet_count


def test_inspect_fresh_model(tmp_path):
    from rbnn.model import new_model, save
    save(new_model(3, 8, input_dim=784), tmp_path / "fresh.rbnn")
    code, out = run(["inspect", str(tmp_path / "fresh.rbnn")])
    assert code == 0 and "recursions=0" in out and "plastic 784-3-10 Q1.7" in out


def test_inspect_truncated(trained):
    model, _ = trained
    data = model.read_bytes()
    model.write_bytes(data[:-3])
    assert run(["inspect", str(model)])[0] == EXIT_IO


def test_report_table():
    code, out = run(["report"])
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 7
    r2 = dict(zip(lines[0].split(","), lines[2].split(",")))
    assert r2["run_id"] == "R_2" and r2["total_synapses"] == "555800"
    assert float(r2["bits_per_weight"]) == pytest.approx(16 / 7)


def test_report_model(trained):
    model, _ = trained
    code, out = run(["report", "--model", str(model)])
    doc = json.loads(out)
    assert code == 0 and doc["inference_shift"] == doc["total_synapses"]
    assert "learning_ops_formula" in doc


def test_report_sweep_has_six_runs(tmp_path, fake_mnist):
    out_path = tmp_path / "sweep.csv"
    code, _ = run(["report", "--sweep", "--mnist-dir", str(fake_mnist), "--out-report-path", str(out_path),
                   "--max-epochs", "1", "--patience", "1", "--validation-size", "40", "--batch-size", "100"])
    assert code == 0
    rows = read_report(out_path)
    assert sorted({r.run_id for r in rows}) == ["B_1", "B_2", "B_3", "R_1", "R_2", "R_3"]
    assert {r.mode for r in rows if r.run_id.startswith("B")} == {"bnn_baseline"}
