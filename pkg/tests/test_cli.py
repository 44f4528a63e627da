import json

import pytest

from vaeas.cli import main
from vaeas.experiments import grid, parse_layers, parse_S
from vaeas.metrics import read_rows
from vaeas.vae import RunConfig

TINY = ["--latent", "3", "--hidden", "16", "--batch", "50", "--eval-K", "4"]


def run(*argv):
    return main([str(a) for a in argv])


def test_train_writes_rows_and_config(tmp_path, mnist_path):
    out = tmp_path / "run"
    rc = run("train", "--alpha", 1, "--beta", 1, "--epochs", 3, "--limit", 200, "--seed", 7,
             "--data-path", mnist_path, "--out-dir", out, *TINY)
    assert rc == 0
    rows = read_rows(out / "metrics.csv")
    aux = [r for r in rows if r["estimator"] == "aux"]
    assert [r["epoch"] for r in aux] == ["1", "2", "3"]
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["limit"] == 200 and cfg["latent"] == 3
    for name in ("encoder.ckpt", "decoder.ckpt", "classifier.ckpt", "labels.u32", "recon_epoch3.pgm"):
        assert (out / name).exists()


def test_same_command_twice_is_byte_identical(tmp_path, mnist_path):
    args = ["--epochs", 2, "--limit", 150, "--seed", 3, "--data-path", mnist_path, *TINY]
    assert run("train", *args, "--out-dir", tmp_path / "a") == 0
    assert run("train", *args, "--out-dir", tmp_path / "b") == 0
    for name in ("metrics.csv", "batches.csv", "encoder.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_rerun_from_echoed_config(tmp_path):
    assert run("train", "--dataset", "random", "--limit", 100, "--epochs", 2, "--out-dir", tmp_path / "a", *TINY) == 0
    assert run("train", "--config", tmp_path / "a" / "config.json", "--out-dir", tmp_path / "b") == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval_and_estimate(tmp_path, capsys):
    out = tmp_path / "r"
    assert run("train", "--dataset", "random", "--limit", 80, "--epochs", 1, "--out-dir", out, *TINY) == 0
    assert run("eval", "--out-dir", out, "--eval-K", 8) == 0
    assert "nll_train=" in capsys.readouterr().out
    est = {r["estimator"] for r in read_rows(out / "eval.csv")}
    assert est == {"recon", "iwae8", "aux_eval"}
    assert run("estimate-mi", "--out-dir", out, "--S", "20,full,500") == 0
    rows = {r["estimator"]: r for r in read_rows(out / "estimates.csv")}
    assert {"mc_20", "mc_full", "aux_eval", "fano_eval"} <= set(rows)
    assert "mc_500" not in rows  # larger than the data set


def test_exit_codes(tmp_path, mnist_path):
    assert run("train", "--beta", -1, "--dataset", "random", "--out-dir", tmp_path) == 2
    assert run("train", "--no-such-flag", 1, "--out-dir", tmp_path) == 2
    assert run("train", "--dataset", "mnist", "--data-path", tmp_path / "missing", "--out-dir", tmp_path) == 3
    assert run("train", "--labels-V", 500, "--limit", 100, "--dataset", "random", "--out-dir", tmp_path) == 2
    assert run("experiment", "no-such-id", "--out-dir", tmp_path) == 2
    assert run("eval", "--out-dir", tmp_path / "nothing") == 3
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "train-images-idx3-ubyte").write_bytes(b"\x00\x00\x08\x01" + bytes(12))
    assert run("train", "--data-path", bad, "--out-dir", tmp_path / "o") == 3


def test_numerical_abort_exit_code(tmp_path):
    # a learning rate this large overflows the weights within a few steps
    rc = run("train", "--dataset", "random", "--limit", 100, "--epochs", 20, "--lr", 1e300,
             "--out-dir", tmp_path, *TINY)
    assert rc == 4


def test_missing_data_path_is_config_error(tmp_path, monkeypatch):
    monkeypatch.delenv("VAEAS_DATA", raising=False)
    assert run("train", "--dataset", "mnist", "--out-dir", tmp_path) == 2


def test_experiment_bundle(tmp_path):
    rc = run("experiment", "beta-sweep", "--values", "0.5,5", "--dataset", "random", "--limit", 60,
             "--epochs", 1, "--out-dir", tmp_path, *TINY)
    assert rc == 0
    assert (tmp_path / "beta0.5" / "metrics.csv").exists() and (tmp_path / "beta5" / "metrics.csv").exists()
    rows = read_rows(tmp_path / "summary.csv")
    assert {r["point"] for r in rows} == {"beta0.5", "beta5"}
    assert {r["beta"] for r in rows if r["estimator"] == "aux"} == {"0.5", "5"}


def test_estimator_compare_rows(tmp_path):
    rc = run("experiment", "estimator-compare", "--S", "10,full", "--dataset", "random", "--limit", 40,
             "--epochs", 2, "--out-dir", tmp_path, *TINY)
    assert rc == 0
    rows = read_rows(tmp_path / "compare" / "metrics.csv")
    per_epoch = {(r["epoch"], r["estimator"]) for r in rows}
    for e in ("1", "2"):
        assert {(e, "mc_10"), (e, "mc_full"), (e, "aux_eval"), (e, "aux")} <= per_epoch


def test_grid_and_parsers():
    assert parse_layers("1..5") == [1, 2, 3, 4, 5]
    assert parse_layers("2,4") == [2, 4]
    assert parse_S("100,500,full") == [100, 500, None]
    base = RunConfig()
    pts = grid("decoder-depth", base, [1, 3])
    assert [(n, c.dec_layers, c.objective) for n, c in pts] == [("dec1", 1, "vae"), ("dec3", 3, "vae")]
    (name, cfg), = grid("random-collapse", base)
    assert cfg.dataset == "random" and cfg.objective == "vae"
    assert [c.alpha for _, c in grid("alpha-sweep", base)] == [0.0, 0.5, 1.0, 2.0]
    with pytest.raises(ValueError):
        grid("nope", base)


def test_documented_train_command(tmp_path, mnist_path):
    out = tmp_path / "doc"
    rc = run("train", "--alpha", 1, "--beta", 1, "--latent", 40, "--hidden", 500, "--epochs", 5, "--limit", 2000,
             "--seed", 7, "--data-path", mnist_path, "--eval-K", 0, "--out-dir", out)
    assert rc == 0
    rows = read_rows(out / "metrics.csv")
    assert [r["epoch"] for r in rows if r["estimator"] == "aux"] == ["1", "2", "3", "4", "5"]
