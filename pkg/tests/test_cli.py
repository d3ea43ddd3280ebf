import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dualpath.cli import dispatch
from dualpath.formats import load_dataset, load_model, save_model
from dualpath.imaging import load_pgm, psnr
from dualpath.nn import LayerSpec, NetworkParams, init_params


def center_net(p=7, q=3):
    W = np.zeros((q * q, p * p))
    m = (p - q) // 2
    for u in range(q):
        for v in range(q):
            W[u * q + v, (u + m) * p + v + m] = 1.0
    return NetworkParams([LayerSpec(p * p, q * q)], [W], [np.zeros(q * q)])


@pytest.fixture
def config(tiny_corpus, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "corpus_dir": str(tiny_corpus), "patch_in": 7, "patch_out": 3, "n_train": 400,
        "hidden": [6], "train": {"minibatch_size": 100, "n_minibatches": 4,
                                 "iterations_per_minibatch": 2},
    }))
    return path


def test_no_subcommand_is_usage_error(capsys):
    assert dispatch([]) == 1
    assert "subcommand" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert dispatch(["denoise", "--bogus"]) == 1


def test_dataset_without_action():
    assert dispatch(["dataset"]) == 1


def test_missing_file_is_data_error(tmp_path, capsys):
    code = dispatch(["denoise", "--model", str(tmp_path / "none.dprn"),
                     "--in", str(tmp_path / "x.pgm"), "--out", str(tmp_path / "y.pgm")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_malformed_model_is_data_error(tmp_path, tiny_corpus):
    (tmp_path / "bad.dprn").write_bytes(b"DPRN\x01\x00\x00\x00")
    code = dispatch(["denoise", "--model", str(tmp_path / "bad.dprn"),
                     "--in", str(tiny_corpus / "img0.pgm"), "--out", str(tmp_path / "y.pgm")])
    assert code == 2


def test_add_noise_then_denoise(tmp_path, tiny_corpus):
    noisy = tmp_path / "noisy.pgm"
    assert dispatch(["add-noise", "--sigma", "25", "--seed", "3",
                     "--in", str(tiny_corpus / "img1.pgm"), "--out", str(noisy)]) == 0
    clean = load_pgm(tiny_corpus / "img1.pgm")
    assert 18 < psnr(clean, load_pgm(noisy)) < 23
    save_model(center_net(), tmp_path / "m.dprn")
    out = tmp_path / "out.pgm"
    assert dispatch(["denoise", "--model", str(tmp_path / "m.dprn"), "--in", str(noisy),
                     "--out", str(out), "--stride", "2"]) == 0
    # the center projection reproduces its input up to 8-bit rounding
    assert psnr(load_pgm(noisy), load_pgm(out)) > 50


def test_add_noise_deterministic(tmp_path, tiny_corpus):
    args = ["add-noise", "--sigma", "25", "--seed", "7", "--in", str(tiny_corpus / "img0.pgm")]
    assert dispatch(args + ["--out", str(tmp_path / "a.pgm")]) == 0
    assert dispatch(args + ["--out", str(tmp_path / "b.pgm")]) == 0
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


def test_denoise_dimension_mismatch(tmp_path, tiny_corpus, capsys):
    save_model(center_net(), tmp_path / "m.dprn")
    code = dispatch(["denoise", "--model", str(tmp_path / "m.dprn"), "--patch-in", "9",
                     "--in", str(tiny_corpus / "img0.pgm"), "--out", str(tmp_path / "o.pgm")])
    assert code == 2
    assert "49->9" in capsys.readouterr().err
    assert not (tmp_path / "o.pgm").exists()


def test_dataset_and_train(tmp_path, config):
    ds = tmp_path / "d.dpds"
    assert dispatch(["dataset", "build", "--config", str(config), "--seed", "2",
                     "--out", str(ds)]) == 0
    assert load_dataset(ds).n == 400
    out = tmp_path / "run"
    assert dispatch(["train", "--config", str(config), "--dataset", str(ds),
                     "--activation", "rectifier", "--out", str(out)]) == 0
    model = load_model(out / "model.dprn")
    assert model.dims == [49, 6, 9]
    assert (out / "loss.png").exists() and (out / "training_log.csv").exists()
    saved = json.loads((out / "config.json").read_text())
    assert saved["activation"] == "rectifier"


def test_train_overrides(tmp_path, config):
    out = tmp_path / "run"
    assert dispatch(["train", "--config", str(config), "--hidden", "4,5",
                     "--n-minibatches", "2", "--out", str(out)]) == 0
    assert load_model(out / "model.dprn").dims == [49, 4, 5, 9]
    with open(out / "training_log.csv") as fh:
        assert len(list(csv.reader(fh))) == 3


def test_evaluate_identity(tmp_path, tiny_corpus, capsys):
    code = dispatch(["evaluate", "--model", "identity", "--images", str(tiny_corpus),
                     "--sigmas", "15,25", "--seeds", "0,1", "--out", str(tmp_path)])
    assert code == 0
    assert "Average" in capsys.readouterr().out
    with open(tmp_path / "psnr.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image", "sigma=15", "sigma=25"] and rows[-1][0] == "Average"
    assert (tmp_path / "psnr.png").exists()


def test_analyze_dict(tmp_path):
    save_model(init_params([16, 6, 16], "dual", 0, tied=True), tmp_path / "ae.dprn")
    out = tmp_path / "analysis"
    assert dispatch(["analyze-dict", "--model", str(tmp_path / "ae.dprn"),
                     "--out", str(out)]) == 0
    for name in ("atoms.pgm", "angle_histogram.csv", "pairs.csv", "summary.csv",
                 "angle_histogram.png"):
        assert (out / name).exists()
    assert load_pgm(out / "atoms.pgm").shape == (9, 19)


def test_numeric_failure_exit_code(tmp_path, tiny_corpus):
    # each layer multiplies activations by ~1e39, overflowing double precision
    big = init_params([49] + [4] * 10 + [9], "rectifier", 0)
    big = big.with_vector(np.full(big.n_params, 3e38))
    save_model(big, tmp_path / "big.dprn")
    code = dispatch(["denoise", "--model", str(tmp_path / "big.dprn"),
                     "--in", str(tiny_corpus / "img0.pgm"), "--out", str(tmp_path / "o.pgm")])
    assert code == 3


def test_console_entry_point(tmp_path):
    result = subprocess.run([sys.executable, "-m", "dualpath.cli", "--help"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    assert "analyze-dict" in result.stdout
