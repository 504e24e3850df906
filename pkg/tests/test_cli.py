import csv
import os

import numpy as np
import pytest

from spikeae import data_io
from spikeae.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, parse_args, parse_config_file
from spikeae.experiments import AUDIO_COLUMNS, EVAL_COLUMNS, LOSS_COLUMNS, MNIST_FILES


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(0)
    for split, n in (("train", 60), ("test", 20)):
        labels = np.arange(n) % 10
        pixels = np.zeros((n, 28, 28), dtype=np.uint8)
        for i, c in enumerate(labels):
            pixels[i, 2 * c : 2 * c + 8, 4:24] = 200 + rng.integers(0, 55)
        imgs, labs = MNIST_FILES[split]
        data_io.save_idx(str(d / imgs), str(d / labs), data_io.ImageSet(pixels, labels.astype(np.uint8)))
    return d


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


TINY = ["--T", "4", "--batch-size", "20", "--hidden", "16"]
TINY_AUDIO = ["--synthetic-train-per-class", "2", "--synthetic-test-per-class", "1", "--channels", "5", "--frames", "8"]


@pytest.fixture(scope="module")
def ae_run(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ae")
    code = main(["train-ae", "--data-dir", str(data_dir), "--out", str(out), "--n-show", "4"] + TINY)
    assert code == EXIT_OK
    return out


def test_train_ae_outputs(ae_run):
    rows = read_csv(ae_run / "loss.csv")
    assert tuple(rows[0]) == LOSS_COLUMNS
    assert len(rows) == 1 + 3
    net, cfg = data_io.load_checkpoint(str(ae_run / "ae.saec"))
    assert net.topology == [784, 16, 784] and cfg.T == 4
    sheet = data_io.read_pgm(str(ae_run / "recon.pgm"))
    assert sheet.ndim == 2


def test_alpha_list_writes_one_csv_each(data_dir, tmp_path):
    code = main(["train-ae", "--data-dir", str(data_dir), "--out", str(tmp_path), "--alpha", "0,0.4", "--n-show", "0"] + TINY)
    assert code == EXIT_OK
    assert {"loss_alpha0.0.csv", "loss_alpha0.4.csv"} <= set(os.listdir(tmp_path))


def test_eval(ae_run, data_dir, tmp_path):
    assert main(["eval", "--checkpoint", str(ae_run / "ae.saec"), "--data-dir", str(data_dir), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert tuple(rows[0]) == EVAL_COLUMNS
    assert [r[0] for r in rows[1:]] == ["train", "test"]
    assert rows[2][1] == "20"


def test_audio_and_synthesis(ae_run, data_dir, tmp_path):
    ae = str(ae_run / "ae.saec")
    args = ["train-audio", "--ae-checkpoint", ae, "--data-dir", str(data_dir), "--out", str(tmp_path)]
    args += ["--T", "4", "--T-h", "2", "--epochs", "2", "--batch-size", "10", "--hidden", "12"] + TINY_AUDIO
    assert main(args) == EXIT_OK
    rows = read_csv(tmp_path / "audio_loss.csv")
    assert tuple(rows[0]) == AUDIO_COLUMNS and len(rows) == 3
    syn = tmp_path / "syn"
    args = ["synthesize", "--ae-checkpoint", ae, "--audiocoder", str(tmp_path / "audiocoder.saec"), "--out", str(syn)]
    assert main(args + ["--per-class", "1"] + TINY_AUDIO) == EXIT_OK
    assert len([f for f in os.listdir(syn) if f.startswith("sample")]) == 10
    assert data_io.read_pgm(str(syn / "synth_sheet.pgm")).shape[1] > 10 * 28


def test_sweep_mask(data_dir, tmp_path):
    args = ["sweep", "--param", "mask", "--values", "on,off", "--data-dir", str(data_dir), "--out", str(tmp_path)]
    assert main(args + TINY) == EXIT_OK
    rows = read_csv(tmp_path / "sweep_mask.csv")
    assert [r[1] for r in rows[1:]] == ["on", "off"]
    assert float(rows[1][3]) > float(rows[2][3])


class TestConfigFile:
    def test_values_become_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nhidden = 64\nmax-rate = 0.5\nseed=3\n")
        args = parse_args(["train-ae", "--config", str(cfg)])
        assert (args.hidden, args.max_rate, args.seed) == (64, 0.5, 3)

    def test_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("hidden = 64\n")
        assert parse_args(["train-ae", "--config", str(cfg), "--hidden", "10"]).hidden == 10

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("hiden = 64\n")
        assert main(["train-ae", "--config", str(cfg)]) == EXIT_CONFIG
        assert "hiden" in capsys.readouterr().err

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("hidden 64\n")
        with pytest.raises(ValueError):
            parse_config_file(str(cfg))

    def test_missing_file(self, tmp_path):
        assert main(["train-ae", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO


class TestExitCodes:
    def test_invalid_config_value(self, data_dir, tmp_path):
        assert main(["train-ae", "--data-dir", str(data_dir), "--out", str(tmp_path), "--batch-size", "0"]) == EXIT_CONFIG

    def test_no_data(self, tmp_path):
        assert main(["train-ae", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_data_dir(self, tmp_path):
        assert main(["train-ae", "--data-dir", str(tmp_path / "none"), "--out", str(tmp_path)]) == EXIT_IO

    def test_corrupt_checkpoint(self, data_dir, tmp_path):
        bad = tmp_path / "bad.saec"
        bad.write_bytes(b"NOPE" + bytes(20))
        assert main(["eval", "--checkpoint", str(bad), "--data-dir", str(data_dir), "--out", str(tmp_path)]) == EXIT_IO

    def test_T_h_longer_than_ae(self, ae_run, data_dir, tmp_path):
        args = ["train-audio", "--ae-checkpoint", str(ae_run / "ae.saec"), "--data-dir", str(data_dir)]
        assert main(args + ["--out", str(tmp_path), "--T-h", "5"] + TINY_AUDIO) == EXIT_CONFIG

    def test_synthesize_wrong_audio_width(self, ae_run, tmp_path):
        from spikeae.network import SpikingNetwork

        coder = tmp_path / "coder.saec"
        data_io.save_checkpoint(str(coder), SpikingNetwork.build([7, 4, 16]))
        args = ["synthesize", "--ae-checkpoint", str(ae_run / "ae.saec"), "--audiocoder", str(coder), "--out", str(tmp_path)]
        assert main(args + TINY_AUDIO) == EXIT_CONFIG

    def test_bad_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2
