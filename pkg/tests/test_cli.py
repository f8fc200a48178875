import json
import shutil
import subprocess

import pytest

from shgcn import io
from shgcn.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["gen-synth", "--users", "60", "--items", "120", "--seed", "2", "--out", str(out)]) == 0
    return out


def _data_args(d):
    return ["--interactions", str(d / "interactions.tsv"), "--triplets", str(d / "triplets.tsv")]


def _train(d, out, *extra):
    return main(["train", *_data_args(d), "--model", "shgcn", "--dim", "4", "--layers", "1",
                 "--epochs", "3", "--batch-size", "256", "--lr", "0.01", "--out", str(out), *extra])


def test_param_count_output(capsys):
    assert main(["param-count", "--users", "3773", "--items", "4544"]) == 0
    out = capsys.readouterr().out
    assert "266,144" in out
    assert "embeddings" in out and "extra_approx" in out


def test_train_is_deterministic_and_evaluate_reproduces(synth_dir, tmp_path):
    assert _train(synth_dir, tmp_path / "a") == 0
    assert _train(synth_dir, tmp_path / "b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
    assert (a / "metrics.json").read_text() == (b / "metrics.json").read_text()
    assert len((a / "epochs.jsonl").read_text().splitlines()) >= 1
    assert json.loads((a / "id_map.json").read_text())["users"][:2] == [0, 1]

    assert main(["evaluate", *_data_args(synth_dir), "--checkpoint", str(a / "model.ckpt"),
                 "--manifest", str(a / "manifest.jsonl"), "--out", str(tmp_path / "eval.json")]) == 0
    trained = json.loads((a / "metrics.json").read_text())
    evaluated = json.loads((tmp_path / "eval.json").read_text())
    assert evaluated["test"] == trained["test"]
    assert evaluated["config_hash"] == trained["config_hash"]


def test_config_file_and_flag_override(synth_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = mf\ndim = 3\nepochs = 2  # short\nseed = 5\n")
    assert main(["train", *_data_args(synth_dir), "--config", str(cfg), "--dim", "2",
                 "--out", str(tmp_path / "r")]) == 0
    model = io.load_checkpoint(tmp_path / "r" / "model.ckpt")
    assert model.kind == "mf" and model.dim == 2
    assert io.read_manifests(tmp_path / "r" / "manifest.jsonl")[0].seed == 5


def test_unknown_config_key_is_usage_error(synth_dir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp = 9\n")
    assert main(["train", *_data_args(synth_dir), "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", "x"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_data_errors(tmp_path):
    bad = tmp_path / "i.tsv"
    bad.write_text("1\tx\n")
    assert main(["train", "--interactions", str(bad), "--out", str(tmp_path / "r")]) == 2
    assert main(["train", "--interactions", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "r")]) == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"nope")
    bad.write_text("1\t2\n")
    assert main(["evaluate", "--interactions", str(bad), "--checkpoint", str(junk), "--seed", "0"]) == 2


def test_evaluate_rejects_changed_dataset(synth_dir, tmp_path):
    assert _train(synth_dir, tmp_path / "a") == 0
    other = tmp_path / "other"
    assert main(["gen-synth", "--users", "60", "--items", "120", "--seed", "3", "--out", str(other)]) == 0
    assert main(["evaluate", *_data_args(other), "--checkpoint", str(tmp_path / "a" / "model.ckpt"),
                 "--manifest", str(tmp_path / "a" / "manifest.jsonl")]) == 2


def test_grid(synth_dir, tmp_path):
    assert main(["grid", *_data_args(synth_dir), "--model", "mf", "--dim", "4", "--epochs", "2",
                 "--lrs", "0.01,0.001", "--l2s", "0", "--batch-sizes", "512", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "grid.jsonl").read_text().splitlines()) == 2
    assert json.loads((tmp_path / "grid_best.json").read_text())["batch_size"] == 512


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "2"]) == 0
    assert "2/2 instances" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("shgcn") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["shgcn", "param-count", "--users", "2", "--items", "2", "--dim", "1", "--layers", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "total" in res.stdout
