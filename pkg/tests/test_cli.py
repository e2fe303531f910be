import subprocess
import sys

import pytest

from mgmra.cli import read_config_file, run
from mgmra.trainer import Checkpoint


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(
        "# tiny world for fast runs\n"
        "num_train_ids = 6\nnum_test_ids = 3\nsamples_per_id_per_modality = 3\n"
        "input_dim = 6   # trailing comment\nnum_stripes = 2\n"
        "hidden_dim = 5\nfeature_dim = 4\nparts_per = 2\ninstances_per = 2\n"
        "P = 3\nK = 2\nbatches_per_epoch = 2\nepochs = 2\neval_seeds = 2\n"
    )
    return path


def test_synth_twice_identical(tmp_path, small_cfg):
    for name in ("a", "b"):
        assert run(["synth", "--config", str(small_cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for split in ("train", "query", "gallery"):
        assert (tmp_path / "a" / f"{split}.mgmr").read_bytes() == (tmp_path / "b" / f"{split}.mgmr").read_bytes()


def test_train_eval_export_pipeline(tmp_path, small_cfg):
    cfg = ["--config", str(small_cfg)]
    assert run(["synth", *cfg, "--out", str(tmp_path / "d")]) == 0
    assert run(["train", *cfg, "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "t")]) == 0
    ckpt = tmp_path / "t" / "model.ckpt"
    assert (tmp_path / "t" / "loss.csv").read_text().startswith("epoch,id,hc_tri")
    for mode in ("main", "proto"):
        out = tmp_path / mode
        args = ["eval", *cfg, "--dataset", str(tmp_path / "d"), "--checkpoint", str(ckpt), "--mode", mode]
        assert run([*args, "--out", str(out), "--dump-rankings"]) == 0
        assert (out / "metrics.csv").read_text().splitlines()[-1].startswith("mAP,")
        assert (out / "metrics.rankings.csv").exists()
    assert run(["export-memory", "--checkpoint", str(ckpt), "--out", str(tmp_path / "x")]) == 0
    bank = Checkpoint.load(tmp_path / "x" / "memory.ckpt")
    assert bank.tensors["level.part"].shape == (2 * 6 * 2 * 2, 4)
    assert bank.tensors["level.instance"].shape == (2 * 6 * 2, 4)
    assert bank.tensors["level.semantic"].shape == (6, 4)


def test_resolved_config_reproduces_run(tmp_path, small_cfg):
    assert run(["synth", "--config", str(small_cfg), "--out", str(tmp_path / "d")]) == 0
    first = tmp_path / "t1"
    assert run(["train", "--config", str(small_cfg), "--dataset", str(tmp_path / "d"), "--lr", "0.02",
                "--out", str(first)]) == 0
    resolved = read_config_file(first / "config.resolved")
    assert resolved["lr"] == 0.02 and resolved["epochs"] == 2
    second = tmp_path / "t2"
    assert run(["train", "--config", str(first / "config.resolved"), "--out", str(second)]) == 0
    a, b = Checkpoint.load(first / "model.ckpt"), Checkpoint.load(second / "model.ckpt")
    assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)
    assert (first / "loss.csv").read_bytes() == (second / "loss.csv").read_bytes()


def test_flags_override_config(tmp_path, small_cfg):
    out = tmp_path / "o"
    assert run(["synth", "--config", str(small_cfg), "--margin", "0.5", "--mgmra", "off", "--proto-p", "3",
                "--out", str(out)]) == 0
    resolved = read_config_file(out / "config.resolved")
    assert resolved["margin_tri"] == resolved["margin_sem"] == 0.5
    assert resolved["mgmra_enabled"] is False and resolved["parts_per"] == 3


def test_gradcheck_passes(tmp_path, capsys):
    assert run(["gradcheck", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "mg_mra_forward" in text


def test_ablate_table_format(tmp_path, small_cfg):
    assert run(["ablate", "--config", str(small_cfg), "--seeds", "2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "seed,rank1_base,rank1_mgmra,map_base,map_mgmra"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]


def test_exit_codes(tmp_path, small_cfg):
    assert run(["nonsense"]) == 2
    assert run(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert run(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 4
    bad.write_text("lr = fast\n")
    assert run(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 4
    junk = tmp_path / "junk.mgmr"
    junk.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    assert run(["train", "--dataset", str(junk), "--out", str(tmp_path)]) == 5
    assert run(["train", "--out", str(tmp_path)]) == 7
    assert run(["synth", "--config", str(small_cfg), "--out", str(tmp_path / "d")]) == 0
    assert run(["train", "--config", str(small_cfg), "--dataset", str(tmp_path / "d"), "--mgmra", "off",
                "--out", str(tmp_path / "t")]) == 0
    assert run(["export-memory", "--checkpoint", str(tmp_path / "t" / "model.ckpt"), "--out", str(tmp_path)]) == 7


def test_bad_log_level(tmp_path, monkeypatch):
    monkeypatch.setenv("MGMRA_LOG_LEVEL", "loud")
    assert run(["synth", "--out", str(tmp_path)]) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mgmra", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "export-memory" in proc.stdout
