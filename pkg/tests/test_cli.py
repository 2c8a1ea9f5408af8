import json
import os

import numpy as np
import pytest

from satbench import Image, save_image
from satbench.cli import (
    build_attacks,
    build_defense,
    config_hash,
    load_config,
    main,
    parse_config_text,
)
from satbench.errors import ConfigError
from satbench.model import save_checkpoint


BASE_CONFIG = """
# desk-scale run
dataset_kind = synth
synth_n = 96
synth_side = 16
synth_channels = 3
synth_classes = 4
train_epochs = 6
train_batch = 16
train_lr = 0.05
eval_samples = 10
seed = 3
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(BASE_CONFIG + extra)
    return str(path)


class TestConfigParsing:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("no_such_key = 1")

    def test_comments_and_blanks_ignored(self):
        raw = parse_config_text("# comment\n\nseed = 5  # trailing\n")
        assert raw == {"seed": "5"}

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("seed 5")

    def test_overrides_beat_file(self, tmp_path):
        path = write_config(tmp_path)
        config = load_config(path, ["seed=99"])
        assert config.seed == 99

    def test_bad_value_type(self, tmp_path):
        path = write_config(tmp_path)
        with pytest.raises(ConfigError):
            load_config(path, ["seed=notanumber"])

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/run.cfg", [])

    def test_hash_ignores_output_dir(self, tmp_path):
        path = write_config(tmp_path)
        a = load_config(path, ["output_dir=outA"])
        b = load_config(path, ["output_dir=outB"])
        assert config_hash(a) == config_hash(b)
        c = load_config(path, ["seed=123"])
        assert config_hash(a) != config_hash(c)


class TestBuilders:
    def test_defense_variants(self, tmp_path):
        path = write_config(tmp_path)
        assert build_defense(load_config(path, ["defense=identity"])).__class__.__name__ == "Identity"
        sat = build_defense(load_config(path, ["defense=sat", "sat_t=0.2"]))
        assert sat.params.t == 0.2
        bd = build_defense(load_config(path, ["defense=bitdepth", "bitdepth_bits=3"]))
        assert bd.bits == 3
        with pytest.raises(ConfigError):
            build_defense(load_config(path, ["defense=wavelets"]))
        with pytest.raises(ConfigError):
            build_defense(load_config(path, ["defense=sat", "sat_t=2.0"]))

    def test_attack_list(self, tmp_path):
        path = write_config(tmp_path)
        configs = build_attacks(load_config(path, ["attack=ifgsm,cw"]))
        assert [c.family for c in configs] == ["ifgsm", "cw"]
        assert build_attacks(load_config(path, ["attack=none"])) == []
        with pytest.raises(ConfigError):
            build_attacks(load_config(path, ["attack=none,cw"]))
        with pytest.raises(ConfigError):
            build_attacks(load_config(path, ["attack=jsma"]))


class TestTrainCommand:
    def test_train_writes_checkpoint_log_manifest(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = write_config(tmp_path, f"output_dir = {out}\n")
        assert main(["train", "-c", path]) == 0
        assert (out / "model.ckpt").exists()
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,loss,acc"
        assert len(log) == 7  # header + 6 epochs
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 3
        printed = capsys.readouterr().out
        assert "epoch 0" in printed

    def test_missing_dataset_exits_2_without_outputs(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(
            tmp_path,
            f"output_dir = {out}\ndataset_kind = cifar10\ndataset_path = {tmp_path}/nope.bin\n",
        )
        assert main(["train", "-c", path]) == 2
        assert not out.exists() or not (out / "model.ckpt").exists()

    def test_same_seed_identical_checkpoints(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            path = write_config(tmp_path, f"output_dir = {out}\n")
            assert main(["train", "-c", path]) == 0
            outs.append((out / "model.ckpt").read_bytes())
        assert outs[0] == outs[1]

    def test_divergence_exits_3(self, tmp_path):
        out = tmp_path / "div"
        path = write_config(tmp_path, f"output_dir = {out}\ntrain_lr = 1e30\ntrain_epochs = 2\n")
        assert main(["train", "-c", path]) == 3
        assert not (out / "model.ckpt").exists()

    def test_reloaded_checkpoint_reproduces_logged_accuracy(self, tmp_path):
        from satbench import load_checkpoint, synth_dataset
        from satbench.model import accuracy

        out = tmp_path / "out"
        path = write_config(tmp_path, f"output_dir = {out}\n")
        assert main(["train", "-c", path]) == 0
        logged = float((out / "train_log.csv").read_text().splitlines()[-1].split(",")[2])
        model = load_checkpoint(str(out / "model.ckpt"))
        ds = synth_dataset(seed=3, n=96, side=16, channels=3, num_classes=4)
        assert accuracy(model, ds) == pytest.approx(logged, abs=1e-9)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One trained checkpoint shared by the evaluate/sweep/attack CLI tests."""
    root = tmp_path_factory.mktemp("cli_run")
    out = root / "train_out"
    cfg = root / "run.cfg"
    cfg.write_text(BASE_CONFIG + f"output_dir = {out}\n")
    assert main(["train", "-c", str(cfg)]) == 0
    return root, out / "model.ckpt"


class TestEvaluateCommand:
    def test_clean_identity_single_row(self, trained_run, tmp_path):
        root, ckpt = trained_run
        out = tmp_path / "ev"
        cfg = root / "run.cfg"
        code = main(
            ["evaluate", "-c", str(cfg), "--set", f"checkpoint={ckpt}",
             "--set", f"output_dir={out}"]
        )
        assert code == 0
        lines = (out / "eval.csv").read_text().splitlines()
        assert lines[0] == "defense,attack,acc,asr"
        assert lines[1] == "identity,none,1,0"
        assert len(lines) == 2

    def test_bpda_rounds_csv_row_count(self, trained_run, tmp_path):
        root, ckpt = trained_run
        out = tmp_path / "ev"
        code = main(
            ["evaluate", "-c", str(root / "run.cfg"),
             "--set", f"checkpoint={ckpt}", "--set", f"output_dir={out}",
             "--set", "attack=bpda", "--set", "attack_rounds=5",
             "--set", "eval_samples=6"]
        )
        assert code == 0
        lines = (out / "bpda_rounds.csv").read_text().splitlines()
        assert lines[0] == "round,acc,asr"
        assert len(lines) == 6  # header + one row per round

    def test_replay_byte_identical(self, trained_run, tmp_path):
        root, ckpt = trained_run
        texts = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = main(
                ["evaluate", "-c", str(root / "run.cfg"),
                 "--set", f"checkpoint={ckpt}", "--set", f"output_dir={out}",
                 "--set", "defense=sat", "--set", "attack=ifgsm",
                 "--set", "eval_samples=8"]
            )
            assert code == 0
            texts.append(
                ((out / "eval.csv").read_bytes(), (out / "manifest.json").read_bytes())
            )
        assert texts[0] == texts[1]

    def test_missing_checkpoint_exits_2(self, trained_run, tmp_path):
        root, _ = trained_run
        code = main(
            ["evaluate", "-c", str(root / "run.cfg"),
             "--set", f"checkpoint={tmp_path}/none.ckpt",
             "--set", f"output_dir={tmp_path}/x"]
        )
        assert code == 2

    def test_corrupt_checkpoint_exits_2(self, trained_run, tmp_path):
        root, ckpt = trained_run
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"JUNKJUNK" + bytes(40))
        code = main(
            ["evaluate", "-c", str(root / "run.cfg"),
             "--set", f"checkpoint={bad}", "--set", f"output_dir={tmp_path}/y"]
        )
        assert code == 2


class TestSweepCommand:
    def test_default_grid_row_count_and_pareto_floor(self, trained_run, tmp_path):
        root, ckpt = trained_run
        out = tmp_path / "sw"
        code = main(
            ["sweep", "-c", str(root / "run.cfg"),
             "--set", f"checkpoint={ckpt}", "--set", f"output_dir={out}",
             "--set", "eval_samples=4", "--set", "sweep_acc_floor=0.5"]
        )
        assert code == 0
        rows = (out / "sweep.csv").read_text().splitlines()
        assert len(rows) == 1 + 125
        pareto = (out / "pareto.csv").read_text().splitlines()[1:]
        for line in pareto:
            assert float(line.split(",")[3]) >= 0.5

    def test_full_grid_emits_1331_rows(self, trained_run, tmp_path):
        root, ckpt = trained_run
        out = tmp_path / "swf"
        code = main(
            ["sweep", "-c", str(root / "run.cfg"), "--full-grid",
             "--set", f"checkpoint={ckpt}", "--set", f"output_dir={out}",
             "--set", "eval_samples=2"]
        )
        assert code == 0
        rows = (out / "sweep.csv").read_text().splitlines()
        assert len(rows) == 1 + 1331


class TestMetricsCommand:
    def test_same_file_twice(self, tmp_path, capsys):
        img = Image(np.random.default_rng(0).uniform(0, 1, (8, 8, 3)))
        p = tmp_path / "a.img"
        save_image(img, str(p))
        assert main(["metrics", str(p), str(p)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("l2 0.000000")
        assert out[1].startswith("ssim 1.000000")
        assert out[2] == "psnr inf"
        assert out[3].startswith("mse 0.000000")

    def test_dimension_mismatch_exits_2(self, tmp_path):
        a = tmp_path / "a.img"
        b = tmp_path / "b.img"
        save_image(Image(np.zeros((4, 4, 1))), str(a))
        save_image(Image(np.zeros((5, 4, 1))), str(b))
        assert main(["metrics", str(a), str(b)]) == 2

    def test_known_pair_values(self, tmp_path, capsys):
        a = tmp_path / "a.img"
        b = tmp_path / "b.img"
        save_image(Image(np.zeros((2, 2, 3))), str(a))
        save_image(Image(np.ones((2, 2, 3))), str(b))
        assert main(["metrics", str(a), str(b)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == f"l2 {255 * np.sqrt(12) / 12:.6f}"
        assert out[2] == "psnr 0.000000"

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["metrics", str(tmp_path / "x.img"), str(tmp_path / "y.img")]) == 2


class TestAttackCommand:
    def test_emits_ae_files_and_index(self, trained_run, tmp_path):
        root, ckpt = trained_run
        out = tmp_path / "aes"
        code = main(
            ["attack", "-c", str(root / "run.cfg"),
             "--set", f"checkpoint={ckpt}", "--set", f"output_dir={out}",
             "--set", "attack=fgsm", "--set", "attack_steps=1",
             "--set", "eval_samples=5"]
        )
        assert code == 0
        index = (out / "index.csv").read_text().splitlines()
        assert index[0] == "sample,true_label,target_label,success,file"
        assert len(index) == 6
        from satbench import load_image

        img = load_image(str(out / "ae_00000.img"))
        assert img.data.shape == (16, 16, 3)

    def test_requires_single_attack(self, trained_run, tmp_path):
        root, ckpt = trained_run
        code = main(
            ["attack", "-c", str(root / "run.cfg"),
             "--set", f"checkpoint={ckpt}", "--set", f"output_dir={tmp_path}/z",
             "--set", "attack=none"]
        )
        assert code == 2


class TestEnvDefaultConfig:
    def test_env_var_used_when_no_flag(self, tmp_path, monkeypatch, capsys):
        img = Image(np.zeros((2, 2, 1)))
        p = tmp_path / "i.img"
        save_image(img, str(p))
        cfg = write_config(tmp_path)
        monkeypatch.setenv("SATBENCH_CONFIG", cfg)
        # metrics takes no config; use train to prove env pickup
        out = tmp_path / "envout"
        monkeypatch.setenv("SATBENCH_CONFIG", cfg)
        code = main(["train", "--set", f"output_dir={out}"])
        assert code == 0
        assert (out / "model.ckpt").exists()
