import json
import os
import struct

import numpy as np
import pytest

from rbmprune import cli
from rbmprune.persist import load_checkpoint


def run_main(argv):
    return cli.main(argv)


def write_tiny_idx(path, count=40, side=4, seed=0):
    g = np.random.default_rng(seed)
    imgs = g.integers(0, 256, size=(count, side * side), dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, count, side, side))
        f.write(imgs.tobytes())
    return path


class TestConfigPrecedence:
    def test_defaults(self):
        cfg = cli._resolve_config(make_args(command="train"))
        assert cfg.data == "bas:3"
        assert cfg.lr == 1e-2
        assert cfg.batch == 100   # train-side default for bars-and-stripes

    def test_prune_dataset_defaults(self):
        cfg = cli._resolve_config(make_args(command="prune"))
        assert cfg.batch == 1000
        assert cfg.a == 3.0

    def test_idx_dataset_defaults(self, tmp_path):
        cfg = cli._resolve_config(make_args(command="train", data="idx:whatever"))
        assert cfg.batch == 1000
        assert cfg.pcd == 1
        assert cfg.a == 1.0

    def test_json_config_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"hidden": 7, "seed": 5}))
        cfg = cli._resolve_config(make_args(command="train", config=str(path)))
        assert cfg.hidden == 7
        assert cfg.seed == 5

    def test_toml_config_file(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('hidden = 9\ndata = "bas:2"\n')
        cfg = cli._resolve_config(make_args(command="train", config=str(path)))
        assert cfg.hidden == 9
        assert cfg.data == "bas:2"

    def test_env_overrides_file(self, tmp_path, monkeypatch):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"hidden": 7}))
        monkeypatch.setenv("RBMPRUNE_HIDDEN", "11")
        cfg = cli._resolve_config(make_args(command="train", config=str(path)))
        assert cfg.hidden == 11

    def test_flag_overrides_env(self, monkeypatch):
        monkeypatch.setenv("RBMPRUNE_HIDDEN", "11")
        cfg = cli._resolve_config(make_args(command="train", hidden=13))
        assert cfg.hidden == 13

    def test_env_overrides_dataset_default(self, monkeypatch):
        monkeypatch.setenv("RBMPRUNE_BATCH", "77")
        cfg = cli._resolve_config(make_args(command="train"))
        assert cfg.batch == 77

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"nope": 1}))
        with pytest.raises(ValueError, match="unknown config key"):
            cli._resolve_config(make_args(command="train", config=str(path)))

    def test_config_hash_stable(self):
        a = cli.RunConfig(seed=1)
        b = cli.RunConfig(seed=1)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != cli.RunConfig(seed=2).config_hash()


def make_args(**overrides):
    class Args:
        pass
    args = Args()
    args.command = overrides.pop("command", "train")
    for key in cli.RunConfig().__dict__:
        setattr(args, key, None)
    args.config = None
    for key, val in overrides.items():
        setattr(args, key, val)
    return args


class TestGenBas:
    def test_writes_samples_and_distribution(self, tmp_path):
        code = run_main(["gen-bas", "--side", "2", "--count", "50",
                         "--out", str(tmp_path), "--seed", "1"])
        assert code == 0
        from rbmprune.data import load_idx
        ds = load_idx(tmp_path / "bas2_samples.idx")
        assert len(ds) == 50
        dist = json.loads((tmp_path / "bas2_distribution.json").read_text())
        assert abs(sum(dist["probabilities"].values()) - 1.0) < 1e-12


class TestPipelines:
    def run_train(self, out, steps=60, hidden=6, seed=3):
        return run_main([
            "train", "--data", "bas:2", "--hidden", str(hidden), "--steps", str(steps),
            "--batch", "30", "--eval-every", "30", "--seed", str(seed), "--out", str(out),
        ])

    def test_train_outputs(self, tmp_path):
        assert self.run_train(tmp_path) == 0
        lines = [json.loads(l) for l in
                 (tmp_path / "train_metrics.jsonl").read_text().splitlines()]
        assert lines[0]["phase"] == "train" and "config" in lines[0]
        assert any("exact_kld" in l for l in lines[1:])
        ckpt = load_checkpoint(tmp_path / "train_checkpoint.rbmp")
        assert ckpt.weights.shape == (4, 6)
        assert ckpt.meta["phase"] == "train"

    def test_prune_and_eval(self, tmp_path):
        self.run_train(tmp_path)
        code = run_main([
            "prune", str(tmp_path / "train_checkpoint.rbmp"), "--data", "bas:2",
            "--steps", "40", "--batch", "30", "--temper-steps", "3",
            "--eval-every", "20", "--seed", "3", "--out", str(tmp_path / "p"),
        ])
        assert code == 0
        ckpt = load_checkpoint(tmp_path / "p" / "prune_checkpoint.rbmp")
        assert ckpt.meta["phase"] == "prune"
        assert len(ckpt.meta["unit_ids"]) == ckpt.hidden_bias.shape[0]
        trace = (tmp_path / "p" / "prune_trace.jsonl").read_text().splitlines()
        assert len(trace) >= 1
        assert run_main(["eval", str(tmp_path / "p" / "prune_checkpoint.rbmp"),
                         "--data", "bas:2", "--mode", "exact"]) == 0
        assert run_main(["eval", str(tmp_path / "p" / "prune_checkpoint.rbmp"),
                         "--data", "bas:2", "--mode", "recon", "--batch", "16"]) == 0
        assert run_main(["eval", str(tmp_path / "p" / "prune_checkpoint.rbmp"),
                         "--data", "bas:2", "--mode", "ais",
                         "--ais-samples", "10", "--ais-intervals", "50"]) == 0

    def test_train_on_idx_dataset(self, tmp_path):
        idx = write_tiny_idx(tmp_path / "imgs.idx")
        code = run_main([
            "train", "--data", f"idx:{idx}", "--hidden", "4", "--steps", "30",
            "--batch", "16", "--eval-every", "0", "--seed", "1",
            "--out", str(tmp_path / "t"),
        ])
        assert code == 0


class TestExitCodes:
    def test_unknown_dataset_is_usage_error(self, tmp_path):
        assert run_main(["train", "--data", "nope:3", "--steps", "1",
                         "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        assert run_main(["prune", str(tmp_path / "absent.rbmp"),
                         "--steps", "1", "--out", str(tmp_path)]) == cli.EXIT_DATA

    def test_corrupt_idx_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.idx"
        bad.write_bytes(b"\x00\x00\x08\x03" + b"\x00" * 3)
        assert run_main(["train", "--data", f"idx:{bad}", "--steps", "1",
                         "--out", str(tmp_path)]) == cli.EXIT_DATA

    def test_bad_flag_value_is_usage_error(self, tmp_path):
        assert run_main(["train", "--data", "bas:2", "--lr", "-1", "--steps", "1",
                         "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        def boom(cfg):
            raise cli.NumericalFailure("non-finite model parameter")
        monkeypatch.setattr(cli, "train_run", boom)
        assert run_main(["train", "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL

    def test_guard_finite_detects_blowup(self):
        from rbmprune import RbmParams
        p = RbmParams.zeros(2, 1)
        object.__setattr__(p, "visible_bias", np.array([np.inf, 0.0]))
        with pytest.raises(cli.NumericalFailure):
            cli._guard_finite(p)

    def test_run_guarded_translates_non_finite(self):
        def raiser():
            raise ValueError("non-finite gradient")
        with pytest.raises(cli.NumericalFailure):
            cli._run_guarded(raiser)
        with pytest.raises(ValueError):
            cli._run_guarded(lambda: (_ for _ in ()).throw(ValueError("other")))


class TestResume:
    def test_resume_requires_prune_checkpoint(self, tmp_path):
        TestPipelines().run_train(tmp_path, steps=20)
        code = run_main([
            "prune", str(tmp_path / "train_checkpoint.rbmp"), "--data", "bas:2",
            "--steps", "5", "--batch", "20", "--temper-steps", "2",
            "--out", str(tmp_path), "--resume",
        ])
        assert code == cli.EXIT_DATA
