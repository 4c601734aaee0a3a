"""CLI and pipeline: config validation, stage gating, caching, exit codes."""

import json
import os

import numpy as np
import pytest

from cexforge.cli import main
from cexforge.pipeline import (ConfigError, Run, config_from_dict, load_config,
                               stage_hashes)


def micro_config(out_dir, **overrides):
    cfg = {
        "seed": 5,
        "dataset": {"input_shape": [3], "eps": 0.1, "n": 2},
        "arch": {"name": "mlp_4hidden"},
        "train": {"epochs": 3, "attack_steps": 3, "attack_restarts": 2,
                  "window": 2},
        "eval": {"restarts": 2, "steps": 10},
        "campaign": {"adapters": [{"name": "reference", "max_domains": 20}],
                     "timeout": 5.0, "parallelism": 1},
        "out_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


class TestConfigValidation:
    def test_unknown_keys_enumerated_together(self):
        with pytest.raises(ConfigError) as ei:
            config_from_dict({"seed": 1, "dataset": {"input_shape": [2],
                                                     "eps": 0.1, "bogus": 1},
                              "arch": {"name": "mlp_4hidden", "zzz": 2},
                              "wrong_top": True})
        msg = str(ei.value)
        assert "bogus" in msg and "zzz" in msg and "wrong_top" in msg

    def test_missing_required_fields_enumerated(self):
        with pytest.raises(ConfigError) as ei:
            config_from_dict({"arch": {"name": "nope"}})
        msg = str(ei.value)
        assert "missing input_shape" in msg and "missing eps" in msg
        assert "name must be one of" in msg

    def test_fast_preset_overrides(self):
        cfg = config_from_dict({"dataset": {"input_shape": [1, 5, 5],
                                            "eps": 0.2},
                                "arch": {"name": "cnn_1conv"}}, fast=True)
        assert cfg.train.epochs == 1000
        assert cfg.train.attack_steps == 30
        assert cfg.train.attack_restarts == 30
        assert cfg.eval.restarts == 100
        assert cfg.eval.steps == 500

    def test_seed_override_flows_into_subconfigs(self):
        cfg = config_from_dict({"dataset": {"input_shape": [4], "eps": 0.1},
                                "arch": {"name": "mlp_4hidden"}},
                               seed_override=42)
        assert cfg.seed == 42
        assert cfg.dataset.seed == 42
        assert cfg.train.seed == 42

    def test_stage_hashes_cascade(self):
        base = {"dataset": {"input_shape": [4], "eps": 0.1},
                "arch": {"name": "mlp_4hidden"}}
        h1 = stage_hashes(config_from_dict(base))
        h2 = stage_hashes(config_from_dict(
            {**base, "train": {"epochs": 7}}))
        assert h1["gen"] == h2["gen"]
        assert h1["train"] != h2["train"]
        assert h1["campaign"] != h2["campaign"]
        h3 = stage_hashes(config_from_dict(
            {**base, "campaign": {"timeout": 9.0}}))
        assert h3["train"] == h1["train"]
        assert h3["campaign"] != h1["campaign"]


class TestCliFlow:
    def test_usage_error_on_bad_config(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, {"arch": {"name": "x"}})
        assert main(["gen", "--config", cfgp]) == 1
        assert "invalid configuration" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert main(["gen", "--config", "/nope/cfg.json"]) == 1

    def test_stage_gating_names_missing_stage(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, micro_config(tmp_path / "run"))
        rc = main(["campaign", "--config", cfgp])
        assert rc == 2
        assert "run stage 'gen' first" in capsys.readouterr().err

    def test_full_pipeline_and_caching(self, tmp_path, capsys):
        out = tmp_path / "run"
        cfgp = write_config(tmp_path, micro_config(out))
        assert main(["all", "--config", cfgp]) == 0
        capsys.readouterr()
        report1 = (out / "report.json").read_bytes()
        stamp1 = json.loads((out / "train.stamp.json").read_text())

        # identical rerun reuses every stage and reproduces the report
        assert main(["all", "--config", cfgp]) == 0
        assert (out / "report.json").read_bytes() == report1
        stamp2 = json.loads((out / "train.stamp.json").read_text())
        assert stamp1["completed_utc"] == stamp2["completed_utc"]  # cached

    def test_stagewise_progression(self, tmp_path):
        out = tmp_path / "run2"
        cfgp = write_config(tmp_path, micro_config(out))
        for stage in ("gen", "train", "filter", "export", "campaign"):
            assert main([stage, "--config", cfgp]) in (0, 3)
        assert (out / "export" / "public.manifest").exists()

    def test_force_recomputes(self, tmp_path):
        out = tmp_path / "run3"
        cfgp = write_config(tmp_path, micro_config(out))
        assert main(["gen", "--config", cfgp]) == 0
        s1 = json.loads((out / "gen.stamp.json").read_text())
        assert main(["gen", "--config", cfgp, "--force"]) == 0
        s2 = json.loads((out / "gen.stamp.json").read_text())
        assert s1["hash"] == s2["hash"]

    def test_config_change_invalidates_downstream(self, tmp_path):
        out = tmp_path / "run4"
        base = micro_config(out)
        cfgp = write_config(tmp_path, base)
        assert main(["gen", "--config", cfgp]) == 0
        assert main(["train", "--config", cfgp]) == 0
        # change the training epochs: gen stays fresh, train is stale
        base["train"]["epochs"] = 4
        cfgp2 = write_config(tmp_path, base)
        cfg = load_config(cfgp2)
        run = Run(cfg)
        run.require_artifact("gen")  # still fresh
        from cexforge.pipeline import StageError
        with pytest.raises(StageError):
            run.require_artifact("train")

    def test_byte_identical_reports_across_fresh_runs(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            cfgp = write_config(tmp_path, micro_config(out))
            assert main(["all", "--config", cfgp, "--force"]) == 0
            outs.append((out / "report.json").read_bytes())
        assert outs[0] == outs[1]


class TestArtifactHashEmbedding:
    def test_artifacts_embed_config_hash(self, tmp_path):
        out = tmp_path / "run5"
        cfgp = write_config(tmp_path, micro_config(out))
        assert main(["export", "--config", cfgp]) in (0,) \
            or all(main([s, "--config", cfgp]) == 0
                   for s in ("gen", "train", "filter", "export"))
        cfg = load_config(cfgp)
        hashes = stage_hashes(cfg)
        bench = json.loads((out / "benchset.json").read_text())
        assert bench["provenance"]["config_hash"] == hashes["filter"]
        pub = (out / "export" / "public.manifest").read_text().split("\n", 1)[1]
        assert json.loads(pub)["provenance_hash"] == hashes["filter"]
