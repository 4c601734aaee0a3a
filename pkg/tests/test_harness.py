"""Campaign harness: soundness checks, adapter protocol, report rendering."""

import json
import os
import stat

import numpy as np
import pytest

from cexforge.datagen import Counterexample, DataGenConfig, Instance, gen_dataset
from cexforge.evaluation import BenchmarkSet
from cexforge.harness import (Finding, check_soundness, parse_result_line,
                              render_report, report_to_dict, run_campaign,
                              validate_cex)
from cexforge.manifest import ManifestError, write_manifest
from cexforge.network import forward, predict
from cexforge.pipeline import AdapterConfig
from cexforge.refverify import Verdict
from cexforge.zoo import build_arch, init_params


@pytest.fixture(scope="module")
def bench_paths(tmp_path_factory):
    """A small benchmark with at least one live planted counterexample."""
    tmp = tmp_path_factory.mktemp("bench")
    for seed in range(60):
        cfg = DataGenConfig(input_shape=(4,), eps=0.25, n=3, seed=seed)
        ds = gen_dataset(cfg)
        model = init_params(build_arch("mlp_4hidden", (4,)), seed)
        kept = [i for i in ds.unverifiable
                if predict(model, i.x_cex) == i.cex.target]
        if kept:
            bench = BenchmarkSet(model=model, kept_unverifiable=kept,
                                 regular=ds.regular,
                                 provenance={"config_hash": "feedbeef"})
            pub, sec = tmp / "public.manifest", tmp / "secret.manifest"
            write_manifest(bench, pub, sec, shuffle_seed=0)
            return str(pub), str(sec), bench
    raise AssertionError("no seed yielded a live planted instance")


def write_mock_adapter(path, body):
    path.write_text("#!/bin/sh\n" + body + "\n")
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


class TestValidateCex:
    def _setup(self):
        cfg = DataGenConfig(input_shape=(3,), eps=0.3, n=2, seed=5)
        ds = gen_dataset(cfg)
        model = init_params(build_arch("mlp_4hidden", (3,)), 1)
        return model, ds

    def test_point_outside_ball_rejected_regardless_of_margin(self):
        model, ds = self._setup()
        inst = ds.regular[0]
        x = inst.x0 + 0.3 + 1e-3
        assert not validate_cex(model, x, inst)

    def test_correct_clean_point_is_not_a_counterexample(self):
        model, ds = self._setup()
        for inst in ds.instances:
            if predict(model, inst.x0) == inst.y:
                assert not validate_cex(model, inst.x0, inst)
                return
        pytest.skip("random model never correct here")

    def test_misclassified_in_ball_accepted(self):
        model, ds = self._setup()
        for inst in ds.instances:
            if predict(model, inst.x0) not in (inst.y, -1):
                assert validate_cex(model, inst.x0, inst)
                return
        pytest.skip("random model never wrong here")


class TestCheckSoundness:
    def _live_instance(self):
        for seed in range(60):
            cfg = DataGenConfig(input_shape=(4,), eps=0.25, n=2, seed=seed)
            ds = gen_dataset(cfg)
            model = init_params(build_arch("mlp_4hidden", (4,)), seed)
            for inst in ds.unverifiable:
                if predict(model, inst.x_cex) == inst.cex.target:
                    return model, inst
        raise AssertionError("unlucky sweep")

    def test_verified_on_planted_instance_is_a_finding(self):
        model, inst = self._live_instance()
        f = check_soundness(Verdict("verified"), inst, model, "v")
        assert isinstance(f, Finding)
        assert f.claim == "verified"

    def test_falsified_with_bogus_witness_is_a_finding(self):
        model, inst = self._live_instance()
        far = inst.x0 + 10.0
        f = check_soundness(Verdict("falsified", witness=far), inst, model, "v")
        assert isinstance(f, Finding)
        assert "witness" in f.ground_truth

    def test_falsified_with_valid_witness_is_clean(self):
        model, inst = self._live_instance()
        f = check_soundness(Verdict("falsified", witness=inst.x_cex.ravel()),
                            inst, model, "v")
        assert f is None

    def test_unknown_is_never_a_finding(self):
        model, inst = self._live_instance()
        assert check_soundness(Verdict("unknown"), inst, model, "v") is None
        assert check_soundness(Verdict("error"), inst, model, "v") is None

    def test_verified_on_regular_is_not_a_finding(self):
        cfg = DataGenConfig(input_shape=(4,), eps=0.25, n=2, seed=1)
        ds = gen_dataset(cfg)
        model = init_params(build_arch("mlp_4hidden", (4,)), 1)
        f = check_soundness(Verdict("verified"), ds.regular[0], model, "v")
        assert f is None


class TestResultGrammar:
    def test_verified(self):
        assert parse_result_line("some log\nverified\n", 4).status == "verified"

    def test_falsified_with_witness(self):
        v = parse_result_line("falsified 0.1 0.2 0.3 0.4", 4)
        assert v.status == "falsified"
        assert np.allclose(v.witness, [0.1, 0.2, 0.3, 0.4])

    def test_witness_dimension_mismatch_is_error(self):
        v = parse_result_line("falsified 0.1 0.2", 4)
        assert v.status == "error"

    def test_unknown_and_error(self):
        assert parse_result_line("unknown", 4).status == "unknown"
        v = parse_result_line("error solver exploded", 4)
        assert v.status == "error"
        assert "exploded" in v.stats["message"]

    def test_garbage_is_error_not_verified(self):
        assert parse_result_line("VERIFIED!!!", 4).status == "error"
        assert parse_result_line("", 4).status == "error"


class TestCampaign:
    def test_always_verified_adapter_flagged_on_every_planted_instance(
            self, bench_paths, tmp_path):
        pub, sec, bench = bench_paths
        lie = write_mock_adapter(tmp_path / "lie.sh", 'echo "verified"')
        rep = run_campaign(pub, sec, [AdapterConfig(
            name="liar", kind="external", command=(lie, "{model}", "{property}"))],
            timeout=10.0)
        n_unv = len(bench.kept_unverifiable)
        assert len(rep.findings) == n_unv
        data = report_to_dict(rep)
        assert data["tables"]["verified_unverifiable_pct"]["liar"] == 100.0

    def test_bug_free_reference_has_no_findings(self, bench_paths):
        pub, sec, bench = bench_paths
        rep = run_campaign(pub, sec, [AdapterConfig(
            name="reference", kind="reference", max_domains=50)], timeout=30.0)
        assert rep.findings == []

    def test_crashing_adapter_isolated(self, bench_paths, tmp_path):
        pub, sec, bench = bench_paths
        crash = write_mock_adapter(tmp_path / "crash.sh", "exit 7")
        rep = run_campaign(pub, sec, [AdapterConfig(
            name="crash", kind="external", command=(crash,))], timeout=5.0)
        assert all(v == "error" for v in rep.verdicts["crash"].values())
        assert rep.findings == []

    def test_missing_binary_marks_adapter_unavailable(self, bench_paths):
        pub, sec, bench = bench_paths
        rep = run_campaign(pub, sec, [AdapterConfig(
            name="ghost", kind="external",
            command=("/nonexistent/verifier", "{model}"))], timeout=5.0)
        assert rep.adapters["ghost"]["available"] is False
        assert all(v == "error" for v in rep.verdicts["ghost"].values())

    def test_deterministic_reports(self, bench_paths):
        pub, sec, bench = bench_paths
        adapters = [AdapterConfig(name="reference", max_domains=40)]
        r1 = run_campaign(pub, sec, adapters, timeout=30.0, seed=9)
        r2 = run_campaign(pub, sec, adapters, timeout=30.0, seed=9)
        assert json.dumps(report_to_dict(r1), sort_keys=True) == \
            json.dumps(report_to_dict(r2), sort_keys=True)

    def test_hash_gate(self, bench_paths):
        pub, sec, bench = bench_paths
        with pytest.raises(ManifestError, match="mixed-hash"):
            run_campaign(pub, sec, [AdapterConfig(name="reference")],
                         expect_hash="0000000000000000")

    def test_parallel_equals_serial(self, bench_paths, tmp_path):
        pub, sec, bench = bench_paths
        ok = write_mock_adapter(tmp_path / "u.sh", 'echo "unknown"')
        adapters = [AdapterConfig(name="u", kind="external", command=(ok,)),
                    AdapterConfig(name="reference", max_domains=30)]
        r1 = run_campaign(pub, sec, adapters, timeout=20.0, parallelism=1)
        r2 = run_campaign(pub, sec, adapters, timeout=20.0, parallelism=4)
        assert report_to_dict(r1)["tables"] == report_to_dict(r2)["tables"]


class TestRendering:
    def test_text_numbers_equal_machine_numbers(self, bench_paths, tmp_path):
        pub, sec, bench = bench_paths
        lie = write_mock_adapter(tmp_path / "lie2.sh", 'echo "verified"')
        rep = run_campaign(pub, sec, [AdapterConfig(
            name="liar", kind="external", command=(lie,))], timeout=5.0)
        text = render_report(rep)
        data = report_to_dict(rep)
        for key in ("verified_unverifiable_pct", "verified_regular_pct"):
            val = data["tables"][key]["liar"]
            assert f"{val:g}" in text

    def test_single_finding_percentage(self):
        # one finding out of 10 planted instances renders as 10%
        verdicts = {"v": {f"i{k}": ("verified" if k == 0 else "unknown")
                          for k in range(10)}}
        kinds = {f"i{k}": "unverifiable" for k in range(10)}
        rep_obj = type("R", (), {})()
        from cexforge.harness import SoundnessReport
        rep = SoundnessReport(meta={"arch": "a", "epsilon": 0.1,
                                    "input_size": "4", "timeout": 1.0,
                                    "seed": 0,
                                    "counts": {"unverifiable": 10, "regular": 0},
                                    "provenance_hash": ""},
                              adapters={"v": {"kind": "external",
                                              "available": True}},
                              verdicts=verdicts, kinds=kinds, findings=[])
        data = report_to_dict(rep)
        assert data["tables"]["verified_unverifiable_pct"]["v"] == 10.0
        assert "10" in render_report(rep)

    def test_empty_campaign_renders(self):
        from cexforge.harness import SoundnessReport
        rep = SoundnessReport(meta={"arch": "a", "epsilon": None,
                                    "input_size": "4", "timeout": 1.0,
                                    "seed": 0,
                                    "counts": {"unverifiable": 0, "regular": 0},
                                    "provenance_hash": ""},
                              adapters={}, verdicts={}, kinds={}, findings=[])
        text = render_report(rep)
        assert "campaign report" in text
        assert "findings: none" in text
