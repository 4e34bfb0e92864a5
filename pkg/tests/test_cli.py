import json
import os
import subprocess
import sys

import numpy as np
import pytest

from jitterlab.cli import main
from jitterlab.synthdata import load_dataset


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small end-to-end pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cliwork")
    src = root / "src"
    tgt = root / "tgt"
    assert run(["synth", "--out", src, "--domain", "source", "--n", "120",
                "--dup-groups", "10", "--seed", "50"]) == 0
    assert run(["synth", "--out", tgt, "--domain", "target", "--n", "60",
                "--dup-groups", "8", "--seed", "51"]) == 0
    ckpt = root / "model.ckpt"
    assert run(["pretrain", "--data", src, "--out", ckpt, "--epochs", "2",
                "--seed", "52"]) == 0
    adapted = root / "adapted.ckpt"
    assert run(["adapt", "--model", ckpt, "--source", src, "--target", tgt,
                "--out", adapted, "--iters", "3", "--batch", "8",
                "--n-source", "32", "--n-target", "32", "--seed", "53"]) == 0
    return root


class TestSynth:
    def test_manifest_row_count(self, workspace):
        ds = load_dataset(workspace / "src" / "manifest.csv")
        assert len(ds) == 120

    def test_invalid_counts_exit_2(self, tmp_path):
        assert run(["synth", "--out", tmp_path / "x", "--domain", "source",
                    "--n", "5", "--dup-groups", "3", "--seed", "1"]) == 2

    def test_source_with_grating_exit_2(self, tmp_path):
        assert run(["synth", "--out", tmp_path / "x", "--domain", "source",
                    "--n", "12", "--dup-groups", "0", "--seed", "1",
                    "--hfc-amp", "0.1"]) == 2

    def test_identical_flags_identical_manifest(self, tmp_path):
        args = ["--domain", "target", "--n", "15", "--dup-groups", "2", "--seed", "9"]
        assert run(["synth", "--out", tmp_path / "a", *args]) == 0
        assert run(["synth", "--out", tmp_path / "b", *args]) == 0
        a = (tmp_path / "a" / "manifest.csv").read_bytes()
        b = (tmp_path / "b" / "manifest.csv").read_bytes()
        assert a == b


class TestEval:
    def test_report_schema(self, workspace, tmp_path):
        out = tmp_path / "report.json"
        assert run(["eval", "--model", workspace / "model.ckpt", "--data",
                    workspace / "src", "--out", out, "--seed", "54"]) == 0
        payload = json.loads(out.read_text())
        for key in ("mean_angular_error_deg", "mav_deg", "qualifying_pairs",
                    "config", "code_version"):
            assert key in payload
        assert payload["config"]["resolved_seed"] == 54

    def test_missing_checkpoint_exit_4(self, workspace, tmp_path):
        assert run(["eval", "--model", tmp_path / "nope.ckpt", "--data",
                    workspace / "src", "--out", tmp_path / "r.json"]) == 4

    def test_mav_null_when_no_duplicate_groups(self, workspace, tmp_path):
        bare = tmp_path / "bare"
        assert run(["synth", "--out", bare, "--domain", "source", "--n", "12",
                    "--dup-groups", "0", "--seed", "77"]) == 0
        out = tmp_path / "r.json"
        assert run(["eval", "--model", workspace / "model.ckpt", "--data", bare,
                    "--out", out]) == 0
        payload = json.loads(out.read_text())
        assert payload["mav_deg"] is None
        assert payload["mav_reason"]


class TestSweep:
    def test_noise_sweep_zero_row_equals_plain_eval(self, workspace, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        out_json = tmp_path / "eval.json"
        assert run(["sweep", "--kind", "noise", "--model", workspace / "model.ckpt",
                    "--data", workspace / "tgt", "--out", out_csv, "--seed", "55"]) == 0
        assert run(["eval", "--model", workspace / "model.ckpt",
                    "--data", workspace / "tgt", "--out", out_json, "--seed", "55"]) == 0
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "param,value,mean_angular_error_deg,mav_deg,qualifying_pairs"
        assert len(rows) == 6
        zero = rows[1].split(",")
        payload = json.loads(out_json.read_text())
        # CSV carries 9 significant digits
        assert float(zero[2]) == pytest.approx(payload["mean_angular_error_deg"],
                                               rel=1e-8)

    def test_lowpass_zero_row_matches_plain_eval(self, workspace, tmp_path):
        out_csv = tmp_path / "lp.csv"
        out_json = tmp_path / "eval.json"
        assert run(["sweep", "--kind", "lowpass", "--model", workspace / "model.ckpt",
                    "--data", workspace / "tgt", "--out", out_csv, "--seed", "56"]) == 0
        assert run(["eval", "--model", workspace / "model.ckpt",
                    "--data", workspace / "tgt", "--out", out_json, "--seed", "56"]) == 0
        rows = out_csv.read_text().splitlines()
        assert len(rows) == 12
        zero = rows[1].split(",")
        payload = json.loads(out_json.read_text())
        assert float(zero[2]) == pytest.approx(payload["mean_angular_error_deg"],
                                               abs=1e-4)

    def test_poisson_family_rows(self, workspace, tmp_path):
        out_csv = tmp_path / "p.csv"
        assert run(["sweep", "--kind", "noise", "--family", "poisson",
                    "--model", workspace / "model.ckpt", "--data", workspace / "tgt",
                    "--out", out_csv, "--seed", "57"]) == 0
        rows = out_csv.read_text().splitlines()
        assert [r.split(",")[1] for r in rows[1:]] == ["10", "15"]


class TestRobustnessRetentionProbe:
    def test_robustness_schema(self, workspace, tmp_path):
        out = tmp_path / "rob.json"
        assert run(["robustness", "--baseline", workspace / "model.ckpt",
                    "--adapted", workspace / "adapted.ckpt",
                    "--data", workspace / "tgt", "--out", out, "--seed", "58"]) == 0
        payload = json.loads(out.read_text())
        settings = [(s["noise_family"], s["noise_level"]) for s in payload["settings"]]
        assert settings == [("gaussian", 0.01), ("gaussian", 0.05),
                            ("poisson", 10.0), ("poisson", 15.0)]
        for s in payload["settings"]:
            for model in ("baseline", "adapted"):
                assert "error_increase_deg" in s["models"][model]

    def test_retention_schema(self, workspace, tmp_path):
        out = tmp_path / "ret.json"
        assert run(["retention", "--baseline", workspace / "model.ckpt",
                    "--adapted", workspace / "adapted.ckpt",
                    "--data", workspace / "src", "--out", out, "--seed", "59"]) == 0
        payload = json.loads(out.read_text())
        assert "relative_error_increase" in payload
        assert payload["baseline"]["mean_angular_error_deg"] > 0

    def test_probe_csv(self, workspace, tmp_path):
        out = tmp_path / "probe.csv"
        assert run(["probe-triplet", "--baseline", workspace / "model.ckpt",
                    "--adapted", workspace / "adapted.ckpt",
                    "--data", workspace / "tgt", "--out", out,
                    "--n-triples", "200", "--seed", "60"]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "model,margin,triplet_loss"
        assert len(rows) == 5
        margins = {r.split(",")[1] for r in rows[1:]}
        assert margins == {"0", "0.001"}

    def test_probe_requires_a_checkpoint(self, workspace, tmp_path):
        assert run(["probe-triplet", "--data", workspace / "tgt",
                    "--out", tmp_path / "p.csv"]) == 2


class TestDeterminismAndConfig:
    def test_rerun_byte_identical_outputs(self, workspace, tmp_path, monkeypatch):
        # identical flags (relative paths) run from two separate directories
        outs = []
        for tag in ("a", "b"):
            workdir = tmp_path / tag
            workdir.mkdir()
            monkeypatch.chdir(workdir)
            assert run(["pretrain", "--data", workspace / "src", "--out", "m.ckpt",
                        "--epochs", "1", "--seed", "61"]) == 0
            assert run(["eval", "--model", "m.ckpt", "--data", workspace / "src",
                        "--out", "r.json", "--seed", "61"]) == 0
            outs.append(((workdir / "m.ckpt").read_bytes(),
                         (workdir / "r.json").read_bytes()))
        assert outs[0] == outs[1]

    def test_config_file_with_flag_override(self, workspace, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n = 30\ndup-groups = 2\nseed = 70\n")
        out = tmp_path / "ds"
        assert run(["synth", "--out", out, "--domain", "source", "--config", cfg,
                    "--n", "21"]) == 0
        ds = load_dataset(out / "manifest.csv")
        assert len(ds) == 21  # flag wins
        assert (ds.group_ids >= 0).sum() == 6  # config file value used

    def test_env_seed_fallback(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("JITTERLAB_SEED", "88")
        out = tmp_path / "r.json"
        assert run(["eval", "--model", workspace / "model.ckpt",
                    "--data", workspace / "src", "--out", out]) == 0
        assert json.loads(out.read_text())["config"]["resolved_seed"] == 88

    def test_bad_env_seed_exit_2(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("JITTERLAB_SEED", "not-a-number")
        assert run(["eval", "--model", workspace / "model.ckpt",
                    "--data", workspace / "src", "--out", tmp_path / "r.json"]) == 2

    def test_usage_error_exit_code_from_argparse(self):
        with pytest.raises(SystemExit) as exc:
            main(["sweep", "--kind", "bogus"])
        assert exc.value.code == 2

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "jitterlab.cli"],
                              capture_output=True)
        # bare invocation (no subcommand) is a usage error
        assert proc.returncode == 2
