"""End-to-end runs of every subcommand through ``main``."""

import json
import os
import subprocess
import sys

import pytest

from locost.cli import load_run_config, main
from locost.model import ModelConfig
from locost.nn import ConfigError

from .test_gsg import brute_force

SMALL = {"H": 16, "N": 4, "F": 32, "enc_layers": 1, "dec_layers": 1, "heads": 2, "vocab": 40, "lr": 3e-3}
COPY_TEXTS = ["red blue green red", "cat dog bird fish cow", "one two three four", "sun moon star sky cloud rain"]


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return str(path)


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    data = write_jsonl(tmp_path / "copy.jsonl", [{"source": t, "summary": t} for t in COPY_TEXTS])
    return tmp_path, str(cfg), data


def read_jsonl(path):
    return [json.loads(line) for line in open(path)]


class TestGSG:
    DOC5 = ["Cats purr softly.", "Dogs bark at night.", "Cats purr and dogs bark at birds at night.", "Birds sing.", "Rain falls."]

    def test_valid_file(self, tmp_path, capsys):
        docs = [{"text": " ".join(self.DOC5)}, {"text": "Too short. Really."}, {"text": " ".join(self.DOC5 * 2)}]
        out = tmp_path / "out.jsonl"
        assert main(["gsg", "--input", write_jsonl(tmp_path / "in.jsonl", docs), "--output", str(out)]) == 0
        rows = read_jsonl(out)
        assert len(rows) == 2
        assert rows[0]["selected_indices"] == brute_force(self.DOC5, 0.2) == [3]
        assert set(rows[0]) == {"source", "summary", "selected_indices"}
        assert "skipped 1" in capsys.readouterr().err

    def test_all_short(self, tmp_path, capsys):
        docs = [{"text": "A. B. C. D."}, {"text": "One."}]
        out = tmp_path / "out.jsonl"
        assert main(["gsg", "--input", write_jsonl(tmp_path / "in.jsonl", docs), "--output", str(out)]) == 0
        assert out.read_text() == ""
        assert "skipped 2" in capsys.readouterr().err

    def test_malformed_line(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"text": "fine."}\n\n{"text": oops}\n')
        assert main(["gsg", "--input", str(path), "--output", str(tmp_path / "o.jsonl")]) != 0
        assert "bad.jsonl:3" in capsys.readouterr().err

    def test_missing_field(self, tmp_path, capsys):
        assert main(["gsg", "--input", write_jsonl(tmp_path / "x.jsonl", [{"body": "x"}])]) != 0
        assert "x.jsonl:1" in capsys.readouterr().err

    def test_missing_input(self, tmp_path):
        assert main(["gsg", "--input", str(tmp_path / "nope.jsonl")]) != 0


class TestTraining:
    def test_steps_zero_writes_initial_checkpoint(self, workdir):
        tmp, cfg, data = workdir
        out = tmp / "run"
        assert main(["finetune", "--config", cfg, "--data", data, "--steps", "0", "--out", str(out)]) == 0
        assert sorted(os.listdir(out)) == ["ckpt_0000000.lcst"]

    def test_identical_runs_identical_csv(self, workdir):
        tmp, cfg, data = workdir
        for name in ("a", "b"):
            assert main(["finetune", "--config", cfg, "--data", data, "--steps", "5", "--out", str(tmp / name), "--batch-size", "2"]) == 0
        assert (tmp / "a" / "loss.csv").read_bytes() == (tmp / "b" / "loss.csv").read_bytes()
        assert (tmp / "a" / "ckpt_0000005.lcst").read_bytes() == (tmp / "b" / "ckpt_0000005.lcst").read_bytes()

    def test_seed_changes_run(self, workdir):
        tmp, cfg, data = workdir
        main(["finetune", "--config", cfg, "--data", data, "--steps", "2", "--out", str(tmp / "a")])
        main(["finetune", "--config", cfg, "--data", data, "--steps", "2", "--out", str(tmp / "b"), "--seed", "7"])
        assert (tmp / "a" / "loss.csv").read_bytes() != (tmp / "b" / "loss.csv").read_bytes()

    def test_resume_matches_uninterrupted(self, workdir):
        tmp, cfg, data = workdir
        base = ["finetune", "--config", cfg, "--data", data, "--batch-size", "2"]
        main(base + ["--steps", "6", "--out", str(tmp / "full")])
        main(base + ["--steps", "4", "--out", str(tmp / "part")])
        main(base + ["--steps", "2", "--out", str(tmp / "part"), "--resume", str(tmp / "part" / "ckpt_0000004.lcst")])
        assert (tmp / "full" / "loss.csv").read_bytes() == (tmp / "part" / "loss.csv").read_bytes()

    def test_pretrain_on_raw_documents(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(SMALL))
        text = " ".join(TestGSG.DOC5)
        data = write_jsonl(tmp_path / "docs.jsonl", [{"text": text}, {"text": "Too short."}])
        out = tmp_path / "pre"
        assert main(["pretrain", "--config", str(cfg), "--data", data, "--steps", "3", "--out", str(out)]) == 0
        assert len((out / "loss.csv").read_text().splitlines()) == 4

    def test_config_mismatch_with_checkpoint(self, workdir, capsys):
        tmp, cfg, data = workdir
        main(["finetune", "--config", cfg, "--data", data, "--steps", "0", "--out", str(tmp / "a")])
        other = tmp / "other.json"
        other.write_text(json.dumps({**SMALL, "vocab": 80}))
        rc = main(["finetune", "--config", str(other), "--data", data, "--steps", "1", "--out", str(tmp / "b"), "--init", str(tmp / "a" / "ckpt_0000000.lcst")])
        assert rc == 2
        assert "configuration error" in capsys.readouterr().err

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lr": 0.5, "batch_size": 3, "H": 8, "heads": 2}))
        run = load_run_config(str(cfg), {"lr": 0.25, "batch_size": None})
        assert run.lr == 0.25 and run.batch_size == 3 and run.model.H == 8

    def test_default_base_lr_follows_schedule(self):
        assert load_run_config().lr == 5e-4
        assert load_run_config(overrides={"schedule": "inverse-sqrt"}).lr == 1.0
        assert load_run_config(overrides={"schedule": "inverse-sqrt", "lr": 0.5}).lr == 0.5

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lr": 0.5, "colour": "red"}))
        with pytest.raises(ConfigError):
            load_run_config(str(cfg))

    def test_default_model_is_desk(self):
        assert load_run_config().model == ModelConfig()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("gen")
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    data = write_jsonl(tmp / "copy.jsonl", [{"source": t, "summary": t} for t in COPY_TEXTS])
    assert main(["finetune", "--config", str(cfg), "--data", data, "--steps", "400", "--out", str(tmp / "run")]) == 0
    return tmp, str(tmp / "run" / "ckpt_0000400.lcst"), data


class TestGenerate:
    def test_copy_reproduction(self, trained):
        tmp, ckpt, data = trained
        out = tmp / "gen.jsonl"
        assert main(["generate", "--ckpt", ckpt, "--input", data, "--output", str(out)]) == 0
        rows = read_jsonl(out)
        assert [r["generated"] for r in rows] == COPY_TEXTS
        assert [r["source"] for r in rows] == COPY_TEXTS

    def test_deterministic(self, trained):
        tmp, ckpt, data = trained
        for name in ("g1", "g2"):
            main(["generate", "--ckpt", ckpt, "--input", data, "--output", str(tmp / name), "--max-len", "3"])
        assert (tmp / "g1").read_bytes() == (tmp / "g2").read_bytes()

    def test_empty_input(self, trained, tmp_path):
        _, ckpt, _ = trained
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        out = tmp_path / "out.jsonl"
        assert main(["generate", "--ckpt", ckpt, "--input", str(empty), "--output", str(out)]) == 0
        assert out.read_text() == ""

    def test_missing_checkpoint(self, tmp_path, capsys):
        empty = tmp_path / "e.jsonl"
        empty.write_text("")
        assert main(["generate", "--ckpt", str(tmp_path / "none.lcst"), "--input", str(empty)]) != 0
        assert capsys.readouterr().err

    def test_kernel_viz_rows(self, trained, tmp_path):
        _, ckpt, _ = trained
        out = tmp_path / "k.csv"
        assert main(["kernel-viz", "--ckpt", ckpt, "--L", "33", "--channel", "3", "--output", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "j,fwd_mag,bwd_mag,fwd_env,bwd_env"
        assert len(lines) == 34

    def test_kernel_viz_bad_channel(self, trained, capsys):
        _, ckpt, _ = trained
        assert main(["kernel-viz", "--ckpt", ckpt, "--channel", "99"]) != 0
        assert "channel" in capsys.readouterr().err


class TestBenchAndGradcheck:
    @pytest.mark.parametrize("kind", ["linearithmic", "quadratic"])
    def test_synthetic_fixtures(self, kind, capsys):
        assert main(["bench", "--synthetic", kind]) == 0
        assert json.loads(capsys.readouterr().out)["best"] == kind

    def test_small_sweep_to_csv(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert main(["bench", "--lengths", "32,64,128,256", "--H", "8", "--N", "2", "--repeats", "3", "--output", str(out)]) == 0
        assert out.read_text().splitlines()[0] == "L,wall_ms,bytes_est,bytes_peak,status"
        assert json.loads(capsys.readouterr().out)["best"] in ("linear", "linearithmic", "quadratic")

    def test_bad_lengths(self):
        with pytest.raises(SystemExit):
            main(["bench", "--lengths", "a,b"])

    def test_gradcheck_tiny(self, capsys):
        assert main(["gradcheck"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] and report["max_rel_error"] < 1e-4

    @pytest.mark.slow
    def test_gradcheck_desk(self, capsys):
        assert main(["gradcheck", "--preset", "desk", "--max-components", "20"]) == 0
        assert json.loads(capsys.readouterr().out)["max_rel_error"] < 1e-4


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])


def test_console_entry_point(tmp_path):
    env = dict(os.environ, LOCOST_LOG_LEVEL="debug")
    proc = subprocess.run([sys.executable, "-m", "locost.cli", "bench", "--synthetic", "quadratic"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["best"] == "quadratic"
