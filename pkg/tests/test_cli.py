import csv
import json
from pathlib import Path

import pytest
import yaml

from udapose.cli import main
from udapose.data import MANIFEST

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.yaml"


def records(run_dir):
    return [json.loads(line) for line in (Path(run_dir) / "metrics.jsonl").read_text().splitlines()]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "synth"
    assert main(["gen-synth", "--out", str(out), "--image-size", "64", "--n-source", "24", "--n-target", "20"]) == 0
    return out


def config_with_data(tmp_path, synth_dir, **train):
    doc = yaml.safe_load(SMOKE.read_text())
    doc["data"] = {"source": str(synth_dir / "source"), "target": str(synth_dir / "target")}
    doc["train"].update(train)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


class TestGenSynth:
    def test_writes_both_domains(self, synth_dir):
        assert (synth_dir / "source" / MANIFEST).exists() and (synth_dir / "target" / MANIFEST).exists()
        assert yaml.safe_load((synth_dir / "synth.yaml").read_text())["n_source"] == 24

    def test_missing_parent_fails(self, tmp_path, capsys):
        assert main(["gen-synth", "--out", str(tmp_path / "no" / "such"), "--n-source", "1", "--n-target", "1"]) != 0
        assert "does not exist" in capsys.readouterr().err

    def test_seed_reproduces_output(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-synth", "--out", str(tmp_path / name), "--seed", "7", "--image-size", "32",
                         "--n-source", "3", "--n-target", "3"]) == 0
        for dom in ("source", "target"):
            assert (tmp_path / "a" / dom / MANIFEST).read_bytes() == (tmp_path / "b" / dom / MANIFEST).read_bytes()
        assert main(["gen-synth", "--out", str(tmp_path / "c"), "--seed", "8", "--image-size", "32",
                     "--n-source", "3", "--n-target", "3"]) == 0
        assert (tmp_path / "a/source" / MANIFEST).read_bytes() != (tmp_path / "c/source" / MANIFEST).read_bytes()

    def test_existing_output_needs_force(self, tmp_path, capsys):
        args = ["gen-synth", "--out", str(tmp_path / "d"), "--image-size", "32", "--n-source", "2", "--n-target", "2"]
        assert main(args) == 0
        assert main(args) != 0
        assert "--force" in capsys.readouterr().err
        assert main(args + ["--force"]) == 0

    def test_preset_from_experiment_file(self, tmp_path):
        cfg = tmp_path / "exp.yaml"
        cfg.write_text(yaml.safe_dump({"data": {"synth": {"image_size": 32, "n_source": 2, "n_target": 2},
                                                "synth_preset": "rotation_shift"}}))
        assert main(["gen-synth", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
        doc = yaml.safe_load((tmp_path / "r" / "synth.yaml").read_text())
        assert doc["target"]["pose"]["rotation"] == [-40.0, 40.0]


class TestTrain:
    def test_smoke_run_writes_artifacts(self, tmp_path, synth_dir, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_with_data(tmp_path, synth_dir)), "--out", str(out)]) == 0
        for name in ("config.yaml", "metrics.jsonl", "checkpoint.bin", "pck.txt", "pck.csv", "style.bin"):
            assert (out / name).exists(), name
        resolved = yaml.safe_load((out / "config.yaml").read_text())
        assert resolved["train"]["p"] == 0.5 and resolved["ablation"]["normalize"] is True
        assert "All" in capsys.readouterr().out
        recs = records(out)
        assert len(recs) == 4 and recs[-1]["val_pck"] is not None

    def test_ablate_style_and_occlusion(self, tmp_path, synth_dir):
        out = tmp_path / "run"
        cfg = config_with_data(tmp_path, synth_dir, stylize_prob=1.0, occlude_prob=1.0)
        assert main(["train", "--config", str(cfg), "--out", str(out), "--ablate", "style,occ"]) == 0
        recs = records(out)
        assert all(r["n_stylized"] == 0 and r["n_occluded"] == 0 for r in recs)
        assert not (out / "style.bin").exists()
        resolved = yaml.safe_load((out / "config.yaml").read_text())["ablation"]
        assert resolved == {"mean_teacher": True, "normalize": True, "style": False, "occlusion": False}

    def test_style_runs_when_enabled(self, tmp_path, synth_dir):
        out = tmp_path / "run"
        cfg = config_with_data(tmp_path, synth_dir, stylize_prob=1.0)
        assert main(["train", "--config", str(cfg), "--out", str(out), "--ablate", "occ"]) == 0
        assert sum(r["n_stylized"] for r in records(out)) > 0

    def test_unknown_switch_prints_usage(self, tmp_path, synth_dir, capsys):
        rc = main(["train", "--config", str(config_with_data(tmp_path, synth_dir)), "--out", str(tmp_path / "x"),
                   "--ablate", "dropout"])
        err = capsys.readouterr().err
        assert rc != 0 and "usage:" in err and "dropout" in err

    def test_validation_lists_all_problems(self, tmp_path, capsys):
        doc = yaml.safe_load(SMOKE.read_text())
        doc["data"] = {"source": str(tmp_path / "nope"), "target": str(tmp_path / "nada")}
        doc["train"].update(p=0.0, eta=2.0)
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump(doc))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) != 0
        err = capsys.readouterr().err
        for needle in ("p must", "eta must", "nope", "nada"):
            assert needle in err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump({"train": {"epoch": 3}}))
        assert main(["train", "--config", str(cfg)]) != 0
        assert "epoch" in capsys.readouterr().err

    def test_output_root_env(self, tmp_path, synth_dir, monkeypatch):
        monkeypatch.setenv("UDAPOSE_OUTPUT_ROOT", str(tmp_path / "root"))
        cfg = config_with_data(tmp_path, synth_dir)
        assert main(["train", "--config", str(cfg), "--out", "rel/run", "--ablate", "style"]) == 0
        assert (tmp_path / "root" / "rel" / "run" / "metrics.jsonl").exists()

    def test_same_seed_same_log(self, tmp_path, synth_dir):
        cfg = config_with_data(tmp_path, synth_dir)
        for name in ("a", "b"):
            assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "3"]) == 0
        assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, synth_dir):
    tmp = tmp_path_factory.mktemp("eval")
    out = tmp / "run"
    assert main(["train", "--config", str(config_with_data(tmp, synth_dir)), "--out", str(out),
                 "--ablate", "style"]) == 0
    return out


class TestEval:
    def test_table(self, trained_run, synth_dir, capsys):
        assert main(["eval", "--ckpt", str(trained_run / "checkpoint.bin"), "--data", str(synth_dir / "target")]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split("|")[-1].strip() == "All"

    def test_csv(self, trained_run, synth_dir, capsys):
        assert main(["eval", "--ckpt", str(trained_run / "checkpoint.bin"), "--data", str(synth_dir / "source"), "--csv",
                     "--teacher"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2 and lines[0].endswith(",All") and lines[1].startswith("MT + Norm + Occ,")

    def test_missing_checkpoint(self, tmp_path, synth_dir):
        assert main(["eval", "--ckpt", str(tmp_path / "none.bin"), "--data", str(synth_dir / "target")]) != 0


class TestSweep:
    def test_eta_grid(self, tmp_path, synth_dir):
        cfg = config_with_data(tmp_path, synth_dir)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg), "--param", "eta", "--values", "0,1", "--out", str(out),
                     "--ablate", "style"]) == 0
        rows = list(csv.reader((out / "sweep.csv").open()))
        assert rows[0][:3] == ["param", "value", "val_pck"] and [r[1] for r in rows[1:]] == ["0", "1"]
        frozen = [r["teacher_param_norm"] for r in records(out / "eta=1") if r["teacher_param_norm"] is not None]
        assert len(frozen) >= 2 and len(set(frozen)) == 1
        moving = [r["teacher_param_norm"] for r in records(out / "eta=0") if r["teacher_param_norm"] is not None]
        assert len(set(moving)) > 1

    def test_same_seed_same_csv(self, tmp_path, synth_dir):
        cfg = config_with_data(tmp_path, synth_dir)
        for name in ("a", "b"):
            assert main(["sweep", "--config", str(cfg), "--param", "p", "--values", "0.3,0.7",
                         "--out", str(tmp_path / name), "--ablate", "style,occ"]) == 0
        assert (tmp_path / "a/sweep.csv").read_bytes() == (tmp_path / "b/sweep.csv").read_bytes()
        assert len((tmp_path / "a/sweep.csv").read_text().splitlines()) == 3

    def test_empty_grid(self, tmp_path, synth_dir):
        cfg = config_with_data(tmp_path, synth_dir)
        assert main(["sweep", "--config", str(cfg), "--param", "p", "--values", ",", "--out",
                     str(tmp_path / "e")]) == 2


def test_pretrain_style(tmp_path, synth_dir, capsys):
    out = tmp_path / "style.bin"
    assert main(["pretrain-style", "--source", str(synth_dir / "source"), "--target", str(synth_dir / "target"),
                 "--out", str(out), "--config", str(SMOKE), "--steps", "2"]) == 0
    assert out.exists() and "style loss" in capsys.readouterr().out
