import hashlib
import shutil
from pathlib import Path

import pytest
import yaml

from retinalkit.cli import main
from retinalkit.synthetic import build_workspace


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def template(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    cfg_path = build_workspace(root, n_images=40, size=80)
    cfg = yaml.safe_load(cfg_path.read_text())
    cfg["selection"]["min_per_label"] = 4  # 40 images leave ~6 per APTOS grade
    cfg_path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return root


@pytest.fixture
def ws(template, tmp_path):
    dst = tmp_path / "ws"
    shutil.copytree(template, dst)
    return dst


def test_all_deterministic_and_second_run_skips(ws, tmp_path, capsys):
    other = tmp_path / "other"
    shutil.copytree(ws, other)
    assert main(["all", str(ws / "config.yaml"), "-q"]) == 0
    assert main(["all", str(other / "config.yaml"), "-q", "--jobs", "2"]) == 0
    first = tree(ws / "out")
    assert first == tree(other / "out")
    for name in ("features.jsonl", "corpus.jsonl", "alignment.jsonl", "tuning.jsonl",
                 "mixed.jsonl", "mix_manifest.json", "eval_report.json"):
        assert name in first
    capsys.readouterr()
    assert main(["all", str(ws / "config.yaml")]) == 0
    err = capsys.readouterr().err
    assert err.count("up to date, skipped") == 7
    assert tree(ws / "out") == first


def test_deleting_one_stage_output_regenerates_it(ws, capsys):
    assert main(["all", str(ws / "config.yaml"), "-q"]) == 0
    before = tree(ws / "out")
    (ws / "out" / "tuning.jsonl").unlink()
    capsys.readouterr()
    assert main(["all", str(ws / "config.yaml")]) == 0
    err = capsys.readouterr().err
    assert "compile: up to date" not in err and "assemble: up to date" in err
    assert tree(ws / "out") == before


def test_force_reruns(ws, capsys):
    assert main(["extract-lesions", str(ws / "config.yaml"), "-q"]) == 0
    capsys.readouterr()
    assert main(["extract-lesions", str(ws / "config.yaml"), "--force"]) == 0
    assert "skipped" not in capsys.readouterr().err


def test_missing_manifest_names_field(ws, capsys):
    cfg = yaml.safe_load((ws / "config.yaml").read_text())
    cfg["manifest"] = "nowhere.csv"
    del cfg["seeds"]["mix"]
    (ws / "bad.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["all", str(ws / "bad.yaml")]) == 1
    err = capsys.readouterr().err
    assert "manifest: file" in err and "seeds.mix" in err


def test_stage_failure_exit_code(ws, capsys):
    assert main(["assemble", str(ws / "config.yaml")]) == 2
    assert "extract-features" in capsys.readouterr().err


def test_evaluate_produces_reports(ws):
    for stage in ("extract-features", "extract-lesions", "evaluate"):
        assert main([stage, str(ws / "config.yaml"), "-q"]) == 0
    assert (ws / "out" / "eval_report.json").is_file()
    assert "accuracy" in (ws / "out" / "eval_report.txt").read_text()


def test_seed_override_changes_mix(ws):
    assert main(["all", str(ws / "config.yaml"), "-q"]) == 0
    a = (ws / "out" / "mix_manifest.json").read_text()
    assert main(["all", str(ws / "config.yaml"), "-q", "--seed-override", "99"]) == 0
    b = (ws / "out" / "mix_manifest.json").read_text()
    assert a != b
