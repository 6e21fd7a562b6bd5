import csv
import io
import json

import pytest

from hyperimage import runner
from hyperimage.cli import main
from hyperimage.datasets import load_manifest
from hyperimage.imageops import read_pnm
from hyperimage.metrics import aggregate_splits

TINY = {
    "experiment": "tiny",
    "dataset": "iqa",
    "seed": 3,
    "train": {
        "stage1": {"epochs": 3, "patience": 2, "batch_size": 16},
        "stage2": {"epochs": 4, "patience": 2, "batch_size": 4},
        "e2e": {"epochs": 2, "patience": 1, "batch_size": 4},
    },
}


def write_config(tmp_path, name="c.json", **over):
    path = tmp_path / name
    path.write_text(json.dumps({**TINY, **over}))
    return str(path)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert main(["run", "--config", cfg, "--out", str(tmp / "a")]) == 0
    return tmp, cfg, tmp / "a" / "tiny"


def test_run_layout(tiny_run):
    _, _, root = tiny_run
    assert not (root / runner.MARKER).exists()
    for name in ("MANIFEST.sha256", "summary.csv", "summary.json", "report.csv", "config.json", "0/metrics.json",
                 "0/stage1.hpm", "0/stage2.hpm", "0/stage1_epochs.csv", "0/predictions_two-stage.csv"):
        assert (root / name).is_file(), name
    hashed = {line.split("  ", 1)[1] for line in (root / "MANIFEST.sha256").read_text().splitlines()}
    assert "timing.json" not in hashed and "0/metrics.json" in hashed
    assert hashed == set(runner.file_hashes(root))


def test_rerun_is_hash_identical(tiny_run):
    tmp, cfg, root = tiny_run
    assert main(["run", "--config", cfg, "--out", str(tmp / "b")]) == 0
    assert (tmp / "b" / "tiny" / "MANIFEST.sha256").read_text() == (root / "MANIFEST.sha256").read_text()


def test_report_table(tiny_run, capsys):
    _, _, root = tiny_run
    capsys.readouterr()
    assert main(["report", str(root)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["method", "statistic", "srocc", "plcc", "n_splits"]
    assert [r[0] for r in rows[1:]] == ["two-stage", "patch-average", "end-to-end"]
    reports = runner.collect_reports(root)
    for row in rows[1:]:
        agg = aggregate_splits(reports[row[0]], "mean")
        assert row[2:] == [repr(agg["srocc"]["value"]), repr(agg["plcc"]["value"]), "1"]
    assert main(["report", str(root), "--statistic", "median"]) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("two-stage,median,")


def test_stage_subcommands_match_full_run(tiny_run):
    tmp, cfg, root = tiny_run
    out = str(tmp / "staged")
    for stage in ("train-stage1", "extract", "train-stage2", "baseline-avg", "baseline-e2e", "evaluate"):
        assert main([stage, "--config", cfg, "--out", out, "--split", "0"]) == 0, stage
    staged = tmp / "staged" / "tiny"
    assert (staged / "0" / "metrics.json").read_bytes() == (root / "0" / "metrics.json").read_bytes()
    assert (staged / "report.csv").read_text() == (root / "report.csv").read_text()


def test_absent_methods_reported(tmp_path, capsys):
    cfg = write_config(tmp_path, baselines={"patch_average": False, "end_to_end": False},
                       train={**TINY["train"], "stage1": {"epochs": 2, "patience": 1, "batch_size": 16}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    assert main(["report", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[2:] == ["patch-average,mean,absent,absent,absent", "end-to-end,mean,absent,absent,absent"]


def test_unknown_spec_fails_before_compute(tmp_path, capsys):
    cfg = write_config(tmp_path, specs={"stage2": "no-such-net"})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "no-such-net" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"dataset": "video"}, {"train": {"stage1": {"epochs": 3,
                                                                                           "patience": 5}}}])
def test_invalid_config(tmp_path, bad):
    assert main(["run", "--config", write_config(tmp_path, **bad), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_failed_run_leaves_marker(tmp_path, capsys):
    cfg = write_config(tmp_path, manifest=str(tmp_path / "missing.csv"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "missing.csv" in capsys.readouterr().err
    root = tmp_path / "tiny"
    assert (root / runner.MARKER).exists() and not (root / runner.MANIFEST).exists()


def test_seed_and_profile_overrides(tmp_path):
    cfg = runner.load_config(write_config(tmp_path), seed=99, profile="paper", out="x")
    assert cfg["seed"] == 99 and cfg["splits"]["seed"] == 99 and cfg["output"] == "x"
    assert cfg["specs"]["stage1"] == "live-stage-1"
    assert cfg["train"]["stage1"]["epochs"] == 3 and cfg["train"]["stage2"]["patience"] == 2


def test_synth_gen(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth-gen", "--count", "3", "--seed", "5", "--out", str(out)]) == 0
    recs = load_manifest(out / "manifest.csv", "iqa", score_range="synthetic")
    meta = [json.loads(line) for line in (out / "metadata.jsonl").read_text().splitlines()]
    assert [r.id for r in recs] == [m["id"] for m in meta] == ["s00000", "s00001", "s00002"]
    assert [r.score for r in recs] == [m["score"] for m in meta]
    assert read_pnm(recs[0].dist_path).shape == (128, 128)


def test_missing_config_flag(capsys):
    assert main(["run"]) == 2
    assert "--config" in capsys.readouterr().err
