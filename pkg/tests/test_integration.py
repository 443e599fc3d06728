"""Integration tests for the complete lifeseq pipeline."""

import json
from pathlib import Path
from typing import Dict

import pandas as pd
import pytest

from lifeseq.cli import EXIT_OK, main
from lifeseq.models.presets import BUILTIN_PRESETS
from lifeseq.processing.experiments import TABLE_COLUMNS
from lifeseq.processing.training import LOG_COLUMNS
from lifeseq.utils.file_handling import MANIFEST_NAME, read_jsonl

STAGES = ("synth", "encode", "train", "generate", "validate", "eval", "benchmark", "report")


def _write_config(path: Path) -> Path:
    """Tiny preset as TOML, plus an unemployment benchmark small enough for a few hundred persons."""
    preset = BUILTIN_PRESETS["tiny"]
    lines = []
    for section in ("synth", "model", "train", "generation"):
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {json.dumps(value)}" for key, value in preset[section].items())
        lines.append("")
    lines += [
        "[[experiments]]",
        'name = "unemployment"',
        "bandwidths = [96, 144]",
        "bootstrap_samples = 20",
        "min_cohort = 1",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _run_pipeline(root: Path) -> Dict[str, Path]:
    dirs = {name: root / name for name in STAGES}
    config = str(_write_config(root / "run.toml"))

    def run(*argv: str) -> None:
        assert main(["--log-level", "WARNING", *argv, "--config", config]) == EXIT_OK

    run("synth", "--n", "120", "--out", str(dirs["synth"]))
    run("encode", "--input", str(dirs["synth"]), "--out", str(dirs["encode"]))
    run("train", "--data", str(dirs["encode"]), "--out", str(dirs["train"]))
    model_args = ("--data", str(dirs["encode"]), "--model", str(dirs["train"]))
    run("generate", *model_args, "--known-years", "1", "--limit", "3", "--out", str(dirs["generate"]))
    run("validate", "--input", str(dirs["generate"]), "--out", str(dirs["validate"]))
    run("eval", *model_args, "--levels", "0", "1", "--out", str(dirs["eval"]))
    run("benchmark", *model_args, "--split", "train", "--out", str(dirs["benchmark"]))
    run("report", str(dirs["eval"]), str(dirs["validate"]), str(dirs["benchmark"]), "--out", str(dirs["report"]))
    return dirs


@pytest.mark.integration
@pytest.mark.slow
class TestIntegration:
    """Integration tests for the complete pipeline."""

    def test_end_to_end_pipeline(self, temp_dir):
        """Run every stage on a tiny population and check the artifacts each one leaves."""
        dirs = _run_pipeline(temp_dir)

        assert (dirs["train"] / "model.bin").is_file()
        log = pd.read_csv(dirs["train"] / "training_log.csv")
        assert list(log.columns) == LOG_COLUMNS
        assert len(log) >= 1

        generated = list(read_jsonl(str(dirs["generate"] / "generated.jsonl")))
        assert len(generated) == 3
        for row in generated:
            assert len(row["tokens"]) > row["prefix_length"]
            assert len(row["tokens"]) == len(row["year_index"]) == len(row["age"])

        verdicts = pd.read_csv(dirs["validate"] / "verdicts.csv")
        assert len(verdicts) == 3
        density = pd.read_csv(dirs["validate"] / "figure_failure_density.csv")
        assert list(density.columns) == ["year", "count", "survival"]

        metrics = pd.read_csv(dirs["eval"] / "metrics.csv")
        assert metrics["known_years"].tolist() == [0, 1]
        assert metrics["accuracy"].between(0.0, 1.0).all()

        ate = pd.read_csv(dirs["benchmark"] / "ate_unemployment.csv")
        assert list(ate.columns) == TABLE_COLUMNS
        assert ate["spec"].tolist() == ["±96m", "±144m"]
        counts = json.loads((dirs["benchmark"] / "counts_unemployment.json").read_text())
        assert counts["candidates"] > 0

        assert (dirs["report"] / "table_metrics.csv").is_file()
        assert (dirs["report"] / "table_ate.csv").is_file()
        assert (dirs["report"] / "figure_failure_density.csv").is_file()

        for stage in STAGES:
            manifest = json.loads((dirs[stage] / MANIFEST_NAME).read_text())
            assert manifest["stage"] == stage
            assert manifest["outputs"]

    def test_end_to_end_runs_are_reproducible(self, temp_dir):
        """Two runs with the same config and seed leave byte-identical results at every stage."""
        first = _run_pipeline(temp_dir / "first")
        second = _run_pipeline(temp_dir / "second")
        for stage in STAGES:
            names = sorted(p.name for p in first[stage].iterdir() if p.name != MANIFEST_NAME)
            assert names == sorted(p.name for p in second[stage].iterdir() if p.name != MANIFEST_NAME)
            assert names, stage
            for name in names:
                assert (first[stage] / name).read_bytes() == (second[stage] / name).read_bytes(), f"{stage}/{name}"

    def test_end_to_end_manifests_share_config_hash(self, temp_dir):
        """Stages run with the same preset and seed record the same config hash."""
        run_args = ["--preset", "tiny", "--seed", "9"]
        assert main(["synth", *run_args, "--n", "20", "--out", str(temp_dir / "synth")]) == EXIT_OK
        assert main(["encode", *run_args, "--input", str(temp_dir / "synth"), "--out", str(temp_dir / "encode")]) == EXIT_OK
        hashes = {
            json.loads((temp_dir / stage / MANIFEST_NAME).read_text())["config_hash"] for stage in ("synth", "encode")
        }
        assert len(hashes) == 1
