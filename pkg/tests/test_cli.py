"""Tests for the command-line interface."""

import json

import pytest

from lifeseq.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, build_parser, main
from lifeseq.utils.file_handling import MANIFEST_NAME, read_jsonl


@pytest.mark.unit
class TestParser:
    """Test suite for argument parsing."""

    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_stage_options(self):
        args = build_parser().parse_args(["synth", "--preset", "tiny", "--n", "5", "--seed", "3"])
        assert (args.command, args.preset, args.n, args.seed) == ("synth", "tiny", 5, 3)

    def test_eval_levels(self):
        args = build_parser().parse_args(["eval", "--data", "d", "--model", "m", "--levels", "0", "2"])
        assert args.levels == [0, 2]
        assert args.split == "test"

    def test_unknown_experiment_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["benchmark", "--data", "d", "--model", "m", "--experiment", "lottery"])

    def test_strict_help_describes_attribute_order(self, capsys):
        assert build_parser().parse_args(["validate", "--input", "g", "--strict"]).strict
        with pytest.raises(SystemExit):
            build_parser().parse_args(["validate", "--help"])
        help_text = " ".join(capsys.readouterr().out.split())
        assert "Also require attribute tokens in the fixed intra-event order" in help_text


@pytest.mark.unit
class TestExitCodes:
    """Test suite for error reporting."""

    def test_bad_config(self, temp_dir, capsys):
        config = temp_dir / "bad.toml"
        config.write_text("[model]\nn_layers = 0\n")
        code = main(["synth", "--config", str(config), "--out", str(temp_dir / "out")])
        assert code == EXIT_CONFIG
        assert "n_layers must be at least 1" in capsys.readouterr().err

    def test_unknown_section(self, temp_dir):
        config = temp_dir / "bad.toml"
        config.write_text("[plotting]\ndpi = 300\n")
        assert main(["synth", "--config", str(config), "--out", str(temp_dir / "out")]) == EXIT_CONFIG

    def test_missing_input_dir(self, temp_dir):
        code = main(["encode", "--input", str(temp_dir / "nowhere"), "--out", str(temp_dir / "out")])
        assert code == EXIT_MISSING

    def test_report_without_results(self, temp_dir, capsys):
        empty = temp_dir / "empty"
        empty.mkdir()
        code = main(["report", str(empty), "--out", str(temp_dir / "report")])
        assert code == EXIT_MISSING
        assert "no result files" in capsys.readouterr().err


@pytest.mark.unit
class TestInspectModel:
    """Test suite for the parameter census command."""

    def test_census_printed(self, capsys):
        assert main(["inspect-model", "--preset", "tiny"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "total:" in out
        assert "deviation from 10.1M" in out

    def test_full_scale_gap_is_reported(self, capsys):
        assert main(["inspect-model", "--preset", "full"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "7,250,104" in out
        assert "deviation from 10.1M: -28.2%" in out


@pytest.mark.unit
class TestSynthEncode:
    """Test suite for the first two pipeline stages."""

    def test_synth_then_encode(self, temp_dir):
        synth_dir = temp_dir / "synth"
        encode_dir = temp_dir / "encode"
        assert main(["synth", "--preset", "tiny", "--n", "40", "--out", str(synth_dir)]) == EXIT_OK
        selection = json.loads((synth_dir / "selection.json").read_text())
        assert selection["generated"] == 40
        assert 0 < selection["kept"] <= 40

        assert main(["encode", "--preset", "tiny", "--input", str(synth_dir), "--out", str(encode_dir)]) == EXIT_OK
        manifest = json.loads((encode_dir / MANIFEST_NAME).read_text())
        assert manifest["stage"] == "encode"
        assert sum(manifest["extra"]["splits"].values()) == selection["kept"]
        assert manifest["extra"]["vocab_size"] > 5

        train_rows = list(read_jsonl(str(encode_dir / "sequences_train.jsonl")))
        assert len(train_rows) == manifest["extra"]["splits"]["train"]
        assert all(len(row["tokens"]) <= 256 for row in train_rows)

    def test_seed_makes_synth_reproducible(self, temp_dir):
        for name in ("a", "b"):
            main(["synth", "--preset", "tiny", "--n", "10", "--seed", "4", "--out", str(temp_dir / name)])
        assert (temp_dir / "a" / "records.jsonl").read_bytes() == (temp_dir / "b" / "records.jsonl").read_bytes()
