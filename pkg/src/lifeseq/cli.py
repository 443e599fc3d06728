"""Command-line interface for lifeseq.

Every subcommand reads its inputs from upstream stage directories, writes its
outputs into one directory, and records a manifest.json there.
"""

import argparse
import dataclasses
import os
import shutil
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

from .core.encoding import LifeSequence, build_vocabulary, decode_tokens, encode_population
from .core.network import LifeSequenceTransformer, build_model, census_deviation, parameter_census
from .core.quantization import QuantizerState, fit_quantizer
from .core.validation import failure_year_density, validate_sequence
from .core.vocabulary import Vocabulary, schema_category_counts
from .models.parameters import (
    EXPERIMENT_NAMES,
    ConfigurationError,
    ExperimentConfig,
    PipelineConfig,
)
from .models.presets import list_builtin_presets, resolve_config
from .processing.evaluation import KNOWN_YEAR_LEVELS, accuracy_trend_holds, evaluate_known_years
from .processing.experiments import run_experiment, write_experiment
from .processing.generation import generate, prefix_of
from .processing.synthesis import (
    PERSONS_FILE,
    RECORDS_FILE,
    apply_sample_selection,
    generate_population,
    read_population,
    write_population,
)
from .processing.training import TORCH_DTYPES, load_model, split_population, train
from .utils.file_handling import (
    read_json,
    read_jsonl,
    validate_input_dir,
    write_csv,
    write_json,
    write_jsonl,
    write_manifest,
)
from .utils.logging import get_logger, setup_logging

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4
SPLITS = ("train", "validation", "test")
VOCAB_FILE = "vocab.json"
QUANTIZER_FILE = "quantizer.json"
CHECKPOINT_FILE = "model.bin"
GENERATED_FILE = "generated.jsonl"

logger = get_logger("cli")


def _sequences_file(split: str) -> str:
    return f"sequences_{split}.jsonl"


def _config(args: argparse.Namespace) -> PipelineConfig:
    config = resolve_config(args.preset, args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _out(args: argparse.Namespace, config: PipelineConfig, stage: str) -> Path:
    out = Path(args.out) if args.out else Path(config.output_dir) / stage
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(data_dir: Path, split: str) -> List[LifeSequence]:
    return [LifeSequence.from_dict(row) for row in read_jsonl(str(data_dir / _sequences_file(split)))]


def _load_encoded(data_dir: str):
    directory = validate_input_dir(data_dir, (VOCAB_FILE, QUANTIZER_FILE))
    vocab = Vocabulary.load(str(directory / VOCAB_FILE))
    q = QuantizerState.from_dict(read_json(str(directory / QUANTIZER_FILE)))
    return directory, vocab, q


def _load_checkpoint(model_dir: str, dtype: str) -> LifeSequenceTransformer:
    directory = validate_input_dir(model_dir, (CHECKPOINT_FILE,))
    return load_model(str(directory / CHECKPOINT_FILE), dtype)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    config = _config(args)
    synth = config.synth
    if args.n is not None:
        synth = dataclasses.replace(synth, n_persons=args.n)
    out = _out(args, config, "synth")
    population = generate_population(synth.n_persons, config.effects, config.seed, synth, config.deflator)
    kept, counts = apply_sample_selection(population, synth.end_year)
    records_path, persons_path = write_population(kept, str(out))
    selection = write_json(
        str(out / "selection.json"), {"generated": len(population), "kept": len(kept), "dropped": counts}
    )
    write_manifest(
        str(out), "synth", config.config_hash(), config.seed,
        outputs=[str(records_path), str(persons_path), str(selection)],
        extra={"n_persons": synth.n_persons},
    )
    print(f"Synthesised {len(population)} persons, kept {len(kept)} -> {out}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    config = _config(args)
    source = validate_input_dir(args.input, (RECORDS_FILE, PERSONS_FILE))
    out = _out(args, config, "encode")
    population = read_population(str(source))
    splits = split_population([p.person_id for p, _ in population], config.split)
    train_ids = set(splits["train"])
    train_population = [(p, r) for p, r in population if p.person_id in train_ids]
    if not train_population:
        raise ValueError("the training split is empty")

    q = fit_quantizer((r for _, records in train_population for r in records), config.deflator)
    vocab = build_vocabulary(train_population, q, config.synth.end_year)
    outputs = [str(vocab.save(str(out / VOCAB_FILE))), str(write_json(str(out / QUANTIZER_FILE), q.to_dict()))]
    by_id = {p.person_id: (p, r) for p, r in population}
    for split in SPLITS:
        members = [by_id[i] for i in splits[split]]
        sequences = encode_population(members, vocab, q, config.model.max_len, config.synth.end_year)
        outputs.append(str(write_jsonl(str(out / _sequences_file(split)), (s.to_dict() for s in sequences))))
        logger.info(f"Encoded {len(sequences)} {split} sequences")
    write_manifest(
        str(out), "encode", config.config_hash(), config.seed,
        inputs=[str(source / RECORDS_FILE), str(source / PERSONS_FILE)], outputs=outputs,
        extra={"vocab_size": len(vocab), "splits": {k: len(v) for k, v in splits.items()}},
    )
    print(f"Vocabulary of {len(vocab)} tokens; sequences written to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    data_dir, vocab, _ = _load_encoded(args.data)
    out = _out(args, config, "train")
    model_cfg = dataclasses.replace(config.model, vocab_size=len(vocab))
    model = build_model(model_cfg, config.seed).to(TORCH_DTYPES[config.train.dtype])
    result = train(
        model, _load_split(data_dir, "train"), _load_split(data_dir, "validation"),
        config.train, vocab=vocab, output_dir=str(out),
    )
    write_manifest(
        str(out), "train", config.config_hash(), config.train.seed,
        inputs=[str(data_dir / _sequences_file(s)) for s in ("train", "validation")],
        outputs=[p for p in (result.checkpoint_path, result.log_path) if p],
        extra={
            "initial_val_loss": result.initial_val_loss,
            "best_val_loss": result.best_val_loss,
            "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run,
            "skipped_steps": result.skipped_steps,
        },
    )
    print(
        f"Validation loss {result.initial_val_loss:.4f} -> {result.best_val_loss:.4f} "
        f"(best epoch {result.best_epoch}); checkpoint in {out}"
    )
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    config = _config(args)
    data_dir, vocab, _ = _load_encoded(args.data)
    model = _load_checkpoint(args.model, config.train.dtype)
    out = _out(args, config, "generate")
    sequences = _load_split(data_dir, args.split)
    if args.limit:
        sequences = sequences[: args.limit]
    prefixes = [prefix_of(s, args.known_years) for s in sequences]
    generated = generate(prefixes, model, config.generation)
    rows = []
    for seq, prefix in zip(generated, prefixes):
        rows.append(
            {
                "person_id": seq.person_id,
                "prefix_length": len(prefix.sequence),
                "tokens": decode_tokens(seq.tokens, vocab),
                "year_index": seq.year_index,
                "age": seq.age,
            }
        )
    path = write_jsonl(str(out / GENERATED_FILE), rows)
    write_manifest(
        str(out), "generate", config.config_hash(), config.generation.seed,
        inputs=[str(data_dir / _sequences_file(args.split))], outputs=[str(path)],
        extra={"known_years": args.known_years, "n_sequences": len(rows)},
    )
    print(f"Generated {len(rows)} continuations -> {path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    config = _config(args)
    source = validate_input_dir(args.input, (GENERATED_FILE,))
    out = _out(args, config, "validate")
    rows, verdicts = [], []
    for row in read_jsonl(str(source / GENERATED_FILE)):
        verdict = validate_sequence(row["tokens"][row.get("prefix_length", 0) :], strict=args.strict)
        verdicts.append(verdict)
        rows.append({"person_id": row["person_id"], **dataclasses.asdict(verdict)})
    density = failure_year_density(verdicts, args.horizon)
    verdict_path = write_csv(
        str(out / "verdicts.csv"), rows,
        ["person_id", "first_failure_year", "failure_kind", "failure_position", "years_completed"],
    )
    density_path = write_csv(str(out / "figure_failure_density.csv"), density.to_rows(), ["year", "count", "survival"])
    write_manifest(
        str(out), "validate", config.config_hash(), config.seed,
        inputs=[str(source / GENERATED_FILE)], outputs=[str(verdict_path), str(density_path)],
        extra={"survival_fraction": density.survival_fraction, "horizon": args.horizon},
    )
    print(
        f"{density.n_sequences} sequences; {density.survival_fraction:.1%} free of grammar "
        f"failures over {args.horizon} years"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    data_dir, _, _ = _load_encoded(args.data)
    model = _load_checkpoint(args.model, config.train.dtype)
    out = _out(args, config, "eval")
    sequences = _load_split(data_dir, args.split)
    reports = evaluate_known_years(model, sequences, args.levels, free_running=args.free_running)
    path = write_csv(str(out / "metrics.csv"), [r.to_dict() for r in reports])
    write_manifest(
        str(out), "eval", config.config_hash(), config.seed,
        inputs=[str(data_dir / _sequences_file(args.split))], outputs=[str(path)],
        extra={"accuracy_trend_holds": accuracy_trend_holds(reports)},
    )
    for r in reports:
        print(f"known_years={r.known_years}: accuracy {r.accuracy:.4f}, F1 {r.f1:.4f}, perplexity {r.paper_perplexity:.4f}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    config = _config(args)
    data_dir, vocab, q = _load_encoded(args.data)
    model = _load_checkpoint(args.model, config.train.dtype)
    out = _out(args, config, "benchmark")
    sequences = _load_split(data_dir, args.split)
    configured = {e.name: e for e in config.experiments}
    names = args.experiment or list(configured) or list(EXPERIMENT_NAMES)
    outputs: List[str] = []
    for name in names:
        exp_cfg = configured.get(name) or ExperimentConfig(name=name, seed=config.seed)
        if args.bootstrap is not None:
            exp_cfg = dataclasses.replace(exp_cfg, bootstrap_samples=args.bootstrap)
        result = run_experiment(exp_cfg, sequences, vocab, q, model, config.generation)
        outputs.extend(str(p) for p in write_experiment(result, str(out)))
        write_json(str(out / f"counts_{name}.json"), result.counts)
    write_manifest(
        str(out), "benchmark", config.config_hash(), config.seed,
        inputs=[str(data_dir / _sequences_file(args.split))], outputs=outputs,
        extra={"experiments": names},
    )
    print(f"Benchmarks {', '.join(names)} written to {out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    config = _config(args)
    out = _out(args, config, "report")
    metric_files: List[Path] = []
    ate_files: List[Path] = []
    figure_files: List[Path] = []
    for directory in args.inputs:
        path = validate_input_dir(directory)
        metric_files.extend(sorted(path.glob("metrics.csv")))
        ate_files.extend(sorted(path.glob("ate_*.csv")))
        figure_files.extend(sorted(path.glob("figure_*.csv")))
    if not (metric_files or ate_files or figure_files):
        raise FileNotFoundError(f"no result files found in {', '.join(args.inputs)}")

    outputs: List[str] = []
    if metric_files:
        table = pd.concat([pd.read_csv(f) for f in metric_files], ignore_index=True)
        columns = ["known_years", "accuracy", "precision", "recall", "f1", "paper_perplexity", "standard_perplexity"]
        outputs.append(str(write_csv(str(out / "table_metrics.csv"), table, columns)))
    if ate_files:
        table = pd.concat([pd.read_csv(f) for f in ate_files], ignore_index=True)
        outputs.append(str(write_csv(str(out / "table_ate.csv"), table)))
    for f in figure_files:
        target = out / f.name
        if f.resolve() != target.resolve():
            shutil.copyfile(f, target)
        outputs.append(str(target))
    write_manifest(
        str(out), "report", config.config_hash(), config.seed,
        inputs=[str(f) for f in metric_files + ate_files + figure_files], outputs=outputs,
    )
    print(f"Report with {len(outputs)} files in {out}")
    return EXIT_OK


def cmd_inspect_model(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.checkpoint:
        model = load_model(args.checkpoint)
    else:
        model_cfg = config.model
        if model_cfg.vocab_size == 0:
            model_cfg = dataclasses.replace(model_cfg, vocab_size=sum(schema_category_counts().values()))
        model = build_model(model_cfg, config.seed)
    census = parameter_census(model)
    for component, count in census.items():
        print(f"{component:>12}: {count:>12,}")
    print(f"deviation from 10.1M: {census_deviation(census['total']):+.1%}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    presets = ", ".join(p["id"] for p in list_builtin_presets())
    parser = argparse.ArgumentParser(
        prog="lifeseq",
        description="Life-sequence synthesis, encoding, training, generation and causal benchmarks",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: LOG_LEVEL or INFO)")
    parser.add_argument("--log-file", default=None, help="Also write logs to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="Pipeline config TOML file")
        p.add_argument("--preset", help=f"Built-in or saved preset ({presets})")
        p.add_argument("--seed", type=int, help="Override the root seed")
        p.add_argument("--out", help="Output directory (default: <output_dir>/<stage>)")
        return p

    p = stage("synth", "Generate a synthetic population with planted effects")
    p.add_argument("--n", type=int, help="Number of persons")
    p.set_defaults(handler=cmd_synth)

    p = stage("encode", "Split, fit the quantizer and vocabulary, and encode sequences")
    p.add_argument("--input", required=True, help="synth output directory")
    p.set_defaults(handler=cmd_encode)

    p = stage("train", "Train the decoder on encoded sequences")
    p.add_argument("--data", required=True, help="encode output directory")
    p.set_defaults(handler=cmd_train)

    for name, handler, help_text in (
        ("generate", cmd_generate, "Continue test sequences after a number of known years"),
        ("eval", cmd_eval, "Next-token metrics by number of known years"),
        ("benchmark", cmd_benchmark, "Run causal benchmark experiments"),
    ):
        p = stage(name, help_text)
        p.add_argument("--data", required=True, help="encode output directory")
        p.add_argument("--model", required=True, help="train output directory")
        p.add_argument("--split", default="test", choices=SPLITS, help="Split to use (default: test)")
        p.set_defaults(handler=handler)
        if name == "generate":
            p.add_argument("--known-years", type=int, default=5, help="Whole years of context (default: 5)")
            p.add_argument("--limit", type=int, default=0, help="Use at most this many sequences")
        elif name == "eval":
            p.add_argument("--levels", type=int, nargs="+", default=list(KNOWN_YEAR_LEVELS), help="Known-year levels")
            p.add_argument("--free-running", action="store_true", help="Score greedy continuations instead")
        else:
            p.add_argument("--experiment", action="append", choices=EXPERIMENT_NAMES, help="Experiment (repeatable)")
            p.add_argument("--bootstrap", type=int, help="Override bootstrap resamples")

    p = stage("validate", "Check generated sequences against the calendar grammar")
    p.add_argument("--input", required=True, help="generate output directory")
    p.add_argument("--horizon", type=int, default=20, help="Years of the failure-density horizon")
    p.add_argument("--strict", action="store_true", help="Also require attribute tokens in the fixed intra-event order")
    p.set_defaults(handler=cmd_validate)

    p = stage("report", "Join metrics, benchmark tables and figure data")
    p.add_argument("inputs", nargs="+", help="Result directories (eval, benchmark, validate)")
    p.set_defaults(handler=cmd_report)

    p = stage("inspect-model", "Print the parameter census of a configuration or checkpoint")
    p.add_argument("--checkpoint", help="model.bin written by train")
    p.set_defaults(handler=cmd_inspect_model)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point; returns the process exit code."""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(level=args.log_level or os.getenv("LOG_LEVEL", "INFO"), log_file=args.log_file)

    try:
        return args.handler(args)
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error(f"Missing input: {e}")
        print(f"Missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:
        logger.error(f"Error: {e}", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
