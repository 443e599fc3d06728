"""File handling utilities: JSONL and CSV artifacts, hashes, stage manifests."""

import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence

import pandas as pd

MANIFEST_NAME = "manifest.json"


def validate_input_file(filepath: str, suffixes: Optional[Sequence[str]] = None) -> Path:
    """Validate that an input artifact exists and has an expected suffix.

    Args:
        filepath: Path to the file
        suffixes: Accepted suffixes (any when None)

    Returns:
        Path object for the validated file

    Raises:
        FileNotFoundError: If file doesn't exist
        ValueError: If the suffix is not accepted
    """
    path = Path(filepath)

    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {filepath}")

    if suffixes and path.suffix.lower() not in suffixes:
        raise ValueError(
            f"Unsupported file type: {path.suffix}. Expected one of: {', '.join(suffixes)}"
        )

    return path


def validate_input_dir(directory: str, required: Sequence[str] = ()) -> Path:
    """Validate that a stage directory exists and holds the required files.

    Raises:
        FileNotFoundError: If the directory or a required file is missing
    """
    dir_path = Path(directory)
    if not dir_path.is_dir():
        raise FileNotFoundError(f"Input directory not found: {directory}")
    for name in required:
        if not (dir_path / name).exists():
            raise FileNotFoundError(f"Required file missing: {dir_path / name}")
    return dir_path


def ensure_output_dir(filepath: str) -> Path:
    """Ensure the parent directory of an output file exists."""
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_jsonl(filepath: str, rows: Iterable[Dict[str, Any]]) -> Path:
    """Write one JSON object per line (UTF-8, sorted keys)."""
    path = ensure_output_dir(filepath)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")
    return path


def read_jsonl(filepath: str) -> Iterator[Dict[str, Any]]:
    """Yield the JSON objects of a JSONL file, skipping blank lines.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If a line is not valid JSON (names the line number)
    """
    path = validate_input_file(filepath, (".jsonl",))
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{number}: invalid JSON: {e}") from e


def write_json(filepath: str, data: Any) -> Path:
    path = ensure_output_dir(filepath)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    return path


def read_json(filepath: str) -> Any:
    path = validate_input_file(filepath, (".json",))
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(filepath: str, rows: Any, columns: Optional[List[str]] = None) -> Path:
    """Write a headered, comma-separated UTF-8 CSV.

    Args:
        filepath: Output path
        rows: DataFrame or list of dicts
        columns: Column order (required when rows is an empty list)
    """
    path = ensure_output_dir(filepath)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    if columns is not None:
        frame = frame.reindex(columns=columns)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def file_sha256(filepath: str) -> str:
    digest = hashlib.sha256()
    with open(filepath, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    output_dir: str,
    stage: str,
    config_hash: str,
    seed: int,
    inputs: Sequence[str] = (),
    outputs: Sequence[str] = (),
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Record how a stage's outputs were produced.

    Input and output files are listed with their SHA-256 hashes so every
    artifact can be traced to its config and inputs.
    """
    from .. import __version__

    def hashed(paths: Sequence[str]) -> Dict[str, str]:
        return {str(p): file_sha256(p) for p in paths if Path(p).is_file()}

    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "seed": seed,
        "inputs": hashed(inputs),
        "outputs": hashed(outputs),
        "package_version": __version__,
        "python": platform.python_version(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "extra": extra or {},
    }
    return write_json(str(Path(output_dir) / MANIFEST_NAME), manifest)
