"""Utility functions and helpers."""

from .file_handling import ensure_output_dir, read_jsonl, write_jsonl, write_manifest
from .logging import get_logger, setup_logging

__all__ = [
    "ensure_output_dir",
    "read_jsonl",
    "write_jsonl",
    "write_manifest",
    "setup_logging",
    "get_logger",
]
