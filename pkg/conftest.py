"""Pytest configuration and shared fixtures for lifeseq tests."""

import os
import tempfile
from pathlib import Path
from typing import Generator

import pytest

from lifeseq.core.encoding import build_vocabulary, encode_population
from lifeseq.core.quantization import fit_quantizer
from lifeseq.models.parameters import ModelConfig, PlantedEffects, SynthConfig
from lifeseq.processing.synthesis import apply_sample_selection, generate_population


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)


@pytest.fixture(scope="session")
def planted_population():
    """A small selected population with the default planted effects."""
    config = SynthConfig(n_persons=60, seed=7)
    population = generate_population(60, PlantedEffects(), seed=7, config=config)
    kept, _ = apply_sample_selection(population)
    return kept


@pytest.fixture(scope="session")
def encoded_corpus(planted_population):
    """Quantizer, vocabulary and sequences fitted on the planted population."""
    q = fit_quantizer(r for _, records in planted_population for r in records)
    vocab = build_vocabulary(planted_population, q)
    sequences = encode_population(planted_population, vocab, q)
    return {"quantizer": q, "vocab": vocab, "sequences": sequences, "population": planted_population}


@pytest.fixture
def tiny_model_config(encoded_corpus) -> ModelConfig:
    """One-block model sized for fast forward passes."""
    return ModelConfig(
        n_layers=1,
        n_heads=2,
        n_local_heads=1,
        local_window=8,
        n_random_features=16,
        d_model=16,
        d_ff=32,
        dropout_rate=0.0,
        vocab_size=len(encoded_corpus["vocab"]),
        max_len=1560,
    )


@pytest.fixture(autouse=True)
def clean_env_vars():
    """Clean up environment variables after each test."""
    test_vars = ["LOG_LEVEL"]
    original_env = {var: os.environ[var] for var in test_vars if var in os.environ}

    yield

    for var in test_vars:
        os.environ.pop(var, None)
    os.environ.update(original_env)


# Pytest configuration hooks
def pytest_configure(config):
    """Configure pytest with custom settings."""
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
    config.addinivalue_line(
        "markers", "integration: mark test as integration test"
    )
    config.addinivalue_line(
        "markers", "unit: mark test as unit test"
    )


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers automatically."""
    for item in items:
        # Mark integration tests
        if "integration" in item.name or "end_to_end" in item.name:
            item.add_marker(pytest.mark.integration)

        # Mark unit tests (default for most tests)
        if not any(marker.name in ["integration", "slow"] for marker in item.iter_markers()):
            item.add_marker(pytest.mark.unit)
