"""Pipeline stages: synthesis, training, generation, evaluation and causal benchmarks."""

from .experiments import run_experiment
from .generation import generate, truncate_at_cutoff
from .synthesis import apply_sample_selection, generate_population
from .training import train

__all__ = [
    "generate_population",
    "apply_sample_selection",
    "train",
    "generate",
    "truncate_at_cutoff",
    "run_experiment",
]
