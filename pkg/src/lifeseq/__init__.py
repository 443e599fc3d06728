"""lifeseq - generative modelling of labour-market life sequences with a causal benchmark harness."""

__version__ = "0.1.0"

# Core
from .core.encoding import (
    LifeSequence,
    build_vocabulary,
    decode_tokens,
    encode_individual,
    encode_population,
    parse_events,
)
from .core.network import LifeSequenceTransformer, build_model, parameter_census
from .core.numerics import grad_check, load_checkpoint, save_checkpoint
from .core.quantization import QuantizerState, fit_quantizer
from .core.schema import PersonProfile, TabularRecord
from .core.validation import GrammarVerdict, failure_year_density, validate_sequence
from .core.vocabulary import Vocabulary

# Processing
from .processing.causal import (
    AteResult,
    ate_diff_means,
    child_penalty,
    event_study_ols,
    local_ate_rdd,
    paired_bootstrap,
    propensity_match,
)
from .processing.evaluation import MetricReport, next_token_metrics
from .processing.experiments import run_experiment
from .processing.generation import generate, monte_carlo_outcomes, truncate_at_cutoff
from .processing.synthesis import apply_sample_selection, generate_population
from .processing.training import load_model, split_population, train

# Parameters
from .models.parameters import (
    ConfigurationError,
    CutoffSpec,
    ExperimentConfig,
    GenerationConfig,
    ModelConfig,
    PipelineConfig,
    PlantedEffects,
    SplitSpec,
    SynthConfig,
    TrainConfig,
)

# Presets
from .models.presets import PresetManager, get_builtin_preset, list_builtin_presets

# Utilities
from .utils.logging import get_logger, setup_logging

__all__ = [
    # Core
    "PersonProfile",
    "TabularRecord",
    "QuantizerState",
    "fit_quantizer",
    "Vocabulary",
    "LifeSequence",
    "build_vocabulary",
    "encode_individual",
    "encode_population",
    "decode_tokens",
    "parse_events",
    "GrammarVerdict",
    "validate_sequence",
    "failure_year_density",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "LifeSequenceTransformer",
    "build_model",
    "parameter_census",
    # Processing
    "generate_population",
    "apply_sample_selection",
    "split_population",
    "train",
    "load_model",
    "generate",
    "truncate_at_cutoff",
    "monte_carlo_outcomes",
    "MetricReport",
    "next_token_metrics",
    "AteResult",
    "ate_diff_means",
    "local_ate_rdd",
    "paired_bootstrap",
    "event_study_ols",
    "child_penalty",
    "propensity_match",
    "run_experiment",
    # Parameters
    "ConfigurationError",
    "PlantedEffects",
    "SynthConfig",
    "ModelConfig",
    "TrainConfig",
    "SplitSpec",
    "GenerationConfig",
    "CutoffSpec",
    "ExperimentConfig",
    "PipelineConfig",
    # Presets
    "PresetManager",
    "get_builtin_preset",
    "list_builtin_presets",
    # Utilities
    "setup_logging",
    "get_logger",
]
