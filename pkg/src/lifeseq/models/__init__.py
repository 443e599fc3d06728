"""Configuration dataclasses and presets."""

from .parameters import (
    ConfigurationError,
    ExperimentConfig,
    GenerationConfig,
    ModelConfig,
    PipelineConfig,
    PlantedEffects,
    TrainConfig,
)
from .presets import PresetManager, get_builtin_preset

__all__ = [
    "ConfigurationError",
    "PlantedEffects",
    "ModelConfig",
    "TrainConfig",
    "GenerationConfig",
    "ExperimentConfig",
    "PipelineConfig",
    "PresetManager",
    "get_builtin_preset",
]
