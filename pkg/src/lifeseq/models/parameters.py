"""Parameter classes for the life-sequence pipeline."""

import hashlib
import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple


class ConfigurationError(ValueError):
    """Raised when a configuration value is out of range or inconsistent."""


ANCHOR_EVENTS = ("first_unemployment", "first_maternity", "retirement")
EXPERIMENT_NAMES = ("pension_1y", "pension_4y", "unemployment", "maternity")
SAMPLING_MODES = ("categorical", "greedy")


def derive_seed(root: int, name: str) -> int:
    """Derive a named random substream seed from the pipeline root seed.

    Args:
        root: Root seed of the run
        name: Stream name (for example "split", "torch", "bootstrap/pension_1y")

    Returns:
        Non-negative 63-bit integer seed
    """
    digest = hashlib.sha256(f"{root}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def _from_known_fields(cls, data: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"Unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class PlantedEffects:
    """Ground-truth causal magnitudes injected into synthetic populations.

    Durations and ages are in months.
    """

    mobility_duration_jump: float = 12.0
    december_retirement_shift: float = 6.0
    maternity_income_drop: float = 0.4
    maternity_decay_years: int = 8
    benefit_base_months: float = 12.0
    benefit_noise_sd: float = 2.0
    retirement_base_age_months: float = 708.0
    retirement_noise_sd: float = 6.0
    income_noise_sd: float = 0.15

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigurationError(f"{f.name} must be finite")
        if self.maternity_decay_years < 1:
            raise ConfigurationError("maternity_decay_years must be at least 1")
        if not 0 <= self.maternity_income_drop < 1:
            raise ConfigurationError("maternity_income_drop must be in [0, 1)")
        if self.benefit_base_months < 1:
            raise ConfigurationError("benefit_base_months must be at least 1")
        if self.retirement_base_age_months <= 0:
            raise ConfigurationError("retirement_base_age_months must be positive")
        for name in ("benefit_noise_sd", "retirement_noise_sd", "income_noise_sd"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PlantedEffects":
        return _from_known_fields(cls, data)


@dataclass
class SynthConfig:
    """Population size, cohort mix and horizon of the synthetic generator."""

    n_persons: int = 2000
    seed: int = 1
    end_year: int = 2015
    displaced_share: float = 0.25
    mother_share: float = 0.25
    retiree_share: float = 0.25
    edge_share: float = 0.02

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.n_persons < 1:
            raise ConfigurationError("n_persons must be at least 1")
        if not 1990 < self.end_year <= 2015:
            raise ConfigurationError("end_year must be in (1990, 2015]")
        shares = (self.displaced_share, self.mother_share, self.retiree_share, self.edge_share)
        if any(s < 0 for s in shares):
            raise ConfigurationError("cohort shares must be non-negative")
        if sum(shares) > 1.0 + 1e-9:
            raise ConfigurationError("cohort shares must sum to at most 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        return _from_known_fields(cls, data)


@dataclass
class ModelConfig:
    """Decoder architecture hyperparameters."""

    n_layers: int = 2
    n_heads: int = 4
    n_local_heads: int = 2
    local_window: int = 36
    n_random_features: int = 32
    d_model: int = 32
    d_ff: int = 128
    dropout_rate: float = 0.1
    vocab_size: int = 0
    max_len: int = 256
    age_Z: int = 4
    year_Z: int = 2
    head_dim: Optional[int] = None  # defaults to d_model // n_heads

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be at least 1")
        if self.n_heads < 1:
            raise ConfigurationError("n_heads must be at least 1")
        if not 0 <= self.n_local_heads <= self.n_heads:
            raise ConfigurationError("n_local_heads must be between 0 and n_heads")
        if self.local_window < 1:
            raise ConfigurationError("local_window must be at least 1")
        if self.n_random_features < 1:
            raise ConfigurationError("n_random_features must be at least 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.resolved_head_dim % 2 != 0:
            raise ConfigurationError(
                f"head dimension must be even for rotary pairs, got {self.resolved_head_dim}"
            )
        if self.d_ff < 1:
            raise ConfigurationError("d_ff must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        if self.vocab_size < 0:
            raise ConfigurationError("vocab_size must be non-negative")
        if self.max_len < 2:
            raise ConfigurationError("max_len must be at least 2")
        for name in ("age_Z", "year_Z"):
            z = getattr(self, name)
            if z not in (2, 4):
                raise ConfigurationError(f"{name} must be 2 or 4")
            if self.d_model % z != 0:
                raise ConfigurationError(f"d_model must be divisible by {name}={z}")

    @property
    def resolved_head_dim(self) -> int:
        """Per-head width used by the attention projections."""
        if self.head_dim is not None:
            return self.head_dim
        return self.d_model // self.n_heads

    @property
    def n_global_heads(self) -> int:
        return self.n_heads - self.n_local_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _from_known_fields(cls, data)


@dataclass
class TrainConfig:
    """Optimisation schedule and regularisation."""

    batch_size: int = 18
    accumulation_steps: int = 5
    max_lr: float = 3e-4
    warmup_fraction: float = 0.30
    clip_norm: float = 5.0
    dropout: float = 0.10
    epochs: int = 20
    patience: int = 3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    token_dropout: float = 0.01
    same_month_shuffle: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.accumulation_steps < 1:
            raise ConfigurationError("accumulation_steps must be at least 1")
        if self.max_lr < 0:
            raise ConfigurationError("max_lr must be non-negative")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigurationError("warmup_fraction must be in (0, 1)")
        if self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("betas must be in [0, 1)")
        if not 0 <= self.token_dropout < 1:
            raise ConfigurationError("token_dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")

    @property
    def effective_batch_size(self) -> int:
        return self.batch_size * self.accumulation_steps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_known_fields(cls, data)


@dataclass
class SplitSpec:
    """Person-level train/validation/test fractions."""

    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        parts = (self.train, self.validation, self.test)
        if any(p < 0 for p in parts):
            raise ConfigurationError("split fractions must be non-negative")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigurationError("split fractions must sum to 1")
        if self.train == 0:
            raise ConfigurationError("train fraction must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SplitSpec":
        return _from_known_fields(cls, data)


@dataclass
class GenerationConfig:
    """Sampling controls for conditional continuation."""

    max_new_tokens: int = 600
    max_years: int = 20
    temperature: float = 1.0
    sampling: str = "categorical"
    batch_size: int = 8
    n_simulations: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.max_new_tokens < 1:
            raise ConfigurationError("max_new_tokens must be at least 1")
        if self.max_years < 1:
            raise ConfigurationError("max_years must be at least 1")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigurationError(f"sampling must be one of {list(SAMPLING_MODES)}")
        if self.sampling == "categorical" and not self.temperature > 0:
            raise ConfigurationError("temperature must be positive for categorical sampling")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.n_simulations < 0:
            raise ConfigurationError("n_simulations must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        return _from_known_fields(cls, data)


@dataclass
class CutoffSpec:
    """Whole-year truncation point relative to an anchor event."""

    anchor_event: str
    offset_years: int = 0

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.anchor_event not in ANCHOR_EVENTS:
            raise ConfigurationError(f"anchor_event must be one of {list(ANCHOR_EVENTS)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CutoffSpec":
        return _from_known_fields(cls, data)


@dataclass
class ExperimentConfig:
    """Settings of one causal benchmark."""

    name: str
    offset_years: Optional[int] = None
    bandwidths: Tuple[int, ...] = (12, 48, 96, 144)
    running_cutoff: int = 480
    windows: Tuple[Tuple[int, int], ...] = ((0, 3), (0, 5), (0, 10))
    event_window: Tuple[int, int] = (-3, 10)
    maternity_offsets: Tuple[int, ...] = (0, -1)
    bootstrap_samples: int = 1000
    min_cohort: int = 10
    covariates: Tuple[str, ...] = ("birth_year", "birth_area", "first_work_year", "first_sector_rank")
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.name not in EXPERIMENT_NAMES:
            raise ConfigurationError(f"experiment must be one of {list(EXPERIMENT_NAMES)}")
        self.bandwidths = tuple(int(h) for h in self.bandwidths)
        self.windows = tuple((int(a), int(b)) for a, b in self.windows)
        self.event_window = (int(self.event_window[0]), int(self.event_window[1]))
        self.maternity_offsets = tuple(int(o) for o in self.maternity_offsets)
        self.covariates = tuple(self.covariates)
        if any(h <= 0 for h in self.bandwidths):
            raise ConfigurationError("bandwidths must be positive")
        if any(a > b for a, b in self.windows):
            raise ConfigurationError("window start must not exceed its end")
        lo, hi = self.event_window
        if not lo <= -1 < hi:
            raise ConfigurationError("event_window must contain the reference period -1")
        if self.bootstrap_samples < 2:
            raise ConfigurationError("bootstrap_samples must be at least 2")
        if self.min_cohort < 1:
            raise ConfigurationError("min_cohort must be at least 1")

    @property
    def resolved_offset(self) -> int:
        """Cutoff offset in years, defaulting per experiment."""
        if self.offset_years is not None:
            return self.offset_years
        return {"pension_1y": -1, "pension_4y": -4, "unemployment": 0, "maternity": 0}[self.name]

    def to_dict(self) -> dict:
        data = asdict(self)
        data["windows"] = [list(w) for w in self.windows]
        data["event_window"] = list(self.event_window)
        data["bandwidths"] = list(self.bandwidths)
        data["maternity_offsets"] = list(self.maternity_offsets)
        data["covariates"] = list(self.covariates)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_known_fields(cls, data)


@dataclass
class PipelineConfig:
    """Complete parameter set for a pipeline run."""

    seed: int = 1
    output_dir: str = "runs/default"
    synth: SynthConfig = field(default_factory=SynthConfig)
    effects: PlantedEffects = field(default_factory=PlantedEffects)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    experiments: List[ExperimentConfig] = field(default_factory=list)
    deflator: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        for year, value in self.deflator.items():
            if not value > 0:
                raise ConfigurationError(f"deflator for {year} must be positive")

    def to_dict(self) -> dict:
        """Convert all parameters to a dictionary."""
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "synth": self.synth.to_dict(),
            "effects": self.effects.to_dict(),
            "split": self.split.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "generation": self.generation.to_dict(),
            "experiments": [e.to_dict() for e in self.experiments],
            "deflator": {str(k): v for k, v in sorted(self.deflator.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        """Create a PipelineConfig from a dictionary (missing sections use defaults)."""
        known = {"seed", "output_dir", "synth", "effects", "split", "model", "train",
                 "generation", "experiments", "deflator", "name", "description"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Unknown config sections: {sorted(unknown)}")
        return cls(
            seed=int(data.get("seed", 1)),
            output_dir=str(data.get("output_dir", "runs/default")),
            synth=SynthConfig.from_dict(data.get("synth", {})),
            effects=PlantedEffects.from_dict(data.get("effects", {})),
            split=SplitSpec.from_dict(data.get("split", {})),
            model=ModelConfig.from_dict(data.get("model", {})),
            train=TrainConfig.from_dict(data.get("train", {})),
            generation=GenerationConfig.from_dict(data.get("generation", {})),
            experiments=[ExperimentConfig.from_dict(e) for e in data.get("experiments", [])],
            deflator={int(k): float(v) for k, v in data.get("deflator", {}).items()},
        )

    def config_hash(self) -> str:
        """Stable SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_toml(path: str) -> dict:
    """Read a TOML file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigurationError: If the file is not valid TOML
    """
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(config_path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Invalid TOML in {path}: {e}") from e


def load_pipeline_config(path: str) -> PipelineConfig:
    """Load and validate a pipeline configuration from TOML."""
    return PipelineConfig.from_dict(load_toml(path))


def load_effects(path: str) -> PlantedEffects:
    """Load planted effects from a TOML file (top level or an [effects] table)."""
    data = load_toml(path)
    return PlantedEffects.from_dict(data.get("effects", data))
