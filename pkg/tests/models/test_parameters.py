"""Tests for pipeline parameter classes and TOML loading."""

import pytest

from lifeseq.models.parameters import (
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
    derive_seed,
    load_effects,
    load_pipeline_config,
)


@pytest.mark.unit
class TestValidation:
    """Test suite for __post_init__ validation."""

    def test_defaults_are_valid(self):
        for cls in (PlantedEffects, SynthConfig, ModelConfig, TrainConfig, SplitSpec, GenerationConfig):
            cls()

    def test_model_head_divisibility(self):
        with pytest.raises(ConfigurationError, match="divisible by n_heads"):
            ModelConfig(d_model=30, n_heads=4)

    def test_model_local_heads_bound(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(n_heads=2, n_local_heads=3)

    def test_model_odd_head_dim(self):
        with pytest.raises(ConfigurationError, match="even"):
            ModelConfig(d_model=12, n_heads=4)

    def test_explicit_head_dim(self):
        config = ModelConfig(d_model=240, n_heads=8, head_dim=64)
        assert config.resolved_head_dim == 64
        assert ModelConfig(d_model=32, n_heads=4).resolved_head_dim == 8

    def test_split_must_sum_to_one(self):
        with pytest.raises(ConfigurationError, match="sum to 1"):
            SplitSpec(train=0.5, validation=0.2, test=0.2)

    def test_train_warmup_fraction(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(warmup_fraction=1.0)
        assert TrainConfig(batch_size=18, accumulation_steps=5).effective_batch_size == 90

    def test_generation_sampling_mode(self):
        with pytest.raises(ConfigurationError):
            GenerationConfig(sampling="beam")
        GenerationConfig(sampling="greedy", temperature=0.0)

    def test_synth_shares(self):
        with pytest.raises(ConfigurationError, match="sum to at most 1"):
            SynthConfig(displaced_share=0.6, mother_share=0.6)

    def test_effects_ranges(self):
        with pytest.raises(ConfigurationError):
            PlantedEffects(maternity_income_drop=1.0)
        with pytest.raises(ConfigurationError):
            PlantedEffects(benefit_noise_sd=-1.0)

    def test_cutoff_anchor(self):
        with pytest.raises(ConfigurationError):
            CutoffSpec("graduation")

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigurationError, match="Unknown ModelConfig keys"):
            ModelConfig.from_dict({"n_layers": 2, "width": 4})


@pytest.mark.unit
class TestExperimentConfig:
    """Test suite for benchmark settings."""

    @pytest.mark.parametrize(
        "name, offset", [("pension_1y", -1), ("pension_4y", -4), ("unemployment", 0), ("maternity", 0)]
    )
    def test_default_offsets(self, name, offset):
        assert ExperimentConfig(name).resolved_offset == offset

    def test_explicit_offset_wins(self):
        assert ExperimentConfig("pension_1y", offset_years=-2).resolved_offset == -2

    def test_event_window_needs_reference(self):
        with pytest.raises(ConfigurationError, match="reference period"):
            ExperimentConfig("maternity", event_window=(0, 5))

    def test_unknown_experiment(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig("lottery")

    def test_lists_become_tuples(self):
        config = ExperimentConfig.from_dict({"name": "maternity", "windows": [[0, 3], [0, 5]]})
        assert config.windows == ((0, 3), (0, 5))
        assert config.to_dict()["windows"] == [[0, 3], [0, 5]]


@pytest.mark.unit
class TestPipelineConfig:
    """Test suite for the full configuration."""

    def test_round_trip(self):
        config = PipelineConfig(
            seed=3,
            model=ModelConfig(n_layers=3),
            experiments=[ExperimentConfig("unemployment", bandwidths=(12, 48))],
            deflator={2000: 0.8},
        )
        restored = PipelineConfig.from_dict(config.to_dict())
        assert restored.to_dict() == config.to_dict()
        assert restored.config_hash() == config.config_hash()

    def test_hash_changes_with_content(self):
        assert PipelineConfig(seed=1).config_hash() != PipelineConfig(seed=2).config_hash()

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError, match="Unknown config sections"):
            PipelineConfig.from_dict({"optimizer": {}})

    def test_load_toml(self, temp_dir):
        path = temp_dir / "run.toml"
        path.write_text(
            'seed = 11\noutput_dir = "runs/test"\n\n[model]\nn_layers = 3\n\n'
            '[[experiments]]\nname = "pension_4y"\nbootstrap_samples = 50\n\n'
            '[deflator]\n"2000" = 0.85\n'
        )
        config = load_pipeline_config(str(path))
        assert config.seed == 11
        assert config.model.n_layers == 3
        assert config.experiments[0].resolved_offset == -4
        assert config.experiments[0].bootstrap_samples == 50
        assert config.deflator == {2000: 0.85}

    def test_invalid_toml(self, temp_dir):
        path = temp_dir / "broken.toml"
        path.write_text("seed = = 3")
        with pytest.raises(ConfigurationError, match="Invalid TOML"):
            load_pipeline_config(str(path))

    def test_missing_file(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            load_pipeline_config(str(temp_dir / "none.toml"))

    def test_load_effects_table(self, temp_dir):
        path = temp_dir / "effects.toml"
        path.write_text("[effects]\nmobility_duration_jump = 6.0\n")
        assert load_effects(str(path)).mobility_duration_jump == 6.0


@pytest.mark.unit
class TestDeriveSeed:
    """Test suite for named seed streams."""

    def test_deterministic_and_distinct(self):
        assert derive_seed(1, "split") == derive_seed(1, "split")
        assert derive_seed(1, "split") != derive_seed(1, "torch")
        assert derive_seed(1, "split") != derive_seed(2, "split")

    def test_non_negative_63_bit(self):
        seed = derive_seed(123, "bootstrap/maternity")
        assert 0 <= seed < 2**63
