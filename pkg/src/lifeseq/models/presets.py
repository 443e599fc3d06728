"""Preset management for pipeline configurations."""

import copy
import json
from pathlib import Path
from typing import Dict, List, Optional

from .parameters import PipelineConfig, load_pipeline_config


# Built-in presets
BUILTIN_PRESETS: Dict[str, Dict] = {
    "full": {
        "name": "Full scale",
        "description": "10-layer, 8-head decoder with 6 local heads (window 36), d=240, head width 30; "
        "batch 18 x 5 accumulation steps",
        "model": {
            "n_layers": 10,
            "n_heads": 8,
            "n_local_heads": 6,
            "local_window": 36,
            "n_random_features": 256,
            "d_model": 240,
            "d_ff": 960,
            "dropout_rate": 0.1,
            "vocab_size": 661,
            "max_len": 1560,
        },
        "train": {
            "batch_size": 18,
            "accumulation_steps": 5,
            "max_lr": 3e-4,
            "warmup_fraction": 0.30,
            "clip_norm": 5.0,
            "dropout": 0.10,
            "epochs": 20,
        },
        "generation": {"batch_size": 8, "n_simulations": 8},
        "synth": {"n_persons": 20000},
    },
    "desk": {
        "name": "Desk scale",
        "description": "About half a million parameters; trains on a desktop CPU",
        "model": {
            "n_layers": 4,
            "n_heads": 4,
            "n_local_heads": 2,
            "local_window": 36,
            "n_random_features": 64,
            "d_model": 96,
            "d_ff": 384,
            "dropout_rate": 0.1,
            "max_len": 512,
        },
        "train": {
            "batch_size": 18,
            "accumulation_steps": 5,
            "max_lr": 1e-3,
            "epochs": 15,
            "patience": 3,
        },
        "generation": {"batch_size": 8, "n_simulations": 8},
        "synth": {"n_persons": 10000},
    },
    "tiny": {
        "name": "Tiny smoke test",
        "description": "Two small layers and a few hundred persons, for tests and demos",
        "model": {
            "n_layers": 2,
            "n_heads": 2,
            "n_local_heads": 1,
            "local_window": 8,
            "n_random_features": 16,
            "d_model": 16,
            "d_ff": 32,
            "dropout_rate": 0.0,
            "max_len": 256,
        },
        "train": {
            "batch_size": 4,
            "accumulation_steps": 1,
            "max_lr": 3e-3,
            "epochs": 3,
            "token_dropout": 0.0,
        },
        "generation": {"batch_size": 4, "n_simulations": 2, "max_years": 6, "max_new_tokens": 120},
        "synth": {"n_persons": 200},
    },
}


def get_builtin_preset(preset_id: str) -> Optional[PipelineConfig]:
    """Get a built-in preset by ID.

    Args:
        preset_id: Preset identifier (e.g., "desk")

    Returns:
        PipelineConfig object or None if not found
    """
    if preset_id not in BUILTIN_PRESETS:
        return None

    preset = copy.deepcopy(BUILTIN_PRESETS[preset_id])
    preset.pop("name", None)
    preset.pop("description", None)
    return PipelineConfig.from_dict(preset)


def list_builtin_presets() -> List[Dict[str, str]]:
    """List all built-in presets.

    Returns:
        List of dictionaries with preset info (id, name, description)
    """
    return [
        {
            "id": preset_id,
            "name": preset["name"],
            "description": preset["description"],
        }
        for preset_id, preset in BUILTIN_PRESETS.items()
    ]


class PresetManager:
    """Manage custom presets (save/load/list)."""

    def __init__(self, presets_dir: Optional[Path] = None):
        """Initialize preset manager.

        Args:
            presets_dir: Directory to store custom presets.
                        Defaults to ~/.lifeseq/presets
        """
        if presets_dir is None:
            self.presets_dir = Path.home() / ".lifeseq" / "presets"
        else:
            self.presets_dir = Path(presets_dir)

        self.presets_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, name: str) -> Path:
        return self.presets_dir / f"{name.lower().replace(' ', '_')}.json"

    def save_preset(
        self, name: str, config: PipelineConfig, description: str = ""
    ) -> Path:
        """Save a preset to disk.

        Args:
            name: Preset name (will be used as filename)
            config: PipelineConfig to save
            description: Optional description

        Returns:
            Path to saved preset file

        Raises:
            ValueError: If name is invalid
        """
        if not name or "/" in name or "\\" in name:
            raise ValueError("Invalid preset name")

        preset_data = config.to_dict()
        preset_data["name"] = name
        preset_data["description"] = description

        filepath = self._path(name)
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(preset_data, f, indent=2)

        return filepath

    def load_preset(self, name: str) -> PipelineConfig:
        """Load a preset from disk.

        Args:
            name: Preset name (or filename without .json)

        Returns:
            PipelineConfig object

        Raises:
            FileNotFoundError: If preset not found
        """
        filepath = self._path(name)
        if not filepath.exists():
            raise FileNotFoundError(f"Preset not found: {name}")

        with open(filepath, "r", encoding="utf-8") as f:
            preset_data = json.load(f)

        return PipelineConfig.from_dict(preset_data)

    def list_presets(self) -> List[Dict[str, str]]:
        """List all custom presets.

        Returns:
            List of dictionaries with preset info (id, name, description)
        """
        presets = []
        for filepath in sorted(self.presets_dir.glob("*.json")):
            try:
                with open(filepath, "r", encoding="utf-8") as f:
                    data = json.load(f)
                presets.append(
                    {
                        "id": filepath.stem,
                        "name": data.get("name", filepath.stem),
                        "description": data.get("description", ""),
                    }
                )
            except (OSError, json.JSONDecodeError):
                # Skip invalid preset files
                continue

        return presets

    def delete_preset(self, name: str) -> None:
        """Delete a custom preset.

        Raises:
            FileNotFoundError: If preset not found
        """
        filepath = self._path(name)
        if not filepath.exists():
            raise FileNotFoundError(f"Preset not found: {name}")

        filepath.unlink()


def resolve_config(preset: Optional[str] = None, config_path: Optional[str] = None) -> PipelineConfig:
    """Resolve a pipeline config from a TOML file, a built-in preset, or defaults.

    A TOML file wins over a preset name; saved presets are looked up when the
    name is not built in.

    Raises:
        FileNotFoundError: If the config file or preset does not exist
    """
    if config_path:
        return load_pipeline_config(config_path)
    if preset:
        builtin = get_builtin_preset(preset)
        if builtin is not None:
            return builtin
        return PresetManager().load_preset(preset)
    return PipelineConfig()
