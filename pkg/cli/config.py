"""
Run configuration: presets, config files and command-line overrides.

Values are collected as dotted keys (``train.lr``) from the preset in
config/defaults.yaml, then the user's YAML file, then ``--set`` overrides,
validated against the dataclass fields of each section and built into
frozen configs.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import yaml

from data.synthetic import SyntheticSpec
from models.backbone import BackboneConfig
from puzzles.geometry import GeometryConfig
from training.config import TrainConfig

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).resolve().parent.parent / "config" / "defaults.yaml"
PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    """Invalid configuration file, key or value."""


@dataclass(frozen=True)
class DataConfig:
    """Dataset location and the synthetic benchmark's generation settings."""

    root: str = "runs/data"
    num_classes: int = 8
    clips_per_class: int = 25
    test_clips_per_class: int = 10
    noise_level: float = 0.1
    max_shapes: int = 2
    watermark: bool = False

    def __post_init__(self):
        self.synthetic_spec(seed=0)

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            num_classes=self.num_classes,
            clips_per_class=self.clips_per_class,
            test_clips_per_class=self.test_clips_per_class,
            noise_level=self.noise_level,
            max_shapes=self.max_shapes,
            watermark=self.watermark,
            seed=seed,
        )


SECTIONS = {
    "geometry": GeometryConfig,
    "backbone": BackboneConfig,
    "train": TrainConfig,
    "data": DataConfig,
}


@dataclass(frozen=True)
class RunConfig:
    preset: str
    geometry: GeometryConfig
    backbone: BackboneConfig
    train: TrainConfig
    data: DataConfig

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "geometry": self.geometry.to_dict(),
            "backbone": self.backbone.to_dict(),
            "train": self.train.to_dict(),
            "data": asdict(self.data),
        }


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if loaded is None:
        return {}
    if isinstance(loaded, str) and "=" in loaded:
        raise ConfigError(f"{path}: flat key=value files are not accepted; write YAML sections or use --set key=value")
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return loaded


def load_defaults(path=DEFAULTS_PATH) -> dict:
    return load_yaml(path)


def flatten(mapping: dict, prefix: str = "") -> Dict[str, object]:
    """Nested sections and dotted keys both become 'section.field' entries."""
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def parse_override(text: str) -> Tuple[str, object]:
    """'train.lr=0.02' -> ('train.lr', 0.02); the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else raw
    except yaml.YAMLError as e:
        raise ConfigError(f"override {text!r}: cannot parse value: {e}") from e
    return key.strip(), value


def validate_keys(values: Dict[str, object]):
    """Raise ConfigError listing every key that is not a known section field."""
    unknown = []
    for key in values:
        section, _, name = key.partition(".")
        known = {f.name for f in fields(SECTIONS[section])} if section in SECTIONS else set()
        if name not in known:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")


def _section(values: Dict[str, object], section: str) -> dict:
    prefix = f"{section}."
    return {key[len(prefix):]: value for key, value in values.items() if key.startswith(prefix)}


def build_run_config(preset: str = "desk", config_path=None,
                     overrides: Optional[Iterable[Tuple[str, object]]] = None,
                     defaults: Optional[dict] = None) -> RunConfig:
    """
    Resolve preset < file < overrides into a validated RunConfig.

    Raises:
        ConfigError on unknown presets, unknown keys or invalid values
    """
    defaults = load_defaults() if defaults is None else defaults
    presets = defaults.get("presets", {})
    if preset not in presets:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(presets)}")

    values = flatten(presets[preset])
    if config_path is not None:
        values.update(flatten(load_yaml(config_path)))
    for key, value in overrides or ():
        values[key] = value
    validate_keys(values)

    try:
        geometry = GeometryConfig(**_section(values, "geometry"))
        backbone_values = _section(values, "backbone")
        variant = backbone_values.pop("variant", "tiny")
        backbone = replace(BackboneConfig.for_variant(variant), **backbone_values)
        train = TrainConfig(**_section(values, "train"))
        data = DataConfig(**_section(values, "data"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    config = RunConfig(preset, geometry, backbone, train, data)
    logger.debug(f"Resolved run config: {config.to_dict()}")
    return config
