"""Experiment configuration: an INI-style file with sections for the dataset,
model, training, evaluation, and output, each key overridable from the
command line by its dotted name (e.g. ``--train.learning_rate 1e-3``).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import AUGMENT_PRESETS, AugmentPolicy
from .errors import ConfigError
from .models import ConvConfig, ConvBaseline, VisionTransformer, ViTConfig, preset
from .training import TrainConfig

MODEL_KINDS = ("vit", "cnn-baseline")


@dataclass
class DatasetSection:
    manifest: str = ""
    resolution: tuple[int, int] = (32, 32)
    augment: tuple[str, ...] = ()
    augment_probability: float = 0.5


@dataclass
class ModelSection:
    kind: str = "vit"
    preset: str = ""
    name: str = ""
    patch_size: int = 8
    hidden_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_dim: int = 128
    dropout: float = 0.0
    use_class_token: bool = True


@dataclass
class EvalSection:
    bootstrap_resamples: int = 1000
    fps_warmup: int = 2
    fps_iters: int = 10


@dataclass
class OutputSection:
    dir: str = "run"


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0
    precision: str = "64"
    # dotted names the user actually supplied (file or flag), so callers can
    # tell a deliberate setting apart from a default
    explicit: frozenset = field(default_factory=frozenset)


_SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "train": TrainConfig,
    "eval": EvalSection,
    "output": OutputSection,
}
_TOP_LEVEL = ("seed", "precision")


def _parse_resolution(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", " ").split()
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return (n, n)
        if len(parts) == 2:
            return (int(parts[0]), int(parts[1]))
    except ValueError:
        pass
    raise ConfigError(f"cannot parse resolution {text!r} (use e.g. '224' or '224x224')")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {text!r}")


def _coerce(section: str, key: str, text: str, current):
    """Parse a raw string into the type of the field's current value."""
    text = text.strip()
    try:
        if section == "dataset" and key == "resolution":
            return _parse_resolution(text)
        if section == "dataset" and key == "augment":
            if text in AUGMENT_PRESETS:
                return tuple(AUGMENT_PRESETS[text])
            return tuple(n.strip() for n in text.split(",") if n.strip())
        if section == "train" and key == "focal_alpha":
            if text in ("inverse-frequency", "none"):
                return text if text != "none" else None
            return [float(v) for v in text.split(",")]
        if isinstance(current, bool):
            return _parse_bool(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(
            f"cannot parse {section}.{key}={text!r} as {type(current).__name__}") from None


def _apply(config: ExperimentConfig, section: str, key: str, text: str) -> None:
    if section == "" and key in _TOP_LEVEL:
        if key == "seed":
            config.seed = int(text)
        else:
            if text not in ("32", "64"):
                raise ConfigError(f"precision must be 32 or 64, got {text!r}")
            config.precision = text
        return
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    target = getattr(config, section if section != "eval" else "eval")
    if not hasattr(target, key):
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    setattr(target, key, _coerce(section, key, text, getattr(target, key)))


def load_experiment_config(path=None, overrides: list[tuple[str, str]] | None = None
                           ) -> ExperimentConfig:
    """Build a config from an optional file plus dotted-name overrides
    (applied after the file, so flags win)."""
    config = ExperimentConfig()
    explicit: set[str] = set()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section == "run":
                for key, value in parser.items(section):
                    if key not in _TOP_LEVEL:
                        raise ConfigError(f"unknown key {key!r} in section [run]")
                    _apply(config, "", key, value)
                    explicit.add(key)
                continue
            for key, value in parser.items(section):
                _apply(config, section, key, value)
                explicit.add(f"{section}.{key}")
    for dotted, value in overrides or ():
        if dotted in _TOP_LEVEL:
            _apply(config, "", dotted, value)
            explicit.add(dotted)
            continue
        if "." not in dotted:
            raise ConfigError(
                f"override {dotted!r} is not of the form section.key")
        section, key = dotted.split(".", 1)
        _apply(config, section, key, value)
        explicit.add(dotted)
    # revalidate the train section: direct setattr bypasses __post_init__
    config.train = TrainConfig(**{f.name: getattr(config.train, f.name)
                                  for f in fields(TrainConfig)})
    config.explicit = frozenset(explicit)
    return config


def build_policy(config: ExperimentConfig) -> AugmentPolicy | None:
    if not config.dataset.augment:
        return None
    return AugmentPolicy.from_names(
        config.dataset.augment, probability=config.dataset.augment_probability)


def build_model(config: ExperimentConfig, num_classes: int, seed: int):
    """Construct the configured model at the configured resolution."""
    section = config.model
    resolution = config.dataset.resolution
    if section.kind == "cnn-baseline":
        model = ConvBaseline(ConvConfig(resolution, num_classes), seed=seed,
                             name=section.name or "cnn-baseline")
        return model
    if section.kind != "vit":
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {section.kind!r}")
    if section.preset:
        vit_config = preset(section.preset, resolution, num_classes,
                            dropout=section.dropout)
        default_name = section.preset
    else:
        vit_config = ViTConfig(
            image_size=resolution,
            patch_size=section.patch_size,
            hidden_dim=section.hidden_dim,
            depth=section.depth,
            heads=section.heads,
            mlp_dim=section.mlp_dim,
            num_classes=num_classes,
            dropout=section.dropout,
            use_class_token=section.use_class_token,
        )
        default_name = "vit"
    return VisionTransformer(vit_config, seed=seed, name=section.name or default_name)
