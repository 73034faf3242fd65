"""Experiment configuration: YAML on disk, pydantic models in memory."""

from __future__ import annotations

from typing import Any, Literal, Mapping

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.components.mapping_units import MappingKind
from src.components.network import LayerSpec, NetworkSpec
from src.components.neurons import ResetMode
from src.exception import ConfigError

ENV_PREFIX = "SPIKEMAP_"
TRAINER_CHOICES = ("s2a-resu", "s2a-stsu", "stbp")
_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off", ""}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LayerConfig(_Section):
    kind: Literal["conv", "pool", "fc"]
    out: int = Field(0, ge=0, description="Output channels (conv) or features (fc)")
    kernel: int = Field(3, ge=1)
    stride: int | None = Field(None, ge=1, description="Defaults to 1 for conv and to the kernel for pool")
    padding: int = Field(0, ge=0)

    def to_spec(self) -> LayerSpec:
        if self.kind == "pool":
            return LayerSpec.pool(self.kernel, self.stride)
        if self.kind == "conv":
            return LayerSpec.conv(self.out, self.kernel, self.stride or 1, self.padding)
        return LayerSpec.fc(self.out)


class DataConfig(_Section):
    kind: Literal["blobs", "rings", "idx", "csv"] = "blobs"
    n_samples: int = Field(500, ge=1)
    classes: int = Field(3, ge=2)
    separation: float = Field(4.0, gt=0)
    noise: float = Field(0.5, ge=0)
    images_path: str | None = None
    labels_path: str | None = None
    csv_path: str | None = None
    label_column: str = "label"
    limit: int | None = Field(None, ge=1)
    test_size: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _paths_for_kind(self) -> "DataConfig":
        if self.kind == "idx" and not (self.images_path and self.labels_path):
            raise ValueError("data.kind 'idx' needs images_path and labels_path")
        if self.kind == "csv" and not self.csv_path:
            raise ValueError("data.kind 'csv' needs csv_path")
        return self


class NetworkConfig(_Section):
    layers: list[LayerConfig] = Field(
        default_factory=lambda: [LayerConfig(kind="fc", out=64), LayerConfig(kind="fc", out=3)]
    )
    mapping: Literal["resu", "stsu"] = "stsu"
    reset: Literal["hard", "soft"] = "hard"


class AtaConfig(_Section):
    enabled: bool = True
    tau: float = Field(0.1, gt=0)
    alpha: float = Field(0.1, ge=0, le=1)
    epsilon: float = Field(0.01, ge=0, le=1)


class BnConfig(_Section):
    momentum: float = Field(0.1, ge=0, le=1)
    eps: float = Field(1e-5, gt=0)


class TrainConfig(_Section):
    trainer: Literal["s2a", "stbp"] = "s2a"
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(0.001, ge=0)
    lr_milestones: list[int] = Field(default_factory=list)
    lr_decay: float = Field(0.1, gt=0, le=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0)
    time_steps: int = Field(4, ge=1)
    surrogate_width: float = Field(1.0, gt=0)
    ata: AtaConfig = Field(default_factory=AtaConfig)
    bn: BnConfig = Field(default_factory=BnConfig)


class OutputConfig(_Section):
    out_dir: str = "runs/default"
    write_csv: bool = True
    write_json: bool = True
    write_plots: bool = False


class ExperimentConfig(_Section):
    data: DataConfig = Field(default_factory=DataConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def config_from_dict(payload: Mapping[str, Any] | None) -> ExperimentConfig:
    if payload is None:
        payload = {}
    if not isinstance(payload, Mapping):
        raise ConfigError(f"Config document must be a mapping, got {type(payload).__name__}")
    try:
        return ExperimentConfig.model_validate(dict(payload))
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {_validation_message(e)}") from e


def parse_config(text: str) -> ExperimentConfig:
    try:
        payload = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Config is not valid YAML: {e}") from e
    return config_from_dict(payload)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def _parse_int(name: str, raw) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from e


def _parse_flag(name: str, raw) -> bool:
    if isinstance(raw, bool):
        return raw
    value = str(raw).strip().lower()
    if value in _TRUTHY:
        return True
    if value in _FALSY:
        return False
    raise ConfigError(f"{name} must be a boolean, got {raw!r}")


def trainer_choice(raw: str) -> tuple[str, str | None]:
    """Map a CLI trainer name to ``(trainer, mapping)``; stbp keeps the mapping."""
    if raw not in TRAINER_CHOICES:
        raise ConfigError(f"Unknown trainer {raw!r}, expected one of {TRAINER_CHOICES}")
    if raw == "stbp":
        return "stbp", None
    return "s2a", raw.split("-", 1)[1]


def apply_overrides(
    cfg: ExperimentConfig,
    env: Mapping[str, str] | None = None,
    flags: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Layer environment then CLI values over a parsed config (file < env < flags)."""
    payload = cfg.model_dump(mode="json")

    def _apply(source: Mapping[str, Any], label) -> None:
        if source.get("trainer") is not None:
            trainer, mapping = trainer_choice(source["trainer"])
            payload["train"]["trainer"] = trainer
            if mapping is not None:
                payload["network"]["mapping"] = mapping
        if source.get("steps") is not None:
            payload["train"]["time_steps"] = _parse_int(label("steps"), source["steps"])
        if source.get("epochs") is not None:
            payload["train"]["epochs"] = _parse_int(label("epochs"), source["epochs"])
        if source.get("seed") is not None:
            payload["train"]["seed"] = _parse_int(label("seed"), source["seed"])
        if source.get("out") is not None:
            payload["output"]["out_dir"] = str(source["out"])
        if source.get("no_ata") is not None and _parse_flag(label("no_ata"), source["no_ata"]):
            payload["train"]["ata"]["enabled"] = False

    env = env or {}
    env_values = {
        key[len(ENV_PREFIX):].lower(): value for key, value in env.items() if key.startswith(ENV_PREFIX)
    }
    _apply(env_values, lambda key: ENV_PREFIX + key.upper())
    _apply(dict(flags or {}), lambda key: "--" + key.replace("_", "-"))
    return config_from_dict(payload)


def network_spec_from_config(cfg: ExperimentConfig, input_shape, num_classes: int | None = None) -> NetworkSpec:
    try:
        spec = NetworkSpec(
            input_shape=tuple(input_shape),
            layers=tuple(layer.to_spec() for layer in cfg.network.layers),
            mapping_kind=MappingKind(cfg.network.mapping),
            time_steps=cfg.train.time_steps,
            reset_mode=ResetMode(cfg.network.reset),
        )
        stages = spec.validate()
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Invalid network: {e}") from e
    if num_classes is not None and stages[-1].out != num_classes:
        raise ConfigError(
            f"Classifier has {stages[-1].out} outputs but the dataset has {num_classes} classes"
        )
    return spec
