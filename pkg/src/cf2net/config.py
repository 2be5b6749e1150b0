"""Configuration management for cf2net.

Configuration is layered: command-line flags > configuration file (TOML, or the
JSON written next to every run) > ``CF2NET_`` environment variables > defaults.
"""

from contextvars import ContextVar
from pathlib import Path
from typing import Any, Literal, Self

from pydantic import BaseModel, Field, ValidationError, computed_field, model_validator
from pydantic_settings import (
    BaseSettings,
    JsonConfigSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from cf2net.exceptions import ConfigurationError

RESOLVED_CONFIG_NAME = "resolved_config.json"

_config_file: ContextVar[Path | None] = ContextVar("cf2net_config_file", default=None)


# =============================================================================
# Section Models
# =============================================================================


class DataConfig(BaseModel):
    """Dataset locations and preprocessing options."""

    # Raw dataset root with images/ and masks/; synthetic data is materialized here too
    root: Path | None = None
    prepared_dir: Path = Path("data/prepared")
    synthetic_count: int | None = Field(default=None, ge=1)
    band_radius: int = Field(default=5, ge=1)
    horizontal_flip: bool = False
    num_workers: int = Field(default=0, ge=0)


class SuperpixelConfig(BaseModel):
    """SLIC parameters for the super-pixel input channel."""

    k: int = Field(default=2000, ge=1)
    compactness: float = Field(default=10.0, gt=0)
    iterations: int = Field(default=10, ge=1)
    # None means (N / k) / 4
    min_size: int | None = Field(default=None, ge=1)


class ModelConfig(BaseModel):
    """Architectural hyperparameters, including the ablation toggles."""

    image_size: int = 256
    base_width: int = 64
    fsp_width: int = 64
    em_channels: int = 32
    aspp_rates: list[int] = Field(default_factory=lambda: [2, 4, 6])
    use_fsp: bool = True
    use_aspp: bool = True
    use_ec: bool = True
    use_superpixel: bool = True
    backbone_skips: bool = False

    @computed_field
    @property
    def input_channels(self) -> int:
        """Image channel plus the super-pixel channel when enabled."""
        return 2 if self.use_superpixel else 1

    @model_validator(mode="after")
    def check_invariants(self) -> Self:
        """Reject configurations the network cannot be built from."""
        if self.image_size < 16 or self.image_size % 16:
            raise ValueError(
                f"image_size must be a positive multiple of 16 (got {self.image_size})"
            )
        for name in ("base_width", "fsp_width", "em_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1 (got {getattr(self, name)})")
        if not self.aspp_rates or any(rate < 1 for rate in self.aspp_rates):
            raise ValueError(f"aspp_rates must be nonempty and positive (got {self.aspp_rates})")
        if self.use_aspp and not self.use_fsp:
            raise ValueError("use_aspp requires use_fsp")
        if self.use_ec and not self.use_fsp:
            raise ValueError("use_ec requires use_fsp")
        return self


class LossWeights(BaseModel):
    """Coefficients of the weighted-balanced loss family."""

    lambda1: float = Field(default=1.0, ge=0)
    lambda2: float = Field(default=1.0, ge=0)
    lambda3: float = Field(default=0.1, ge=0)
    mu1: float = Field(default=1.0, ge=0)
    mu2: float = Field(default=1.0, ge=0)
    # False gives the plain (unweighted) dice / edge cross-entropy baseline
    balanced: bool = True
    invert_balance: bool = False
    paper_literal_dice: bool = False
    epsilon: float = Field(default=1e-6, gt=0)


class TrainConfig(BaseModel):
    """Optimizer and training-loop settings."""

    optimizer: Literal["adagrad", "sgd", "adam"] = "adagrad"
    learning_rate: float = Field(default=6e-4, gt=0)
    # Only used by sgd; adagrad has no momentum term
    momentum: float = Field(default=0.9, ge=0)
    batch_size: int = Field(default=4, ge=1)
    epochs: int = Field(default=500, ge=1)
    folds: int = Field(default=4, ge=2)
    grad_clip_norm: float | None = Field(default=None, gt=0)


# =============================================================================
# Experiment Settings
# =============================================================================


class ExperimentConfig(BaseSettings):
    """Fully resolved configuration of one experiment run."""

    seed: int = 0
    out: Path = Path("runs")
    device: str = "auto"
    deterministic: bool = True

    # Logging Configuration
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    data: DataConfig = Field(default_factory=DataConfig)
    superpixel: SuperpixelConfig = Field(default_factory=SuperpixelConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)

    model_config = SettingsConfigDict(
        env_prefix="CF2NET_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        """Put the configuration file between flags and the environment."""
        sources: list[PydanticBaseSettingsSource] = [init_settings]
        config_file = _config_file.get()
        if config_file is not None:
            if config_file.suffix == ".json":
                sources.append(JsonConfigSettingsSource(settings_cls, json_file=config_file))
            else:
                sources.append(TomlConfigSettingsSource(settings_cls, toml_file=config_file))
        sources.extend([env_settings, dotenv_settings])
        return tuple(sources)


def load_config(
    config_file: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Build the experiment configuration.

    Args:
        config_file: Optional TOML (or resolved JSON) configuration file.
        overrides: Nested values from command-line flags; highest precedence.

    Returns:
        ExperimentConfig: The resolved configuration.

    Raises:
        ConfigurationError: If the file is missing or a value is invalid.
    """
    if config_file is not None and not config_file.is_file():
        raise ConfigurationError(f"Configuration file not found: {config_file}")

    token = _config_file.set(config_file)
    try:
        return ExperimentConfig(**(overrides or {}))
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e
    finally:
        _config_file.reset(token)


def write_resolved_config(config: ExperimentConfig, directory: Path) -> Path:
    """Persist the exact resolved config next to a run's outputs."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG_NAME
    path.write_text(config.model_dump_json(indent=2), encoding="utf-8")
    return path
