"""YAML configuration for training runs and the dubbing pipeline."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .model import TOY_ARCHITECTURE, ArchitectureConfig
from .training import LossConfig, TrainConfig

STAGE_NAMES = ("recognize", "translate", "synthesize", "voice_transfer", "lipsync")
StageName = Literal["recognize", "translate", "synthesize", "voice_transfer", "lipsync"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ArchitectureSection(_Strict):
    preset: Literal["toy", "full"] = "toy"
    face_size: int | None = None
    embed_dim: int | None = None
    encoder_widths: list[int] | None = None
    decoder_widths: list[int] | None = None
    skip_count: int | None = None
    audio_widths: list[int] | None = None
    res_blocks: int | None = None
    res_from_scale: int | None = None
    activation: str | None = None
    norm: str | None = None
    mfcc_bins: int | None = None
    mfcc_frames: int | None = None
    audio_scale: float | None = None
    unit_embeddings: bool | None = None

    def build(self) -> ArchitectureConfig:
        base = TOY_ARCHITECTURE if self.preset == "toy" else ArchitectureConfig()
        overrides = {k: v for k, v in self.model_dump(exclude={"preset"}).items() if v is not None}
        return ArchitectureConfig.from_dict({**base.to_dict(), **overrides}).validate()


class LossSection(_Strict):
    margin: float = Field(2.0, gt=0)
    adv_weight: float = Field(1.0, ge=0)
    recon_weight: float = Field(1.0, ge=0)


class OptimizerSection(_Strict):
    learning_rate: float = Field(1e-3, ge=0)
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(1, ge=1)
    steps: int | None = Field(None, ge=0)


class DataSection(_Strict):
    corpus: Path


class OutputSection(_Strict):
    checkpoint_dir: Path = Path("checkpoints")
    log_csv: Path = Path("checkpoints/losses.csv")
    checkpoint_every: int = Field(0, ge=0)


class StageSection(_Strict):
    name: StageName
    adapter: Literal["file", "command", "internal"]
    config: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _adapter_fits(self):
        if self.adapter == "internal" and self.name != "lipsync":
            raise ValueError(f"only the lipsync stage has an internal adapter, not {self.name!r}")
        if self.adapter == "file" and "path" not in self.config:
            raise ValueError(f"file adapter for {self.name!r} needs config.path")
        if self.adapter == "command" and "command" not in self.config:
            raise ValueError(f"command adapter for {self.name!r} needs config.command")
        if self.name == "lipsync" and self.adapter == "internal" and not self.config.get("checkpoint"):
            raise ValueError("lipsync stage needs config.checkpoint")
        return self


class PipelineSection(_Strict):
    stages: list[StageSection]
    workdir: Path | None = None

    @model_validator(mode="after")
    def _unique(self):
        names = [s.name for s in self.stages]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate stage names: {dupes}")
        return self


class Config(_Strict):
    seed: int = 0
    architecture: ArchitectureSection = Field(default_factory=ArchitectureSection)
    loss: LossSection = Field(default_factory=LossSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    use_discriminator: bool = True
    data: DataSection | None = None
    output: OutputSection = Field(default_factory=OutputSection)
    pipeline: PipelineSection | None = None

    def architecture_config(self) -> ArchitectureConfig:
        return self.architecture.build()

    def loss_config(self) -> LossConfig:
        return LossConfig(**self.loss.model_dump())

    def train_config(self) -> TrainConfig:
        o = self.optimizer
        return TrainConfig(batch_size=o.batch_size, learning_rate=o.learning_rate, betas=tuple(o.betas),
                           epochs=o.epochs, steps=o.steps, seed=self.seed,
                           use_discriminator=self.use_discriminator,
                           checkpoint_every=self.output.checkpoint_every)


def _location(loc) -> str:
    return ".".join(str(p) for p in loc)


def parse_config(data: dict | None, base_dir: Path | None = None) -> Config:
    """Validate a config mapping; relative paths resolve against ``base_dir``."""
    try:
        cfg = Config.model_validate(data or {})
    except ValidationError as exc:
        err = exc.errors()[0]
        key = _location(err["loc"])
        got = err.get("input")
        suffix = f" (got {got!r})" if isinstance(got, (str, int, float)) else ""
        raise ConfigError(f"{key}: {err['msg']}{suffix}", key=key) from None
    cfg.architecture_config()
    if base_dir is not None:
        _resolve_paths(cfg, base_dir)
    return cfg


def _resolve_paths(cfg: Config, base: Path) -> None:
    def fix(p):
        return p if p is None or Path(p).is_absolute() else base / p

    if cfg.data:
        cfg.data.corpus = fix(cfg.data.corpus)
    cfg.output.checkpoint_dir = fix(cfg.output.checkpoint_dir)
    cfg.output.log_csv = fix(cfg.output.log_csv)
    if cfg.pipeline:
        cfg.pipeline.workdir = fix(cfg.pipeline.workdir)
        for stage in cfg.pipeline.stages:
            for key in ("path", "checkpoint"):
                if key in stage.config:
                    stage.config[key] = str(fix(Path(stage.config[key])))


def load_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")
    return parse_config(data, base_dir=path.parent)
