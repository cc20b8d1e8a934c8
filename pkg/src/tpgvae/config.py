"""Declarative experiment configuration (TOML sections).

One file drives the whole pipeline: data generation, model shape, training
hyperparameters, and evaluation protocol. Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .model import ModelConfig, VARIANTS
from .objective import TrainingConfig


class ConfigError(Exception):
    """Raised for unreadable, malformed, or contradictory configuration."""


@dataclass(frozen=True)
class DataConfig:
    root: str = "dataset"
    source: str = "synthetic"
    clips_per_class: int = 25
    clip_length: int = 30
    seed: int = 0
    channels: int = 3
    frame_size: int = 64
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.source not in ("synthetic", "ingested"):
            raise ConfigError(f"data.source must be synthetic or ingested, got {self.source!r}")
        if self.clips_per_class < 1 or self.clip_length < 2:
            raise ConfigError("data.clips_per_class must be >= 1 and clip_length >= 2")


@dataclass(frozen=True)
class EvalConfig:
    horizon: int = 20
    k: int = 10
    metrics: tuple[str, ...] = ("psnr", "ssim", "feat_cosine")
    n_clips: int = 100
    variants: tuple[str, ...] = tuple(VARIANTS)
    sampling_variants: tuple[str, ...] = ()
    table_t: tuple[int, ...] = ()
    seed: int = 0
    embedder_seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.k < 1 or self.n_clips < 1:
            raise ConfigError("eval.horizon, eval.k and eval.n_clips must be >= 1")
        known = {"psnr", "ssim", "feat_cosine"}
        for m in self.metrics:
            if m not in known:
                raise ConfigError(f"unknown metric {m!r}; known: {sorted(known)}")
        for v in (*self.variants, *self.sampling_variants):
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; known: {sorted(VARIANTS)}")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    variant: str = "tpg_vae"
    out_dir: str = "runs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; known: {sorted(VARIANTS)}")

    @property
    def table_t(self) -> tuple[int, ...]:
        """Requested table time steps; defaults to t_p + {5, 10, 15, 20}."""
        if self.eval.table_t:
            return self.eval.table_t
        t_p = self.training.t_p
        return tuple(t_p + d for d in (5, 10, 15, 20) if d <= self.eval.horizon)


def _build(cls, section: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    known_sections = {"data", "model", "training", "eval"}
    known_top = known_sections | {"variant", "out_dir"}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    try:
        data = _build(DataConfig, raw.get("data", {}), "data")
        model_raw = dict(raw.get("model", {}))
        # Frame geometry lives in [data]; [model] inherits unless it disagrees.
        for key, value in (("frame_size", data.frame_size), ("channels", data.channels)):
            stated = model_raw.setdefault(key, value)
            if stated != value:
                raise ConfigError(f"model.{key} = {stated} contradicts data.{key} = {value}")
        return ExperimentConfig(
            data=data,
            model=_build(ModelConfig, model_raw, "model"),
            training=_build(TrainingConfig, raw.get("training", {}), "training"),
            eval=_build(EvalConfig, raw.get("eval", {}), "eval"),
            variant=raw.get("variant", "tpg_vae"),
            out_dir=raw.get("out_dir", "runs"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
