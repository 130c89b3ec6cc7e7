"""Experiment configuration: strict JSON schema with defaults.

Unknown keys are rejected at every level so a typo cannot silently change an
experiment. serialize -> parse -> serialize is a fixed point, and the config
hash is the sha256 of the canonical serialization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .flow import SamplerConfig
from .simplex import NoiseConfig, TemperatureSchedule
from .toy import ToySpec

MATCHERS = ("fm", "sm", "linear")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 20_000
    batch_size: int = 128
    learning_rate: float = 1e-3  # peak rate; cosine schedule decays from here
    lr_schedule: str = "cosine"  # "cosine" or "constant"
    loss: str | None = None  # None -> matcher default (fm/linear: nll, sm: softmax)

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        frac = step / max(1, self.steps)
        return self.learning_rate * max(0.02, 0.5 * (1.0 + np.cos(np.pi * frac)))


@dataclass(frozen=True)
class SamplingConfig:
    n_steps: int = 100
    mode: str = "denoise"
    eta: float = 0.5  # score-ascent step size; independent of 1/n_steps
    init_tau: float = 2.0
    n_samples: int = 10_000

    def __post_init__(self):
        if self.n_steps < 1 or self.n_samples < 1:
            raise ConfigError("n_steps and n_samples must be >= 1")
        if self.eta <= 0 or self.init_tau <= 0:
            raise ConfigError("eta and init_tau must be positive")

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(n_steps=self.n_steps, mode=self.mode, init_tau=self.init_tau)


@dataclass(frozen=True)
class GuidanceSection:
    gamma: float = 10.0
    n_candidates: int = 10
    top_k: int | None = None
    classifier_seed: int = 0
    n_sequences: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    matcher: str = "fm"
    toy: ToySpec = field(default_factory=ToySpec)
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampler: SamplingConfig = field(default_factory=SamplingConfig)
    guidance: GuidanceSection | None = None
    output_dir: str = "run"
    seed: int = 0

    def __post_init__(self):
        if self.matcher not in MATCHERS:
            raise ConfigError(f"matcher must be one of {MATCHERS}, got {self.matcher!r}")

    @property
    def loss_kind(self) -> str:
        if self.training.loss is not None:
            return self.training.loss
        return "softmax" if self.matcher == "sm" else "nll"

    def to_dict(self) -> dict:
        data = asdict(self)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        """sha256 of the canonical serialization, excluding the output
        location so the hash identifies the experiment, not where it lands."""
        data = self.to_dict()
        data.pop("output_dir")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    if "toy" in kwargs:
        kwargs["toy"] = _build(ToySpec, kwargs["toy"], "toy")
    if "schedule" in kwargs:
        kwargs["schedule"] = _build(TemperatureSchedule, kwargs["schedule"], "schedule")
    if "noise" in kwargs:
        kwargs["noise"] = _build(NoiseConfig, kwargs["noise"], "noise")
    if "training" in kwargs:
        kwargs["training"] = _build(TrainingConfig, kwargs["training"], "training")
    if "sampler" in kwargs:
        kwargs["sampler"] = _build(SamplingConfig, kwargs["sampler"], "sampler")
    if kwargs.get("guidance") is not None:
        kwargs["guidance"] = _build(GuidanceSection, kwargs["guidance"], "guidance")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
