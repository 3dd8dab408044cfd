"""Strict JSON experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .degrade import PRESET_NAMES
from .model import ArchConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_presets(names, where: str) -> list[str]:
    names = list(names)
    bad = [n for n in names if n not in PRESET_NAMES]
    if bad or not names:
        raise ConfigError(f"{where}: invalid presets {bad}; valid presets: {', '.join(PRESET_NAMES)}")
    return names


@dataclass
class SyntheticSource:
    seed: int = 0
    count: int = 16
    size: int = 96


@dataclass
class DataConfig:
    hr_dir: str | None = None
    patch: int = 24  # LR patch side
    stride: int | None = None  # LR stride, defaults to patch
    limit: int | None = None
    copies: int = 1
    seed: int = 0
    synthetic: SyntheticSource | dict | None = None

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = _strict(SyntheticSource, self.synthetic, "data.synthetic")
        if (self.hr_dir is None) == (self.synthetic is None):
            raise ConfigError("data: give exactly one of hr_dir or synthetic")
        if self.patch < 1 or self.copies < 1:
            raise ConfigError("data: patch and copies must be positive")


@dataclass
class EvalConfig:
    presets: list[str] = field(default_factory=lambda: list(PRESET_NAMES))
    seed: int = 0
    hr_dir: str | None = None
    synthetic: SyntheticSource | dict | None = None

    def __post_init__(self):
        self.presets = _check_presets(self.presets, "eval.presets")
        if isinstance(self.synthetic, dict):
            self.synthetic = _strict(SyntheticSource, self.synthetic, "eval.synthetic")


@dataclass
class ExperimentConfig:
    data: DataConfig
    degradations: list[str]
    arch: ArchConfig
    train: TrainConfig
    eval: EvalConfig
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "degradations": list(self.degradations),
            "arch": self.arch.to_dict(),
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
            "out_dir": self.out_dir,
        }


def parse_config(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"data", "degradations", "arch", "train", "eval", "out_dir"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    if "data" not in d:
        raise ConfigError("missing required key 'data'")
    train = dict(d.get("train", {}))
    if "betas" in train:
        train["betas"] = tuple(train["betas"])
    return ExperimentConfig(
        data=_strict(DataConfig, d["data"], "data"),
        degradations=_check_presets(d.get("degradations", PRESET_NAMES), "degradations"),
        arch=_strict(ArchConfig, d.get("arch", {}), "arch"),
        train=_strict(TrainConfig, train, "train"),
        eval=_strict(EvalConfig, d.get("eval", {}), "eval"),
        out_dir=str(d.get("out_dir", "runs/default")),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw)
