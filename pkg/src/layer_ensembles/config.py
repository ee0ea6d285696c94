"""Run configuration stored as flat ``section.key = value`` lines.

The file is a TOML subset (dotted keys, scalars and arrays), so any TOML
reader can parse it; :func:`dumps` writes the canonical form back.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data.synthetic import DatasetSpec
from .model.network import ModelConfig
from .training import TrainConfig


class ConfigValidationError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n  " + "\n  ".join(problems))


@dataclass
class ExperimentConfig:
    skip: int = 1
    tau: float = 0.90
    poor_threshold: float = 0.90
    corruption: str = "gaussian"
    noise_mean: float = 0.3
    noise_std: float = 0.7
    kernel_size: int = 9
    fractions: tuple[float, ...] = (0.0, 0.5, 1.0)


@dataclass
class DatasetSection:
    path: str = ""
    train: int = 500
    val: int = 100
    test: int = 120
    image_size: int = 64
    num_classes: int = 1
    low_contrast_fraction: float = 0.2
    contrast: tuple[float, ...] = (0.9, 1.6)
    low_contrast: tuple[float, ...] = (0.4, 0.75)
    noise: float = 0.12


@dataclass
class ModelSection:
    depth: int = 3
    base_channels: int = 8
    final_block: bool = False
    loss: str = "generalized-dice"
    ce_weights: tuple[float, ...] = ()


@dataclass
class TrainSection:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    lr_factor: float = 0.5
    patience: int = 5
    min_delta: float = 1e-4
    augment: bool = True
    time_budget: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    threads: int = 1
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    # -- derived component configs --
    def dataset_spec(self) -> DatasetSpec:
        d = self.dataset
        return DatasetSpec(train=d.train, val=d.val, test=d.test, image_size=d.image_size,
                           num_classes=d.num_classes, low_contrast_fraction=d.low_contrast_fraction,
                           contrast=d.contrast, low_contrast=d.low_contrast, noise=d.noise,
                           seed=self.seed)

    def model_config(self) -> ModelConfig:
        m = self.model
        k = 1 if self.dataset.num_classes == 1 else self.dataset.num_classes + 1
        return ModelConfig(depth=m.depth, base_channels=m.base_channels, num_classes=k,
                           input_size=(self.dataset.image_size, self.dataset.image_size),
                           final_block=m.final_block, loss=m.loss, ce_weights=m.ce_weights,
                           seed=self.seed)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, lr_factor=t.lr_factor,
                           patience=t.patience, min_delta=t.min_delta, augment=t.augment,
                           seed=self.seed, time_budget=t.time_budget)

    def num_heads(self) -> int:
        return self.model_config().num_heads


SECTIONS = ("dataset", "model", "train", "experiment")


def _coerce(name: str, value: Any, default: Any, problems: list[str]) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, tuple):
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return tuple(float(v) for v in value)
    problems.append(f"{name}: expected {type(default).__name__}, got {value!r}")
    return default


def from_dict(raw: dict) -> RunConfig:
    problems: list[str] = []
    cfg = RunConfig()
    for key, value in raw.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"{key}: expected a table of keys")
                continue
            section = getattr(cfg, key)
            known = {f.name: f for f in dataclasses.fields(section)}
            for sub, v in value.items():
                if sub not in known:
                    problems.append(f"{key}.{sub}: unknown key")
                    continue
                setattr(section, sub, _coerce(f"{key}.{sub}", v, getattr(section, sub), problems))
        elif key in ("seed", "out_dir", "threads"):
            setattr(cfg, key, _coerce(key, value, getattr(cfg, key), problems))
        else:
            problems.append(f"{key}: unknown key")
    problems += validate(cfg) if not problems else []
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    p: list[str] = []
    d, m, t, e = cfg.dataset, cfg.model, cfg.train, cfg.experiment
    if cfg.seed < 0:
        p.append("seed: must be non-negative")
    if cfg.threads < 1:
        p.append("threads: must be >= 1")
    for name in ("train", "val", "test"):
        if getattr(d, name) < 0:
            p.append(f"dataset.{name}: must be non-negative")
    if d.num_classes not in (1, 3):
        p.append("dataset.num_classes: must be 1 or 3")
    if d.image_size < 16:
        p.append("dataset.image_size: must be >= 16")
    if not 0 <= d.low_contrast_fraction <= 1:
        p.append("dataset.low_contrast_fraction: must lie in [0, 1]")
    for name in ("contrast", "low_contrast"):
        if len(getattr(d, name)) != 2:
            p.append(f"dataset.{name}: needs two values (low, high)")
    if m.depth < 2:
        p.append("model.depth: must be >= 2")
    elif d.image_size % 2 ** (m.depth - 1):
        p.append(f"model.depth: image size {d.image_size} is not divisible by 2^(depth-1)")
    if m.base_channels < 1:
        p.append("model.base_channels: must be positive")
    if m.loss not in ("generalized-dice", "weighted-cross-entropy"):
        p.append("model.loss: must be generalized-dice or weighted-cross-entropy")
    k = 1 if d.num_classes == 1 else d.num_classes + 1
    if m.ce_weights and len(m.ce_weights) != max(k, 2):
        p.append(f"model.ce_weights: needs {max(k, 2)} entries")
    if t.epochs < 1:
        p.append("train.epochs: must be >= 1")
    if t.batch_size < 1:
        p.append("train.batch_size: must be >= 1")
    if not t.lr > 0:
        p.append("train.lr: must be positive")
    if not 0 < t.lr_factor < 1:
        p.append("train.lr_factor: must lie in (0, 1)")
    if t.patience < 1:
        p.append("train.patience: must be >= 1")
    if not p:
        n = 2 * m.depth - 1 + int(m.final_block)
        # AULA needs at least two agreement values, i.e. three retained heads
        if not 0 <= e.skip <= n - 3:
            p.append(f"experiment.skip: must lie in [0, {n - 3}] for {n} heads")
    if not 0 < e.tau <= 1:
        p.append("experiment.tau: must lie in (0, 1]")
    if e.corruption not in ("gaussian", "random-conv"):
        p.append("experiment.corruption: must be gaussian or random-conv")
    if e.noise_std < 0:
        p.append("experiment.noise_std: must be non-negative")
    if e.kernel_size < 1 or e.kernel_size % 2 == 0:
        p.append("experiment.kernel_size: must be a positive odd integer")
    if any(not 0 <= f <= 1 for f in e.fractions):
        p.append("experiment.fractions: values must lie in [0, 1]")
    return p


def loads(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError([f"parse error: {exc}"]) from exc
    return from_dict(raw)


def load(path: str | Path) -> RunConfig:
    return loads(Path(path).read_text())


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite values cannot be stored")
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot store {value!r}")


def dumps(cfg: RunConfig) -> str:
    lines = [f"{k} = {_fmt(getattr(cfg, k))}" for k in ("seed", "out_dir", "threads")]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
