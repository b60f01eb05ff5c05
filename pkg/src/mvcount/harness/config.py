"""Experiment configuration and its flat ``key = value`` text form.

Values are JSON literals; lines starting with ``#`` are comments. The hash of
the fully resolved text identifies a run.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from mvcount.density3d import LossWeights
from mvcount.errors import ConfigError
from mvcount.model import ModelSpec
from mvcount.numerics import OptimizerConfig
from mvcount.scenegen import LayoutSpec

TOGGLE_KEYS = {"L": "lifting", "V": "volume_embedding", "A": "learned_aggregation", "I": "image_embedding"}


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    grid_shape: tuple = (8, 32, 32)
    voxel_size: float = 0.25
    voxel_center_offset: float = 0.0
    channels: int = 32
    levels: int = 2
    heads: int = 4
    points: int = 4
    layers: int = 2
    combine: str = "add"
    lifting: bool = True
    volume_embedding: bool = True
    learned_aggregation: bool = True
    image_embedding: bool = True
    aggregation_source: str = "lifted"
    standardize_camera: bool = False
    density_bias_init: float = 2.0  # keeps the rectified density heads active from step 0
    dtype: str = "float64"
    # loss
    lambda_2d: float = 1.0
    alpha: tuple = (1.0, 0.5)
    squared_loss: bool = False
    sigma_3d: float = 2.0  # wider than the renderer default: at 1 voxel the L2 loss shrinks fine-level counts
    sigma_2d: float = 2.0
    # optimization
    optimizer: str = "adam"
    learning_rate: float = 3e-3
    lr_schedule: str = "cosine"  # decays to zero over ``steps``; or "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: Optional[float] = None
    steps: int = 500
    batch_scenes: int = 1  # scenes whose gradients are averaged per optimizer step
    seed: int = 0
    # training data
    train_scenes: int = 8  # size of the fixed scene pool; 0 draws a fresh scene every step
    scene_seed: int = 1000
    people: tuple = (20, 20)  # inclusive range per scene
    terrain: str = "flat"
    occluders: int = 0
    congested: bool = False
    views: tuple = (3, 3)  # inclusive range per scene
    image_size: tuple = (64, 64)
    camera_radius: tuple = (10.0, 13.0)
    camera_height: tuple = (6.0, 8.0)
    focal: tuple = (45.0, 60.0)
    # evaluation
    eval_scenes: int = 20
    eval_seed: int = 5000
    eval_views: Optional[int] = None  # None uses the training view range
    eval_terrain: Optional[str] = None
    perturb_deg: float = 0.0
    perturb_m: float = 0.0

    def __post_init__(self):
        for key in ("grid_shape", "alpha", "people", "views", "image_size", "camera_radius", "camera_height", "focal"):
            value = getattr(self, key)
            if isinstance(value, (int, float)):
                value = (value, value) if key in ("people", "views") else (value,)
            object.__setattr__(self, key, tuple(value))
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if len(self.alpha) < self.levels:
            raise ConfigError(f"{self.levels} levels need {self.levels} alpha weights")
        if self.batch_scenes < 1:
            raise ConfigError("batch_scenes must be at least 1")
        if self.steps < 0 or self.train_scenes < 0 or self.eval_scenes < 0:
            raise ConfigError("step and scene counts must be non-negative")
        if self.views[0] < 1 or self.views[0] > self.views[1]:
            raise ConfigError(f"bad view range {self.views}")

    # -- derived objects ---------------------------------------------------------------------

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.channels, self.levels, self.grid_shape, self.voxel_size, self.voxel_center_offset,
                         self.heads, self.points, self.layers, self.combine, self.lifting, self.volume_embedding,
                         self.learned_aggregation, self.image_embedding, self.aggregation_source)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_2d, self.alpha[: self.levels], self.squared_loss)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(self.optimizer, self.beta1, self.beta2, grad_clip=self.grad_clip)

    def layout_spec(self, views=None) -> LayoutSpec:
        v = self.views if views is None else views
        v = int(v[0]) if isinstance(v, tuple) and v[0] == v[1] else v
        return LayoutSpec(views=v, radius=self.camera_radius, height=self.camera_height, focal=self.focal,
                          image_size=self.image_size)

    def learning_rate_at(self, step: int) -> float:
        if self.lr_schedule == "cosine" and self.steps:
            return 0.5 * self.learning_rate * (1.0 + np.cos(np.pi * step / self.steps))
        return self.learning_rate

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def toggles(self) -> str:
        return self.model_spec().toggles

    def with_toggles(self, toggles: str) -> "ExperimentConfig":
        unknown = set(toggles) - set(TOGGLE_KEYS)
        if unknown:
            raise ConfigError(f"unknown toggles {sorted(unknown)}; use a subset of LVAI")
        return replace(self, **{name: key in toggles for key, name in TOGGLE_KEYS.items()})

    # -- text form -------------------------------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            value = list(value) if isinstance(value, tuple) else value
            lines.append(f"{f.name} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {number}: unknown key {key!r}")
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {number}: value for {key!r} is not a JSON literal") from exc
    try:
        return replace(base or ExperimentConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)
