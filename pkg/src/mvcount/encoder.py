"""Per-view multi-level image features and the 2-D density head.

The backbone is deliberately small: a stride-2 stem followed by one stride-2
stage per pyramid level, merged top-down FPN style. Level ``l`` has stride
``2 ** (l + 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from mvcount.density3d import DENSITY_UNIT, OUTPUT_INIT_SCALE
from mvcount.errors import ShapeError
from mvcount.numerics import Conv, Module, Tensor, as_tensor, relu, upsample_nearest



@dataclass
class FeaturePyramid:
    levels: List[Tensor]  # finest first, each [C, H / stride, W / stride]
    strides: List[int]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, level: int) -> Tensor:
        return self.levels[level]


class ImageEncoder(Module):
    def __init__(self, channels: int, rng: np.random.Generator, levels: int = 2, dtype=None):
        if channels % 2:
            raise ValueError("channel count must be even")
        self.channels = channels
        self.num_levels = levels
        self.stem = Conv(3, channels // 2, 3, rng, ndim=2, stride=2, dtype=dtype)
        self.stages = [Conv(channels // 2, channels, 3, rng, ndim=2, stride=2, dtype=dtype)]
        self.stages += [Conv(channels, channels, 3, rng, ndim=2, stride=2, dtype=dtype) for _ in range(levels - 1)]
        self.laterals = [Conv(channels, channels, 1, rng, ndim=2, dtype=dtype) for _ in range(levels)]

    @property
    def strides(self) -> List[int]:
        return [2 ** (l + 2) for l in range(self.num_levels)]

    def __call__(self, image) -> FeaturePyramid:
        return extract_features(self, image)


def extract_features(encoder: ImageEncoder, image) -> FeaturePyramid:
    """Run the backbone on one [3, H, W] image."""
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a [3, H, W] image, got {image.shape}")
    coarsest = encoder.strides[-1]
    if image.shape[1] % coarsest or image.shape[2] % coarsest:
        raise ShapeError(f"image size {image.shape[1:]} not divisible by {coarsest}")
    x = relu(encoder.stem(image))
    stages = []
    for stage in encoder.stages:
        x = relu(stage(x))
        stages.append(x)
    merged = [None] * encoder.num_levels
    top = None
    for l in reversed(range(encoder.num_levels)):
        lateral = encoder.laterals[l](stages[l])
        top = lateral if top is None else lateral + upsample_nearest(top, 2)
        merged[l] = top
    return FeaturePyramid(merged, encoder.strides)


class DensityHead2D(Module):
    """conv3x3 -> ReLU -> conv1x1 -> ReLU on the finest pyramid level."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=None):
        self.hidden = Conv(channels, channels, 3, rng, ndim=2, dtype=dtype)
        self.out = Conv(channels, 1, 1, rng, ndim=2, dtype=dtype)
        self.out.weight.data *= OUTPUT_INIT_SCALE  # start near an empty density
        self.unit = DENSITY_UNIT

    def __call__(self, features) -> Tensor:
        return predict_density2d(self, features)


def predict_density2d(head: DensityHead2D, features) -> Tensor:
    """Non-negative [1, H/4, W/4] density from level-0 features."""
    return relu(head.out(relu(head.hidden(features)))) * head.unit
