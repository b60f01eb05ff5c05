"""Multi-scale 3-D fusion, density heads, counting, and the training loss.

Levels are ordered finest first throughout. The coarsest level passes through
unchanged; each finer level adds the transposed-convolution upsampling of the
level below it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from mvcount.errors import DomainError, ShapeError
from mvcount.numerics import Conv, Deconv3d, Module, Tensor, as_tensor, l2_norm, relu

OUTPUT_INIT_SCALE = 0.05
# Heads emit density in units of DENSITY_UNIT so pre-activations near peaks are O(1);
# at unit scale a single adaptive step can push every voxel below the rectifier at once.
DENSITY_UNIT = 0.001


def fpn_fuse_3d(volume, previous=None, upsample: Optional[Deconv3d] = None) -> Tensor:
    """``X_l = V_l + DeConv(X_prev)``; with no predecessor ``X_l = V_l``."""
    volume = as_tensor(volume)
    if previous is None:
        return volume
    if upsample is None:
        raise ValueError("a predecessor needs an upsampling layer")
    up = upsample(previous)
    if up.shape != volume.shape:
        raise ShapeError(f"upsampled predecessor {up.shape} does not match level volume {volume.shape}")
    return volume + up


class DensityHead3D(Module):
    """conv3x3x3 -> ReLU -> conv3x3x3 -> ReLU, C -> C -> 1."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=None):
        self.hidden = Conv(channels, channels, 3, rng, ndim=3, dtype=dtype)
        self.out = Conv(channels, 1, 3, rng, ndim=3, dtype=dtype)
        self.out.weight.data *= OUTPUT_INIT_SCALE  # start near an empty density
        self.unit = DENSITY_UNIT

    def __call__(self, x) -> Tensor:
        return predict_density3d(self, x)


def predict_density3d(head: DensityHead3D, x) -> Tensor:
    return relu(head.out(relu(head.hidden(x)))) * head.unit


class VolumePyramid(Module):
    """Upsampling layers and one density head per level."""

    def __init__(self, channels: int, levels: int, rng: np.random.Generator, dtype=None):
        self.upsamplers = [Deconv3d(channels, channels, rng, dtype=dtype) for _ in range(levels - 1)]
        self.heads = [DensityHead3D(channels, rng, dtype=dtype) for _ in range(levels)]

    def __call__(self, volumes: Sequence) -> List[Tensor]:
        """Fused level volumes (finest first) -> density per level (finest first)."""
        if len(volumes) != len(self.heads):
            raise ShapeError(f"expected {len(self.heads)} level volumes, got {len(volumes)}")
        fused = [None] * len(volumes)
        prev = None
        for l in reversed(range(len(volumes))):
            prev = fpn_fuse_3d(volumes[l], prev, self.upsamplers[l] if prev is not None else None)
            fused[l] = prev
        return [head(x) for head, x in zip(self.heads, fused)]


def count_from_density(density) -> float:
    data = density.data if isinstance(density, Tensor) else np.asarray(density)
    return float(np.sum(data))


@dataclass
class LossWeights:
    lambda_2d: float = 1.0
    alpha: tuple = (1.0, 0.5)  # finest first
    squared: bool = False

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if self.lambda_2d < 0 or any(a < 0 for a in self.alpha):
            raise DomainError("loss weights must be non-negative")
        if self.alpha and self.alpha[0] != max(self.alpha):
            raise DomainError("the finest level must carry the largest weight")


@dataclass
class DensityBundle:
    pred_2d: list = field(default_factory=list)  # per view, [1, h, w]
    pred_3d: list = field(default_factory=list)  # per level, [1, Z_l, Y_l, X_l]
    gt_2d: list = field(default_factory=list)
    gt_3d: list = field(default_factory=list)


def _distance(pred, gt, squared: bool) -> Tensor:
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=pred.dtype)
    if gt.shape == pred.shape[1:] and pred.shape[0] == 1:  # target given without its channel axis
        gt = gt[None]
    if gt.shape != pred.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {np.shape(gt)} differ")
    diff = pred - gt
    return (diff * diff).sum() if squared else l2_norm(diff)


def total_loss(bundle: DensityBundle, weights: LossWeights) -> Tensor:
    """View-averaged 2-D term times lambda plus alpha-weighted per-level 3-D terms."""
    if len(bundle.pred_2d) != len(bundle.gt_2d):
        raise ShapeError("2-D predictions and targets differ in view count")
    if len(bundle.pred_3d) != len(bundle.gt_3d):
        raise ShapeError("3-D predictions and targets differ in level count")
    if len(bundle.pred_3d) > len(weights.alpha):
        raise ShapeError(f"{len(bundle.pred_3d)} levels but only {len(weights.alpha)} alpha weights")
    loss = None
    for l, (pred, gt) in enumerate(zip(bundle.pred_3d, bundle.gt_3d)):
        term = _distance(pred, gt, weights.squared) * weights.alpha[l]
        loss = term if loss is None else loss + term
    if bundle.pred_2d and weights.lambda_2d > 0:
        views = None
        for pred, gt in zip(bundle.pred_2d, bundle.gt_2d):
            term = _distance(pred, gt, weights.squared)
            views = term if views is None else views + term
        term = views * (weights.lambda_2d / len(bundle.pred_2d))
        loss = term if loss is None else loss + term
    return loss if loss is not None else Tensor(np.zeros(()))
