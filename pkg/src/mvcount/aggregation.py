"""Per-voxel fusion of the view volumes.

Each view gets a scalar score per voxel from a linear map of its volume
features. The scores are normalized with a softmax over the views that see the
voxel, and the fused volume is the weighted sum of the view volumes.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from mvcount.errors import ShapeError
from mvcount.numerics import Linear, Module, Tensor, as_tensor, masked_softmax, reshape, stack, transpose


class ImportanceScorer(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=None):
        self.channels = channels
        self.linear = Linear(channels, 1, rng, dtype=dtype)

    def __call__(self, features) -> Tensor:
        """[C, Z, Y, X] -> [Z, Y, X] scores."""
        features = as_tensor(features)
        if features.shape[0] != self.channels:
            raise ShapeError(f"scorer expects {self.channels} channels, got {features.shape[0]}")
        spatial = features.shape[1:]
        flat = transpose(reshape(features, (self.channels, -1)), (1, 0))
        return reshape(self.linear(flat), spatial)


def aggregation_weights(scorer: Optional[ImportanceScorer], features: Sequence, masks: Sequence[np.ndarray]) -> Tensor:
    """Softmax of the per-view scores over the hit set of every voxel.

    Returns [N, Z, Y, X]; entries off the hit set are zero, and voxels no view
    hits are zero for every view. ``scorer=None`` gives the uniform average.
    """
    if len(features) != len(masks):
        raise ShapeError(f"{len(features)} view features but {len(masks)} hit masks")
    if not len(features):
        raise ShapeError("aggregation needs at least one view")
    mask = np.stack([np.asarray(m, dtype=bool) for m in masks])
    if scorer is None:
        scores = Tensor(np.zeros(mask.shape))
    else:
        scores = stack([scorer(f) for f in features])
    if scores.shape != mask.shape:
        raise ShapeError(f"scores {scores.shape} do not align with masks {mask.shape}")
    return masked_softmax(scores, mask, axis=0)


def fuse_volumes(volumes: Sequence, weights) -> Tensor:
    """``sum_n W_n * V_n`` with the weights broadcast over channels."""
    weights = as_tensor(weights)
    if len(volumes) != weights.shape[0]:
        raise ShapeError(f"{len(volumes)} volumes but {weights.shape[0]} weight maps")
    fused = None
    for n, vol in enumerate(volumes):
        vol = as_tensor(vol)
        if vol.shape[1:] != weights.shape[1:]:
            raise ShapeError(f"volume {vol.shape} does not match weights {weights.shape[1:]}")
        term = vol * reshape(weights[n], (1,) + weights.shape[1:])
        fused = term if fused is None else fused + term
    return fused
