"""Lifting image features of one view into a voxel volume.

Every voxel is projected into the view; voxels that land inside the frame attend
to the level's feature map with a deformable sampling head around their
reference point. Each layer first mixes voxel neighbourhoods with a 3x3x3
convolution, then runs attention on hit voxels only, then a feed-forward block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mvcount.embedding import ImageCameraEmbedder, VolumeCameraEmbedder
from mvcount.errors import ShapeError
from mvcount.geometry import CameraRig, VoxelGrid, in_frame, project_points, volume_to_scene
from mvcount.numerics import (
    Conv,
    LayerNorm,
    Linear,
    Mlp,
    Module,
    Parameter,
    Tensor,
    as_tensor,
    concat,
    gather_rows,
    grid_sample,
    reshape,
    scatter_rows,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class ReferencePoints:
    uv: np.ndarray  # (Z, Y, X, 2) full-resolution pixels, NaN on misses
    hits: np.ndarray  # (Z, Y, X) bool

    @property
    def hit_rows(self) -> np.ndarray:
        return np.flatnonzero(self.hits.reshape(-1))


def reference_points(grid: VoxelGrid, rig: CameraRig) -> ReferencePoints:
    """Project every voxel of ``grid`` into ``rig``; misses get NaN coordinates."""
    xyz = volume_to_scene(rig, grid.world_points())
    uv, _, in_front = project_points(rig, xyz)
    hits = in_front & in_frame(rig, uv)
    uv = np.where(hits[..., None], uv, np.nan)
    return ReferencePoints(uv, hits)


class DeformableAttention(Module):
    """Multi-head deformable sampling around a reference point in one feature map."""

    def __init__(self, channels: int, rng: np.random.Generator, heads: int = 4, points: int = 4, dtype=None):
        if channels % heads:
            raise ShapeError(f"{channels} channels not divisible into {heads} heads")
        self.channels, self.heads, self.points = channels, heads, points
        self.offsets = Linear(channels, 2 * heads * points, rng, zero_init=True, dtype=dtype)
        self.weights = Linear(channels, heads * points, rng, zero_init=True, dtype=dtype)
        self.value = Linear(channels, channels, rng, dtype=dtype)
        self.output = Linear(channels, channels, rng, dtype=dtype)

    def project_values(self, feature) -> Tensor:
        """Value projection of a [C, H, W] map, returned channel-first."""
        feature = as_tensor(feature)
        flat = transpose(feature, (1, 2, 0))
        return transpose(self.value(flat), (2, 0, 1))

    def __call__(self, query, values, ref_uv: np.ndarray) -> Tensor:
        return deform_attend(self, query, values, ref_uv)


def deform_attend(attn: DeformableAttention, query, values, ref_uv: np.ndarray) -> Tensor:
    """Attend from ``query`` [N, C] into value-projected ``values`` [C, H, W].

    ``ref_uv`` is (N, 2) in the map's own pixel units. Offsets are added in the
    same units. Returns [N, C].
    """
    query = as_tensor(query)
    ref_uv = np.asarray(ref_uv, dtype=float)
    if query.ndim != 2 or query.shape[1] != attn.channels:
        raise ShapeError(f"query must be [N, {attn.channels}], got {query.shape}")
    if ref_uv.shape != (query.shape[0], 2):
        raise ShapeError(f"reference points must be ({query.shape[0]}, 2), got {ref_uv.shape}")
    if not np.all(np.isfinite(ref_uv)):
        raise ValueError("deform_attend called with a missing reference point")
    n, nh, npt = query.shape[0], attn.heads, attn.points
    d = attn.channels // nh
    offsets = reshape(attn.offsets(query), (n, nh, npt, 2))
    weights = softmax(reshape(attn.weights(query), (n, nh, npt)), axis=-1)
    heads = []
    for h in range(nh):
        u = offsets[:, h, :, 0] + ref_uv[:, 0:1]
        v = offsets[:, h, :, 1] + ref_uv[:, 1:2]
        samples = grid_sample(values[h * d:(h + 1) * d], u, v)  # [N, P, d]
        w = reshape(weights[:, h, :], (n, npt, 1))
        heads.append((samples * w).sum(axis=1))
    return attn.output(concat(heads, axis=1))


class LiftingLayer(Module):
    def __init__(self, channels: int, rng: np.random.Generator, heads: int = 4, points: int = 4, dtype=None):
        self.mix = Conv(channels, channels, 3, rng, ndim=3, dtype=dtype)
        self.norm1 = LayerNorm(channels, dtype=dtype)
        self.attention = DeformableAttention(channels, rng, heads, points, dtype=dtype)
        self.norm2 = LayerNorm(channels, dtype=dtype)
        self.ffn = Mlp([channels, 2 * channels, channels], rng, dtype=dtype)

    def __call__(self, q, values, refs: ReferencePoints, stride: int) -> Tensor:
        """``q`` is [Z*Y*X, C] channel-last; returns the same shape."""
        spatial = refs.hits.shape
        c = q.shape[1]
        vol = reshape(transpose(q, (1, 0)), (c,) + spatial)
        mixed = transpose(reshape(self.mix(vol), (c, -1)), (1, 0))
        q = self.norm1(q + mixed)
        rows = refs.hit_rows
        if len(rows):
            ref = refs.uv.reshape(-1, 2)[rows] / stride
            attended = self.attention(gather_rows(q, rows), values, ref)
            q = q + scatter_rows(attended, rows, q.shape[0])
        q = self.norm2(q)
        return q + self.ffn(q)


class ViewLifter(Module):
    """Query, camera embedders and the layer stack of one pyramid level."""

    def __init__(self, channels: int, grid: VoxelGrid, rng: np.random.Generator, heads: int = 4, points: int = 4,
                 layers: int = 2, combine: str = "add", image_embedding: bool = True,
                 volume_embedding: bool = True, dtype=None):
        self.channels = channels
        self.grid = grid
        q = rng.normal(scale=0.1, size=(channels,) + grid.shape)
        self.query = Parameter(q.astype(dtype) if dtype else q)
        self.image_embedder = ImageCameraEmbedder(channels, rng, combine, dtype=dtype) if image_embedding else None
        self.volume_embedder = VolumeCameraEmbedder(channels, rng, combine, dtype=dtype) if volume_embedding else None
        self.layers = [LiftingLayer(channels, rng, heads, points, dtype=dtype) for _ in range(layers)]

    def __call__(self, feature, rig: CameraRig, stride: int, refs: Optional[ReferencePoints] = None) -> Tensor:
        return lift_view(self, feature, rig, stride, refs)


def lift_view(lifter: ViewLifter, feature, rig: CameraRig, stride: int,
              refs: Optional[ReferencePoints] = None) -> Tensor:
    """Lift one view's level map [C, h, w] into a [C, Z, Y, X] volume; misses are zero."""
    feature = as_tensor(feature)
    c = lifter.channels
    if feature.ndim != 3 or feature.shape[0] != c:
        raise ShapeError(f"feature map must be [{c}, h, w], got {feature.shape}")
    refs = reference_points(lifter.grid, rig) if refs is None else refs
    spatial = lifter.grid.shape
    if refs.hits.shape != spatial:
        raise ShapeError("reference points do not match the lifter's grid")
    q = lifter.query
    if lifter.volume_embedder is not None:
        q = lifter.volume_embedder(q, rig)
    if lifter.image_embedder is not None:
        feature = lifter.image_embedder(feature, rig)
    x = transpose(reshape(q, (c, -1)), (1, 0))
    for layer in lifter.layers:
        values = layer.attention.project_values(feature)
        x = layer(x, values, refs, stride)
    x = x * refs.hits.reshape(-1, 1).astype(x.dtype)
    return reshape(transpose(x, (1, 0)), (c,) + spatial)
