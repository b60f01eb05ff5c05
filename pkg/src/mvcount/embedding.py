"""Camera-parameter embedding of image features and of the volume query.

Each embedder evaluates a small MLP on ``[camera_vector, positional_encoding]`` at
every pixel (or voxel) and merges the result into the features, either by
addition or by element-wise product.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from mvcount.errors import ShapeError
from mvcount.geometry import CameraRig, camera_vector, positional_encoding_image, positional_encoding_volume
from mvcount.numerics import Mlp, Module, Tensor, as_tensor, transpose

COMBINE_MODES = ("add", "hadamard")


class _CameraEmbedder(Module):
    pos_channels = 0
    mode_name = ""
    buffer_names = ("xi_mean", "xi_scale")

    def __init__(self, channels: int, rng: np.random.Generator, combine: str = "add",
                 hidden: Optional[int] = None, dtype=None):
        if combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}, got {combine!r}")
        self.channels = channels
        self.combine = combine
        width = 27 + self.pos_channels
        self.mlp = Mlp([width, hidden or channels, channels], rng, zero_last=True, dtype=dtype)
        if combine == "hadamard":
            self.mlp.layers[-1].bias.data[:] = 1.0
        # per-entry standardization of the camera vector; identity until fitted
        self.xi_mean = np.zeros(27)
        self.xi_scale = np.ones(27)

    @property
    def in_features(self) -> int:
        return self.mlp.in_features

    def fit_standardization(self, rigs: Sequence[CameraRig]) -> None:
        xs = np.stack([camera_vector(r, self.mode_name) for r in rigs])
        self.xi_mean = xs.mean(axis=0)
        std = xs.std(axis=0)
        self.xi_scale = np.where(std > 1e-12, std, 1.0)

    def _inputs(self, rig: CameraRig, pos: np.ndarray) -> np.ndarray:
        xi = (camera_vector(rig, self.mode_name) - self.xi_mean) / self.xi_scale
        spatial = pos.shape[1:]
        grid = np.moveaxis(pos, 0, -1)
        xi_b = np.broadcast_to(xi, spatial + (27,))
        return np.concatenate([xi_b, grid], axis=-1)

    def code(self, rig: CameraRig, spatial: tuple) -> Tensor:
        """The MLP output in channel-first layout, shape (C, *spatial)."""
        inputs = self._inputs(rig, self._encoding(spatial))
        out = self.mlp(inputs.astype(self.mlp.layers[0].weight.dtype))
        ndim = len(spatial)
        return transpose(out, (ndim,) + tuple(range(ndim)))

    def _encoding(self, spatial: tuple) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, features, rig: CameraRig) -> Tensor:
        features = as_tensor(features)
        if features.shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {features.shape[0]}")
        code = self.code(rig, features.shape[1:])
        return features + code if self.combine == "add" else features * code


class ImageCameraEmbedder(_CameraEmbedder):
    """Embeds (M, K, A_c) and the normalized pixel position into a [C, H, W] map."""

    pos_channels = 2
    mode_name = "image"

    def _encoding(self, spatial):
        if len(spatial) != 2:
            raise ShapeError("image features must be [C, H, W]")
        return positional_encoding_image(*spatial)


class VolumeCameraEmbedder(_CameraEmbedder):
    """Embeds (M, K, A_v) and the normalized voxel index into a [C, Z, Y, X] query."""

    pos_channels = 3
    mode_name = "volume"

    def _encoding(self, spatial):
        if len(spatial) != 3:
            raise ShapeError("volume queries must be [C, Z, Y, X]")
        return positional_encoding_volume(*spatial)


def embed_image_features(embedder: ImageCameraEmbedder, features, rig: CameraRig) -> Tensor:
    return embedder(features, rig)


def embed_volume_query(embedder: VolumeCameraEmbedder, query, rig: CameraRig) -> Tensor:
    return embedder(query, rig)
