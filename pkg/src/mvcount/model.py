"""The full counting pipeline: encoder, per-level lifting, fusion and density heads.

Component toggles:

* ``lifting``: deformable lifting (on) or the flat-plane IPM copy (off)
* ``volume_embedding``: camera embedding of the volume query
* ``learned_aggregation``: scored softmax fusion (on) or the plain hit-set average (off)
* ``image_embedding``: camera embedding of the image features
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from mvcount.aggregation import ImportanceScorer, aggregation_weights, fuse_volumes
from mvcount.density3d import DensityBundle, VolumePyramid
from mvcount.embedding import ImageCameraEmbedder, VolumeCameraEmbedder
from mvcount.encoder import DensityHead2D, ImageEncoder
from mvcount.errors import ConfigError, ShapeError
from mvcount.geometry import CameraRig, VoxelGrid
from mvcount.lifting import ViewLifter, lift_view, reference_points
from mvcount.numerics import Module, Tensor
from mvcount.scenegen import ipm_lift_baseline

AGGREGATION_SOURCES = ("lifted", "query")


@dataclass(frozen=True)
class ModelSpec:
    channels: int = 32
    levels: int = 2
    grid_shape: tuple = (8, 32, 32)
    voxel_size: float = 0.25
    voxel_center_offset: float = 0.0
    heads: int = 4
    points: int = 4
    layers: int = 2
    combine: str = "add"
    lifting: bool = True
    volume_embedding: bool = True
    learned_aggregation: bool = True
    image_embedding: bool = True
    aggregation_source: str = "lifted"
    ipm_plane_z: float = 0.0

    def __post_init__(self):
        if self.aggregation_source not in AGGREGATION_SOURCES:
            raise ConfigError(f"aggregation_source must be one of {AGGREGATION_SOURCES}")
        if self.aggregation_source == "query" and not self.lifting:
            raise ConfigError("query-based aggregation needs the lifting stack")
        if self.levels < 1:
            raise ConfigError("at least one pyramid level is required")

    @property
    def grid(self) -> VoxelGrid:
        return VoxelGrid(tuple(self.grid_shape), self.voxel_size, self.voxel_center_offset)

    def level_grids(self) -> List[VoxelGrid]:
        grids = [self.grid]
        for _ in range(self.levels - 1):
            grids.append(grids[-1].coarsen())
        return grids

    @property
    def toggles(self) -> str:
        flags = zip("LVAI", (self.lifting, self.volume_embedding, self.learned_aggregation, self.image_embedding))
        return "".join(k for k, on in flags if on)


class _IpmLevel(Module):
    """Embedders used by the flat-plane variant of one level."""

    def __init__(self, spec: ModelSpec, rng, dtype=None):
        c = spec.channels
        self.image_embedder = ImageCameraEmbedder(c, rng, spec.combine, dtype=dtype) if spec.image_embedding else None
        self.volume_embedder = VolumeCameraEmbedder(c, rng, spec.combine, dtype=dtype) if spec.volume_embedding else None


@dataclass
class ForwardResult:
    density_2d: List[Tensor]  # per view, [1, H/4, W/4]
    density_3d: List[Tensor]  # per level, finest first
    weights: List[Tensor]  # per level, [N, Z_l, Y_l, X_l]
    hits: List[np.ndarray]  # per level, [N, Z_l, Y_l, X_l]

    @property
    def count(self) -> float:
        return float(np.sum(self.density_3d[0].data))

    def bundle(self, gt_2d: Sequence, gt_3d: Sequence) -> DensityBundle:
        return DensityBundle(list(self.density_2d), list(self.density_3d), list(gt_2d), list(gt_3d))


class MultiViewCounter(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator, dtype=None):
        self.spec = spec
        self.grids = spec.level_grids()
        c = spec.channels
        self.encoder = ImageEncoder(c, rng, levels=spec.levels, dtype=dtype)
        self.head_2d = DensityHead2D(c, rng, dtype=dtype)
        if spec.lifting:
            self.lifters = [ViewLifter(c, g, rng, spec.heads, spec.points, spec.layers, spec.combine,
                                       spec.image_embedding, spec.volume_embedding, dtype=dtype) for g in self.grids]
        else:
            self.lifters = [_IpmLevel(spec, rng, dtype=dtype) for _ in self.grids]
        self.scorers = [ImportanceScorer(c, rng, dtype=dtype) for _ in self.grids] if spec.learned_aggregation else None
        self.pyramid = VolumePyramid(c, spec.levels, rng, dtype=dtype)

    def fit_standardization(self, rigs: Sequence[CameraRig]) -> None:
        for lifter in self.lifters:
            for emb in (lifter.image_embedder, lifter.volume_embedder):
                if emb is not None:
                    emb.fit_standardization(rigs)

    def __call__(self, images: Sequence, rigs: Sequence[CameraRig]) -> ForwardResult:
        return self.forward(images, rigs)

    def _lift(self, level: int, feature, rig: CameraRig, refs) -> tuple:
        """Returns (view volume, scoring source)."""
        stride = self.encoder.strides[level]
        lifter = self.lifters[level]
        if self.spec.lifting:
            volume = lift_view(lifter, feature, rig, stride, refs)
            if self.spec.aggregation_source == "query":
                q = lifter.query
                source = lifter.volume_embedder(q, rig) if lifter.volume_embedder is not None else q
            else:
                source = volume
            return volume, source
        if lifter.image_embedder is not None:
            feature = lifter.image_embedder(feature, rig)
        volume = ipm_lift_baseline(feature, rig, self.grids[level], stride, self.spec.ipm_plane_z, refs.hits)
        if lifter.volume_embedder is not None:
            volume = lifter.volume_embedder(volume, rig) * refs.hits[None].astype(volume.dtype)
        return volume, volume

    def forward(self, images: Sequence, rigs: Sequence[CameraRig]) -> ForwardResult:
        if len(images) != len(rigs):
            raise ShapeError(f"{len(images)} images but {len(rigs)} rigs")
        if not len(rigs):
            raise ShapeError("at least one view is required")
        pyramids = [self.encoder(img) for img in images]
        density_2d = [self.head_2d(p[0]) for p in pyramids]
        fused, weights, hits = [], [], []
        for level, grid in enumerate(self.grids):
            refs = [reference_points(grid, rig) for rig in rigs]
            volumes, sources = [], []
            for pyr, rig, ref in zip(pyramids, rigs, refs):
                vol, src = self._lift(level, pyr[level], rig, ref)
                volumes.append(vol)
                sources.append(src)
            masks = [r.hits for r in refs]
            scorer = self.scorers[level] if self.scorers is not None else None
            w = aggregation_weights(scorer, sources, masks)
            fused.append(fuse_volumes(volumes, w))
            weights.append(w)
            hits.append(np.stack(masks))
        density_3d = self.pyramid(fused)
        return ForwardResult(density_2d, density_3d, weights, hits)
