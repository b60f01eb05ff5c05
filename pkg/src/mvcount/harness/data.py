"""Synthetic samples: scene, camera layout, rendered views and ground truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from mvcount.geometry import CameraRig, VoxelGrid
from mvcount.harness.config import ExperimentConfig
from mvcount.io import SceneRecord
from mvcount.scenegen import (Scene, generate_layout, generate_scene, perturb_extrinsics, render_gt_density2d,
                              render_gt_density3d, render_images, visible_counts)


@dataclass
class Sample:
    scene: Scene
    rigs: List[CameraRig]  # rigs the model sees (possibly perturbed)
    images: List[np.ndarray]
    gt_2d: List[np.ndarray]
    gt_3d: List[np.ndarray]  # finest first
    visible: List[int]

    @property
    def count(self) -> int:
        return self.scene.count

    def to_record(self, grids: Sequence[VoxelGrid]) -> SceneRecord:
        meta = {"seed": int(self.scene.seed), "count": self.count, "visible": list(self.visible),
                "terrain": self.scene.terrain.kind, "occluders": [[b.lo.tolist(), b.hi.tolist()]
                                                                   for b in self.scene.occluders]}
        return SceneRecord(list(self.images), list(self.rigs), self.scene.heads, list(self.gt_2d), list(self.gt_3d),
                           [g.voxel_size for g in grids], meta=meta)


def _people(cfg: ExperimentConfig, seed: int) -> int:
    a, b = cfg.people
    return int(np.random.default_rng([seed, 1]).integers(a, b + 1))


def make_sample(cfg: ExperimentConfig, seed: int, grids: Sequence[VoxelGrid], views=None,
                terrain: Optional[str] = None, perturb_deg: float = 0.0, perturb_m: float = 0.0,
                dtype=np.float64) -> Sample:
    """Deterministic in ``seed``. Images and GT come from the true rigs; only the model sees perturbed ones."""
    grid = grids[0]
    scene = generate_scene(seed, _people(cfg, seed), terrain or cfg.terrain, grid, cfg.occluders, cfg.congested)
    rigs = generate_layout(seed, cfg.layout_spec(views), grid, scene=scene)
    images = [img.astype(dtype) for img in render_images(scene, rigs)]
    gt_2d = [render_gt_density2d(scene, r, cfg.sigma_2d) for r in rigs]
    gt_3d = [render_gt_density3d(scene, g, cfg.sigma_3d) for g in grids]
    seen = [perturb_extrinsics(r, perturb_deg, perturb_m, seed * 31 + i) for i, r in enumerate(rigs)]
    return Sample(scene, seen, images, gt_2d, gt_3d, visible_counts(scene, rigs))


def training_pool(cfg: ExperimentConfig, grids: Sequence[VoxelGrid], dtype=np.float64) -> List[Sample]:
    return [make_sample(cfg, cfg.scene_seed + i, grids, dtype=dtype) for i in range(cfg.train_scenes)]


def sample_for_step(cfg: ExperimentConfig, step: int, grids: Sequence[VoxelGrid], pool: Sequence[Sample],
                    dtype=np.float64) -> Sample:
    if pool:
        return pool[step % len(pool)]
    return make_sample(cfg, cfg.scene_seed + step, grids, dtype=dtype)


def eval_suite(cfg: ExperimentConfig, grids: Sequence[VoxelGrid], views=None, perturb_deg: Optional[float] = None,
               perturb_m: Optional[float] = None, seeds: Optional[Sequence[int]] = None,
               dtype=np.float64) -> List[Sample]:
    views = views if views is not None else cfg.eval_views
    seeds = list(seeds) if seeds is not None else [cfg.eval_seed + i for i in range(cfg.eval_scenes)]
    deg = cfg.perturb_deg if perturb_deg is None else perturb_deg
    m = cfg.perturb_m if perturb_m is None else perturb_m
    return [make_sample(cfg, s, grids, views, cfg.eval_terrain, deg, m, dtype) for s in seeds]
