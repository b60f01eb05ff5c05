"""Gradient verification and dataset export."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from mvcount.density3d import total_loss
from mvcount.harness.config import ExperimentConfig
from mvcount.harness.data import make_sample
from mvcount.harness.training import build_model, dtype_scope
from mvcount.io import export_dataset
from mvcount.numerics import GradCheckReport, finite_checks, gradient_check

MICRO = dict(grid_shape=(2, 4, 4), channels=8, levels=1, alpha=(1.0,), views=(2, 2), people=(2, 2), occluders=0,
             terrain="flat", dtype="float64")


def micro_config(cfg: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Shrinks ``cfg`` to the gradient-check size, keeping toggles and loss settings."""
    return replace(cfg or ExperimentConfig(), **MICRO)


def grad_check(cfg: Optional[ExperimentConfig] = None, max_entries: int = 200, eps: float = 3e-6,
               floor: float = 1e-6, jitter: float = 0.05) -> GradCheckReport:
    """Backprop against central differences for every parameter tensor of the micro pipeline.

    Parameters are first moved off their initialisation by Gaussian noise of
    scale ``jitter``: zero-initialised layers (final embedding layers, attention
    offsets and weights, the view scorer) otherwise have exactly zero gradient,
    and zero biases over zero padding leave rectifiers exactly on their kink.
    Each tensor is probed at up to ``max_entries`` entries spread evenly across it.
    """
    cfg = micro_config(cfg)
    model = build_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    for p in model.parameters():
        p.data += jitter * rng.normal(size=p.data.shape)
    with dtype_scope(np.float64):
        sample = make_sample(cfg, cfg.scene_seed, model.grids)
        weights = cfg.loss_weights()

        def loss():
            out = model(sample.images, sample.rigs)
            return total_loss(out.bundle(sample.gt_2d, sample.gt_3d), weights)

        params = model.parameters()
        indices = {k: np.unique(np.linspace(0, p.data.size - 1, min(p.data.size, max_entries)).astype(int))
                   for k, p in enumerate(params)}
        with finite_checks(True):
            return gradient_check(loss, params, eps=eps, floor=floor, indices=indices)


def gen_data(cfg: ExperimentConfig, out_dir, count: Optional[int] = None) -> List[Path]:
    """Export the training pool (or ``count`` scenes from the scene seed) in the raw-tensor format."""
    grids = cfg.model_spec().level_grids()
    n = cfg.train_scenes if count is None else count
    samples = [make_sample(cfg, cfg.scene_seed + i, grids) for i in range(n)]
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    cfg.save(root / "config.txt")
    return export_dataset(root, [s.to_record(grids) for s in samples])
