"""Training loop, model construction and checkpoints."""
from __future__ import annotations

import csv
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from mvcount.density3d import total_loss
from mvcount.errors import ConfigError, NonFiniteError
from mvcount.harness.config import ExperimentConfig, parse_config
from mvcount.harness.data import Sample, sample_for_step, training_pool
from mvcount.io import load_checkpoint, save_checkpoint
from mvcount.model import MultiViewCounter
from mvcount.numerics import Optimizer, default_dtype, no_grad, set_default_dtype
from mvcount.scenegen import generate_layout


@contextmanager
def dtype_scope(dtype):
    previous = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def build_model(cfg: ExperimentConfig) -> MultiViewCounter:
    with dtype_scope(cfg.np_dtype):
        model = MultiViewCounter(cfg.model_spec(), np.random.default_rng(cfg.seed), dtype=cfg.np_dtype)
    for head in [model.head_2d] + list(model.pyramid.heads):
        head.out.bias.data[:] = cfg.density_bias_init
    if cfg.standardize_camera:
        # statistics over layouts drawn from the training distribution, independent of the scene pool
        grid = model.grids[0]
        rigs = [r for s in range(64) for r in generate_layout(cfg.seed * 7919 + s, cfg.layout_spec(), grid)]
        model.fit_standardization(rigs)
    return model


@dataclass
class TrainResult:
    model: MultiViewCounter
    losses: List[float] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    seconds: float = 0.0


def _nonfinite_report(step: int, sample: Sample, loss: float, model: MultiViewCounter) -> str:
    bad = [name for name, p in model.named_parameters() if not np.all(np.isfinite(p.grad))]
    return (f"non-finite training state at step {step} (scene seed {sample.scene.seed}, loss {loss!r}); "
            f"non-finite gradients in {bad[:5] or 'none'}")


def train(cfg: ExperimentConfig, out_dir=None, pool: Optional[Sequence[Sample]] = None,
          progress=None) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps; with ``out_dir`` write config, loss CSV and checkpoint there."""
    model = build_model(cfg)
    with dtype_scope(cfg.np_dtype):
        if pool is None:
            pool = training_pool(cfg, model.grids, cfg.np_dtype)
        opt = Optimizer(model.parameters(), cfg.learning_rate, cfg.optimizer_config())
        weights = cfg.loss_weights()
        result = TrainResult(model)
        rows = []
        t0 = time.perf_counter()
        for step in range(cfg.steps):
            opt.learning_rate = cfg.learning_rate_at(step)
            total = 0.0
            for k in range(cfg.batch_scenes):
                sample = sample_for_step(cfg, step * cfg.batch_scenes + k, model.grids, pool, cfg.np_dtype)
                value = float("nan")
                try:
                    out = model(sample.images, sample.rigs)
                    loss = total_loss(out.bundle(sample.gt_2d, sample.gt_3d), weights)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NonFiniteError("loss")
                    (loss * (1.0 / cfg.batch_scenes)).backward()
                    if k == cfg.batch_scenes - 1:
                        opt.step()
                except NonFiniteError as exc:
                    raise NonFiniteError(_nonfinite_report(step, sample, value, model)) from exc
                total += value
                rows.append((step, sample.scene.seed, repr(value), repr(out.count), sample.count))
            result.losses.append(total / cfg.batch_scenes)
            if progress is not None:
                progress(step, result.losses[-1])
        result.seconds = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.txt")
        with open(out / "loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "scene_seed", "loss", "pred_count", "gt_count"])
            writer.writerows(rows)
        result.checkpoint = out / "checkpoint.npz"
        save_checkpoint(result.checkpoint, model.state_dict(), cfg.to_text(), cfg.hash())
    return result


def load_model(path) -> tuple:
    """Checkpoint -> (model, config)."""
    state, text, digest = load_checkpoint(path)
    cfg = parse_config(text)
    if cfg.hash() != digest:
        raise ConfigError(f"checkpoint {path}: stored config hash {digest} does not match its config text")
    model = build_model(cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint {path} does not fit its config: {exc}") from exc
    return model, cfg


def predict_counts(model: MultiViewCounter, samples: Sequence[Sample], dtype=np.float64) -> List[float]:
    with dtype_scope(dtype), no_grad():
        return [model(s.images, s.rigs).count for s in samples]
