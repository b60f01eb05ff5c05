"""Evaluation reports, ablations and attention-weight readouts."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from mvcount.errors import ConfigError, DomainError
from mvcount.harness.config import ExperimentConfig
from mvcount.harness.data import Sample, eval_suite
from mvcount.harness.metrics import mae, nae
from mvcount.harness.training import dtype_scope, train
from mvcount.model import MultiViewCounter
from mvcount.numerics import no_grad
from mvcount.scenegen import head_visibility

SCENE_COLUMNS = ["config_hash", "views", "scene_seed", "view", "pred", "gt"]
SUMMARY_COLUMNS = ["config_hash", "toggles", "views", "perturb_deg", "perturb_m", "scenes", "scene_mae", "scene_nae",
                   "image_mae", "image_nae", "seconds"]


@dataclass
class EvalReport:
    config_hash: str
    toggles: str
    views: Optional[int]
    perturb: tuple
    seeds: List[int] = field(default_factory=list)
    pred: List[float] = field(default_factory=list)
    gt: List[int] = field(default_factory=list)
    view_pred: List[List[float]] = field(default_factory=list)
    view_gt: List[List[int]] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mae(self) -> float:
        return mae(self.pred, self.gt)

    @property
    def nae(self) -> float:
        return nae(self.pred, self.gt)

    def _flat_views(self):
        p = [v for row in self.view_pred for v in row]
        g = [v for row in self.view_gt for v in row]
        return p, g

    @property
    def image_mae(self) -> float:
        return mae(*self._flat_views())

    @property
    def image_nae(self) -> float:
        """Over views that see at least one person; NAE is undefined for an empty view."""
        p, g = self._flat_views()
        keep = [i for i, v in enumerate(g) if v > 0]
        return nae([p[i] for i in keep], [g[i] for i in keep]) if keep else float("nan")

    def summary_row(self) -> list:
        views = "" if self.views is None else self.views
        return [self.config_hash, self.toggles or "-", views, repr(self.perturb[0]), repr(self.perturb[1]),
                len(self.seeds), repr(self.mae), repr(self.nae), repr(self.image_mae), repr(self.image_nae),
                f"{self.seconds:.3f}"]

    def write(self, out_dir) -> None:
        """Appends to ``eval_scenes.csv`` and ``eval_summary.csv``; view -1 marks the scene total."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        views = "" if self.views is None else self.views
        rows = []
        for k, seed in enumerate(self.seeds):
            rows.append([self.config_hash, views, seed, -1, repr(self.pred[k]), self.gt[k]])
            rows += [[self.config_hash, views, seed, i, repr(p), g]
                     for i, (p, g) in enumerate(zip(self.view_pred[k], self.view_gt[k]))]
        _append(out / "eval_scenes.csv", SCENE_COLUMNS, rows)
        _append(out / "eval_summary.csv", SUMMARY_COLUMNS, [self.summary_row()])


def _append(path: Path, header: Sequence[str], rows) -> None:
    fresh = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(header)
        writer.writerows(rows)


def check_compatible(model_cfg: ExperimentConfig, eval_cfg: ExperimentConfig) -> None:
    if tuple(model_cfg.grid_shape) != tuple(eval_cfg.grid_shape) or model_cfg.voxel_size != eval_cfg.voxel_size \
            or model_cfg.voxel_center_offset != eval_cfg.voxel_center_offset:
        raise ConfigError(f"evaluation grid {eval_cfg.grid_shape}@{eval_cfg.voxel_size} does not match "
                          f"checkpoint grid {model_cfg.grid_shape}@{model_cfg.voxel_size}")


def evaluate(model: MultiViewCounter, cfg: ExperimentConfig, views=None, perturb_deg: Optional[float] = None,
             perturb_m: Optional[float] = None, seeds: Optional[Sequence[int]] = None,
             samples: Optional[Sequence[Sample]] = None, eval_cfg: Optional[ExperimentConfig] = None,
             out_dir=None) -> EvalReport:
    """Scene-level and image-level errors of ``model`` (trained under ``cfg``); parameters are left untouched."""
    eval_cfg = eval_cfg or cfg
    check_compatible(cfg, eval_cfg)
    deg = eval_cfg.perturb_deg if perturb_deg is None else perturb_deg
    m = eval_cfg.perturb_m if perturb_m is None else perturb_m
    t0 = time.perf_counter()
    if samples is None:
        samples = eval_suite(eval_cfg, model.grids, views, deg, m, seeds, cfg.np_dtype)
    report = EvalReport(cfg.hash(), cfg.toggles, views if views is None else int(views), (float(deg), float(m)))
    with dtype_scope(cfg.np_dtype), no_grad():
        for s in samples:
            out = model(s.images, s.rigs)
            report.seeds.append(int(s.scene.seed))
            report.pred.append(out.count)
            report.gt.append(s.count)
            report.view_pred.append([float(np.sum(d.data)) for d in out.density_2d])
            report.view_gt.append(list(s.visible))
    report.seconds = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out_dir)
    return report


def ablate(cfg: ExperimentConfig, toggle_sets: Sequence[str], out_dir=None) -> List[EvalReport]:
    """Train and evaluate one model per toggle subset; writes ``ablation.csv`` rows (toggles, MAE, NAE)."""
    reports = []
    for toggles in toggle_sets:
        run_cfg = cfg.with_toggles(toggles)
        run_dir = None if out_dir is None else Path(out_dir) / f"run_{toggles or 'none'}"
        result = train(run_cfg, run_dir)
        reports.append(evaluate(result.model, run_cfg, out_dir=run_dir))
    if out_dir is not None:
        rows = [[r.toggles or "-", repr(r.mae), repr(r.nae)] for r in reports]
        _append(Path(out_dir) / "ablation.csv", ["toggles", "mae", "nae"], rows)
    return reports


@dataclass
class WeightReadout:
    point: tuple
    voxel: Optional[tuple]  # None when the point lies outside the grid
    weights: np.ndarray  # (N,)
    hits: np.ndarray  # (N,) bool
    visible: Optional[np.ndarray] = None  # per-view line-of-sight flag, when the point's scene is known


def inspect_weights(model: MultiViewCounter, sample: Sample, points: Sequence, level: int = 0) -> List[WeightReadout]:
    """Each view's aggregation weight at the voxel containing each point."""
    grid = model.grids[level]
    with no_grad():
        out = model(sample.images, sample.rigs)
    w, hits = out.weights[level].data, out.hits[level]
    readouts = []
    for p in points:
        p = np.asarray(p, dtype=float)
        try:
            idx = grid.voxel_of(p)
        except DomainError:
            readouts.append(WeightReadout(tuple(p), None, np.zeros(len(sample.rigs)), np.zeros(len(sample.rigs), bool)))
            continue
        probe = replace(sample.scene, heads=p[None])
        visible = np.array([bool(head_visibility(probe, r)[0]) for r in sample.rigs])
        readouts.append(WeightReadout(tuple(p), idx, w[(slice(None),) + idx].astype(float), hits[(slice(None),) + idx],
                                      visible))
    return readouts


def write_weight_csv(path, readouts: Sequence[WeightReadout]) -> None:
    rows = []
    for r in readouts:
        for view, (weight, hit) in enumerate(zip(r.weights, r.hits)):
            vis = "" if r.visible is None else int(r.visible[view])
            rows.append([repr(r.point[0]), repr(r.point[1]), repr(r.point[2]), view, repr(float(weight)), int(hit), vis])
    header = ["x", "y", "z", "view_id", "weight", "hit", "visible"]
    if hasattr(path, "write"):
        writer = csv.writer(path)
        writer.writerow(header)
        writer.writerows(rows)
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
