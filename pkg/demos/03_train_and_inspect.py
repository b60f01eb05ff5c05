"""Train a counter on a few fixed scenes, then ask which views it trusts.

A shortened version of the overfit recipe in configs/overfit.txt (pass a step
count to change it; the full recipe uses 500 steps on 8 scenes). After training,
every head that sits in all frames but is hidden behind the box in exactly one
view is probed: the aggregation weights show whether the occluded view counts
for less at that voxel.

    python3 demos/03_train_and_inspect.py [steps]
"""
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from mvcount.geometry import hit_mask
from mvcount.harness import evaluate, inspect_weights, load_config, make_sample, train
from mvcount.scenegen import head_visibility

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = replace(load_config(Path(__file__).resolve().parent.parent / "configs" / "overfit.txt"),
              steps=steps, train_scenes=4, batch_scenes=1)


def progress(step, loss):
    if step % 50 == 0 or step == cfg.steps - 1:
        print(f"  step {step:4d}  loss {loss:.3f}", flush=True)


print(f"training {cfg.steps} steps on {cfg.train_scenes} scenes ({cfg.toggles}, C={cfg.channels})")
result = train(cfg, progress=progress)
model = result.model
seeds = [cfg.scene_seed + i for i in range(cfg.train_scenes)]
report = evaluate(model, cfg, seeds=seeds)
print(f"\ntraining scenes: MAE {report.mae:.2f}, NAE {report.nae:.3f}, {result.seconds:.0f} s")
for seed, p, g in zip(report.seeds, report.pred, report.gt):
    print(f"  scene {seed}: predicted {p:5.2f}  true {g}")

print("\nheads inside every frame but occluded in exactly one view:")
for seed in seeds:
    sample = make_sample(cfg, seed, model.grids, dtype=cfg.np_dtype)
    heads = sample.scene.heads
    framed = np.stack([hit_mask(r, heads) for r in sample.rigs])
    seen = np.stack([head_visibility(sample.scene, r) for r in sample.rigs])
    for i in np.flatnonzero(framed.all(axis=0) & ((framed & ~seen).sum(axis=0) == 1)):
        hidden = int(np.flatnonzero(~seen[:, i])[0])
        w = inspect_weights(model, sample, [heads[i]])[0].weights
        others = np.delete(w, hidden).mean()
        print(f"  scene {seed} head {i:2d}: occluded view {hidden} weight {w[hidden]:.3f}, "
              f"other views mean {others:.3f}  {'lower' if w[hidden] < others else 'not lower'}")
