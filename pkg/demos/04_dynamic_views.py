"""One model, any number of cameras, and cameras that are slightly off.

Trains briefly with 2 to 4 views per scene (configs/dynamic.txt, 400 steps of
two scenes each; with much less the model has not yet started to count), then
counts held-out scenes seen by 1 to 5 cameras, and again with the calibration
the model receives rotated and shifted a little. Images and ground
truth always come from the true cameras.

    python3 demos/04_dynamic_views.py [steps]
"""
import sys
from dataclasses import replace
from pathlib import Path

from mvcount.harness import evaluate, load_config, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
cfg = replace(load_config(Path(__file__).resolve().parent.parent / "configs" / "dynamic.txt"),
              steps=steps, batch_scenes=2, eval_scenes=8)

print(f"training {cfg.steps} steps, views per scene uniform in {cfg.views}")
model = train(cfg).model

print("\nviews  scene MAE  scene NAE  per-view image MAE")
for n in range(1, 6):
    r = evaluate(model, cfg, views=n)
    print(f"  {n}    {r.mae:8.2f}  {r.nae:9.3f}  {r.image_mae:10.2f}")

print("\ncalibration noise at 3 views (rotation degrees, translation metres)")
for deg, m in ((0.0, 0.0), (1.0, 0.05), (3.0, 0.15)):
    r = evaluate(model, cfg, views=3, perturb_deg=deg, perturb_m=m)
    print(f"  {deg:3.1f} deg {m:4.2f} m  MAE {r.mae:.2f}")
