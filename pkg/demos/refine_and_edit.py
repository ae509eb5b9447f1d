"""Train a small denoiser, clean up a jittered clip, then speed it up.

    python demos/refine_and_edit.py            # ~1 minute with the short schedule
    python demos/refine_and_edit.py --full     # the full desk schedule, ~3 minutes

The short schedule gives a rough model; the numbers improve with --full.
"""
import argparse
import tempfile
from dataclasses import replace

import numpy as np

from biomotion.metrics import speed_metric, smoothness_metric
from biomotion.pipeline import DESK_TRAIN, channel_factors, fit_model, kind_cond, load_corpus, refine_positions
from biomotion.sim import default_scenarios, make_corpus, simulate

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true")
args = ap.parse_args()
cfg = DESK_TRAIN if args.full else replace(DESK_TRAIN, steps=1500, pretrain_steps=1000)

with tempfile.TemporaryDirectory() as d:
    make_corpus(default_scenarios(0, 64), d)
    model, res = fit_model(load_corpus(d), cfg)
print(f"trained {cfg.steps} steps, final loss {res.log[-1]['total']:.3f}")

gt = simulate(default_scenarios(1, 1)[0]).motion
cond = kind_cond("gait")
noisy = gt.positions + 0.01 * np.random.default_rng(0).standard_normal(gt.positions.shape)
clean = refine_positions(noisy, model, 300, cond=cond)
err = lambda p: np.linalg.norm(p - gt.positions, axis=-1).mean()
print(f"smoothness  gt {smoothness_metric(gt):.3f}  jittered {smoothness_metric(gt.with_positions(noisy)):.3f}"
      f"  refined {smoothness_metric(gt.with_positions(clean)):.3f}")
print(f"joint error jittered {err(noisy) * 100:.2f} cm  refined {err(clean) * 100:.2f} cm")

for f in (0.5, 1.0, 2.0):
    scale = channel_factors(model.codec, gt.joint_names, f)
    edited = refine_positions(gt.positions, model, 300, cond=cond, accel_scale=scale)
    print(f"accel x{f}: speed {speed_metric(gt.with_positions(edited)):.3f}")
