"""
Non-learning completion baselines
=================================

Completes a degraded height prior with four strategies — one global
scale/shift fit of the relative depth, bilinear hole filling, locally
weighted linear regression, and kNN local affine alignment — and prints
their errors over the removed region.
"""

from pathlib import Path

import numpy as np

from heightcomplete import (
    DegradationSpec,
    NeighborQueryConfig,
    apply_affine,
    apply_degradation,
    bilinear_fill,
    build_change_mask,
    evaluate_completed,
    global_affine_fit,
    knn_affine_complete,
    lwlr_complete,
    synth,
)
from heightcomplete.depth_backends import OracleDepthBackend
from heightcomplete.plots import render_error

OUT = Path(__file__).parent / "output" / "02_baselines"
OUT.mkdir(parents=True, exist_ok=True)

scene = synth.make_scene(size=96, seed=3, n_buildings=24, n_trees=14)

# degrade: remove half of the surface objects
result = build_change_mask(scene.lulc, DegradationSpec(target_fraction=0.5, buffer_m=8.0, seed=0))
prior = apply_degradation(scene.gt, result.mask)

# the oracle backend distorts ground truth by a fixed affine + noise,
# standing in for a monocular depth model on synthetic data
rel = OracleDepthBackend(a=0.4, b=2.0, noise_sigma=0.2, seed=0)({"gt": scene.gt})

neighbors = NeighborQueryConfig(k=16, bandwidth_m=30.0)
completions = {
    "global": apply_affine(rel, global_affine_fit(rel, prior)),
    "bilinear": bilinear_fill(prior),
    "lwlr": lwlr_complete(rel, prior, neighbors),
    "knn": knn_affine_complete(rel, prior, neighbors),
}

print(f"{'method':<10} {'MAE (m)':>8} {'RMSE (m)':>9} {'SSIM':>6}")
for name, completed in completions.items():
    report = evaluate_completed(completed, scene.gt, result.mask)
    print(f"{name:<10} {report.mae_m:>8.2f} {report.rmse_m:>9.2f} {report.ssim:>6.2f}")
    render_error(completed, scene.gt, OUT / f"error_{name}.png", f"{name} abs error (m)")

print(f"wrote error maps to {OUT}")
