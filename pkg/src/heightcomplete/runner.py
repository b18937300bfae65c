"""Benchmark and workflow runners behind the CLI.

Each command is a plain function over manifests and an ExperimentConfig;
the CLI only parses arguments and surfaces errors. All outputs (masks,
priors, completed rasters, reports) land under ``config.output_dir`` in a
fixed per-scene layout, with JSON run records carrying the config hash.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines, degrade, plots, tta
from .depth_backends import get_depth_backend
from .features import load_backbone, strided_dense_extract
from .manifest import ExperimentConfig, SceneManifest, load_scene
from .metrics import MetricsReport, evaluate_completed
from .raster import BitMask, HeightRaster, load_raster, save_raster

METHODS = ("global", "bilinear", "lwlr", "knn", "knn_feature", "prior2dsm")

REPORT_COLUMNS = ("method", "dataset", "level", "mae", "rmse", "ssim", "n", "tile_id")


class RunnerError(RuntimeError):
    pass


def _level_dir(config: ExperimentConfig, scene_id: str, level: float) -> Path:
    d = config.output_dir / scene_id / f"level_{int(round(level * 100)):03d}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _level_seed(config: ExperimentConfig, level: float) -> int:
    # one independent, reproducible stream per level
    return int(config.seed) * 1000 + int(round(level * 100))


def cmd_degrade(manifest: SceneManifest, config: ExperimentConfig) -> list[Path]:
    """Write a change mask, degraded prior and sidecar record per level."""
    scene = load_scene(manifest)
    if "lulc" not in scene:
        raise RunnerError(f"scene {manifest.scene_id} has no LULC raster; cannot degrade")
    gt, lulc = scene["gt"], scene["lulc"]
    written = []
    for level in config.levels:
        spec = degrade.DegradationSpec(
            target_fraction=level,
            buffer_m=config.buffer_m,
            object_classes=frozenset(lulc.object_codes()),
            seed=_level_seed(config, level),
        )
        result = degrade.build_change_mask(lulc, spec)
        prior = degrade.apply_degradation(gt, result.mask)
        out = _level_dir(config, manifest.scene_id, level)
        save_raster(result.mask, out / "change_mask.tif")
        save_raster(prior, out / "prior.tif", nodata_sentinel=config.nodata_sentinel)
        sidecar = {
            "scene_id": manifest.scene_id,
            "target_fraction": level,
            "achieved_fraction": result.achieved_fraction,
            "selected_components": result.selected_components,
            "seed": result.seed,
            "buffer_m": config.buffer_m,
            "object_classes": sorted(spec.object_classes),
            "config_hash": config.hash(),
        }
        (out / "degrade.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        written += [out / "change_mask.tif", out / "prior.tif", out / "degrade.json"]
    return written


def _degraded_inputs(manifest, config, level):
    out = _level_dir(config, manifest.scene_id, level)
    mask_p, prior_p = out / "change_mask.tif", out / "prior.tif"
    if not mask_p.exists() or not prior_p.exists():
        raise RunnerError(
            f"degraded inputs for scene {manifest.scene_id} level {level} not found under {out}; "
            "run the degrade command first"
        )
    return load_raster(prior_p, "height"), load_raster(mask_p, "mask"), out


def _merge_on_prior(prior: HeightRaster, composed: HeightRaster) -> HeightRaster:
    vals = composed.values.copy()
    vals[prior.valid] = prior.values[prior.valid]
    return HeightRaster(prior.meta, vals, BitMask(prior.meta, np.zeros(prior.meta.shape, bool)))


def complete_raster(
    method: str,
    scene: dict,
    prior: HeightRaster,
    config: ExperimentConfig,
) -> tuple[HeightRaster, dict]:
    """Run one completion method; returns the raster and a run-record dict."""
    if method not in METHODS:
        raise RunnerError(f"unknown method {method!r}; expected one of {METHODS}")
    record: dict = {"method": method}
    needs_rel = method not in ("bilinear",)
    rel = None
    if needs_rel:
        backend = get_depth_backend(**config.depth_backend)
        rel = backend({**scene, "prior": None})
    if method == "bilinear":
        return baselines.bilinear_fill(prior), record
    if method == "global":
        fit = baselines.global_affine_fit(rel, prior)
        record["fit"] = {"scale": fit.scale, "shift": fit.shift, "degenerate": fit.degenerate}
        return _merge_on_prior(prior, baselines.apply_affine(rel, fit)), record
    if method == "lwlr":
        return baselines.lwlr_complete(rel, prior, config.neighbor_config()), record
    if method in ("knn", "knn_feature"):
        cfg = config.neighbor_config()
        feats = None
        if method == "knn_feature":
            from dataclasses import replace

            cfg = replace(cfg, metric="feature")
            backbone = _load_backbone(config)
            feats = strided_dense_extract(scene["rgb"], backbone, _stride(config, scene["rgb"]))
        return baselines.knn_affine_complete(rel, prior, cfg, feats), record
    # prior2dsm: LoRA-adapted backbone + scale-shift head, test-time optimized
    tta_cfg = config.tta_config()
    backbone = _load_backbone(config)
    if tta_cfg.mode == "full":
        backbone = tta.inject_lora(backbone, seed=tta_cfg.seed)
    result = tta.tta_optimize(scene["rgb"], rel, prior, tta_cfg, backbone)
    record["loss_trace"] = result.loss_trace
    record["init_fit"] = {"scale": result.init_fit.scale, "shift": result.init_fit.shift}
    record["tta"] = asdict(tta_cfg)
    return result.completed, record


def _load_backbone(config: ExperimentConfig):
    return load_backbone(**config.backbone)


def _stride(config: ExperimentConfig, rgb) -> int:
    stride = config.tta.get("feature_stride", tta.TtaConfig().feature_stride)
    # clamp to something the tile size supports
    while rgb.meta.width % stride or rgb.meta.height % stride:
        stride -= 1
    return max(stride, 1)


def cmd_complete(manifest: SceneManifest, method: str, level: float, config: ExperimentConfig) -> Path:
    """Complete the degraded prior of one level and write raster + record."""
    scene = load_scene(manifest)
    prior, change, out = _degraded_inputs(manifest, config, level)
    t0 = time.perf_counter()
    completed, record = complete_raster(method, scene, prior, config)
    record.update(
        {
            "scene_id": manifest.scene_id,
            "level": level,
            "wall_time_s": time.perf_counter() - t0,
            "config_hash": config.hash(),
        }
    )
    path = out / f"completed_{method}.tif"
    save_raster(completed, path, nodata_sentinel=config.nodata_sentinel)
    (out / f"run_{method}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def cmd_evaluate(manifest: SceneManifest, method: str, level: float, config: ExperimentConfig) -> MetricsReport:
    """Evaluate a completed raster on its change mask and append a report row."""
    scene = load_scene(manifest)
    _, change, out = _degraded_inputs(manifest, config, level)
    pred_path = out / f"completed_{method}.tif"
    if not pred_path.exists():
        raise RunnerError(f"no completed raster for method {method!r} at {pred_path}")
    pred = load_raster(pred_path, "height")
    report = evaluate_completed(pred, scene["gt"], change)
    _append_report_row(config, report, method, manifest.scene_id, level)
    return report


def _append_report_row(config, report: MetricsReport, method, scene_id, level):
    path = config.output_dir / "reports.csv"
    new = not path.exists()
    with path.open("a") as fh:
        if new:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
        fh.write(
            f"{method},{scene_id},{level},{report.mae_m:.6f},{report.rmse_m:.6f},"
            f"{report.ssim:.6f},{report.n_pixels},{scene_id}\n"
        )


def cmd_benchmark(
    manifests: list[SceneManifest], config: ExperimentConfig, run_missing: bool = True
) -> tuple[list[dict], str]:
    """Run (or reuse) methods x levels over all scenes and aggregate means.

    Returns per-(method, level) aggregate rows and a rendered text table.
    """
    per_tile: dict[tuple[str, float], list[MetricsReport]] = {}
    for manifest in manifests:
        scene = load_scene(manifest)
        for level in config.levels:
            try:
                prior, change, out = _degraded_inputs(manifest, config, level)
            except RunnerError:
                if not run_missing:
                    raise
                cmd_degrade(manifest, config)
                prior, change, out = _degraded_inputs(manifest, config, level)
            for method in config.methods:
                pred_path = out / f"completed_{method}.tif"
                if not pred_path.exists():
                    if not run_missing:
                        raise RunnerError(f"missing completion {pred_path} and run_missing=False")
                    cmd_complete(manifest, method, level, config)
                pred = load_raster(pred_path, "height")
                report = evaluate_completed(pred, scene["gt"], change)
                _append_report_row(config, report, method, manifest.scene_id, level)
                per_tile.setdefault((method, level), []).append(report)

    rows = []
    for method in config.methods:
        for level in config.levels:
            reports = per_tile[(method, level)]
            rows.append(
                {
                    "method": method,
                    "level": level,
                    "mae": float(np.mean([r.mae_m for r in reports])),
                    "rmse": float(np.mean([r.rmse_m for r in reports])),
                    "ssim": float(np.mean([r.ssim for r in reports])),
                    "tiles": len(reports),
                }
            )
    table = format_benchmark_table(rows)
    (config.output_dir / "benchmark.txt").write_text(table + "\n")
    (config.output_dir / "benchmark.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows, table


def format_benchmark_table(rows: list[dict]) -> str:
    """Plain-text mean-metrics table, one row per (method, level)."""
    header = f"{'method':<14} {'level':>6} {'MAE (m)':>9} {'RMSE (m)':>9} {'SSIM':>6} {'tiles':>6}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['method']:<14} {r['level']:>6.2f} {r['mae']:>9.2f} {r['rmse']:>9.2f} "
            f"{r['ssim']:>6.2f} {r['tiles']:>6d}"
        )
    return "\n".join(lines)


def cmd_update_dsm(manifest: SceneManifest, config: ExperimentConfig, method: str = "prior2dsm") -> dict:
    """Complete externally flagged changed regions of an outdated prior.

    Emits a two-row before/after report: metrics of the outdated prior and
    of the updated output, both over changed pixels only.
    """
    scene = load_scene(manifest)
    if "prior" not in scene or "change" not in scene:
        raise RunnerError(f"scene {manifest.scene_id} needs prior_dsm and change_mask for updating")
    prior_raw, change, gt = scene["prior"], scene["change"], scene["gt"]
    if not change.bits.any():
        raise RunnerError("change mask is empty; nothing to update")
    prior = degrade.apply_degradation(prior_raw, change)
    completed, record = complete_raster(method, scene, prior, config)

    before = evaluate_completed(prior_raw, gt, change)
    after = evaluate_completed(completed, gt, change)
    out = config.output_dir / manifest.scene_id
    out.mkdir(parents=True, exist_ok=True)
    save_raster(completed, out / "updated_dsm.tif", nodata_sentinel=config.nodata_sentinel)
    report = {
        "scene_id": manifest.scene_id,
        "config_hash": config.hash(),
        "rows": [
            {"method": "None (prior)", "mae": before.mae_m, "rmse": before.rmse_m, "ssim": before.ssim},
            {"method": method, "mae": after.mae_m, "rmse": after.rmse_m, "ssim": after.ssim},
        ],
    }
    (out / "update_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def cmd_plot(pred_path, gt_path, out_dir, title: str = "") -> list[Path]:
    """Emit a height map and, when ground truth is given, an error map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred = load_raster(pred_path, "height")
    written = [plots.render_height(pred, out_dir / "height.png", title or "height")]
    if gt_path is not None:
        gt = load_raster(gt_path, "height")
        written.append(plots.render_error(pred, gt, out_dir / "error.png", f"{title} abs error".strip()))
    return written
