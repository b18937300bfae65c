"""Command-line interface.

Subcommands: synth, degrade, complete, evaluate, benchmark, update-dsm,
plot. All failures exit nonzero with a single machine-readable
``ERROR {json}`` line on stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import runner, synth
from .manifest import SceneManifest, load_config, load_manifest, save_manifest
from .raster import save_raster


def _fail(exc: Exception):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    extra = getattr(exc, "max_achievable", None)
    if extra is not None:
        payload["max_achievable"] = extra
    click.echo("ERROR " + json.dumps(payload), err=True)
    sys.exit(1)


def _surfacing_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            _fail(exc)

    return wrapper


@click.group()
def main():
    """Metric DSM completion toolkit."""


config_opt = click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="YAML experiment config.")
manifest_opt = click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True, help="Scene manifest JSON.")
output_opt = click.option("--output-dir", type=click.Path(), default=None, help="Override the config output directory.")


def _config(config_path, output_dir=None):
    overrides = {"output_dir": output_dir} if output_dir else {}
    return load_config(config_path, overrides)


@main.command("synth")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--size", type=int, default=128, show_default=True)
@click.option("--pixel-size", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--buildings", type=int, default=8, show_default=True)
@click.option("--trees", type=int, default=6, show_default=True)
@_surfacing_errors
def synth_cmd(out_dir, size, pixel_size, seed, buildings, trees):
    """Generate a synthetic scene plus its manifest (for demos and tests)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = synth.make_scene(size=size, pixel_size=pixel_size, seed=seed, n_buildings=buildings, n_trees=trees)
    save_raster(scene.rgb, out / "rgb.tif")
    save_raster(scene.gt, out / "gt_dsm.tif")
    from .raster import BitMask, HeightRaster
    import numpy as np

    lulc_raster = HeightRaster(
        scene.meta, scene.lulc.labels.astype(float), BitMask(scene.meta, np.zeros(scene.meta.shape, bool))
    )
    save_raster(lulc_raster, out / "lulc.tif")
    manifest = SceneManifest(
        scene_id=f"synth-{seed}",
        rgb=out / "rgb.tif",
        gt_dsm=out / "gt_dsm.tif",
        lulc=out / "lulc.tif",
        pixel_size_m=pixel_size,
        notes="synthetic scene",
        lulc_classes={code: {"name": cls.name, "is_object": cls.is_object} for code, cls in synth.CLASS_TABLE.items()},
    )
    save_manifest(manifest, out / "manifest.json")
    click.echo(str(out / "manifest.json"))


@main.command("degrade")
@manifest_opt
@config_opt
@output_opt
@_surfacing_errors
def degrade_cmd(manifest_path, config_path, output_dir):
    """Build change masks and degraded priors for every configured level."""
    config = _config(config_path, output_dir)
    written = runner.cmd_degrade(load_manifest(manifest_path), config)
    for p in written:
        click.echo(str(p))


@main.command("complete")
@manifest_opt
@config_opt
@output_opt
@click.option("--method", type=click.Choice(runner.METHODS), required=True)
@click.option("--level", type=float, required=True)
@_surfacing_errors
def complete_cmd(manifest_path, config_path, output_dir, method, level):
    """Complete the degraded prior of one incompleteness level."""
    config = _config(config_path, output_dir)
    path = runner.cmd_complete(load_manifest(manifest_path), method, level, config)
    click.echo(str(path))


@main.command("evaluate")
@manifest_opt
@config_opt
@output_opt
@click.option("--method", type=click.Choice(runner.METHODS), required=True)
@click.option("--level", type=float, required=True)
@_surfacing_errors
def evaluate_cmd(manifest_path, config_path, output_dir, method, level):
    """Evaluate one completed raster on its change mask."""
    config = _config(config_path, output_dir)
    report = runner.cmd_evaluate(load_manifest(manifest_path), method, level, config)
    click.echo(
        json.dumps(
            {"method": method, "level": level, "mae": report.mae_m, "rmse": report.rmse_m, "ssim": report.ssim, "n": report.n_pixels}
        )
    )


@main.command("benchmark")
@click.option("--manifest", "manifest_paths", type=click.Path(exists=True), multiple=True, required=True)
@config_opt
@output_opt
@click.option("--no-run", is_flag=True, help="Fail instead of running missing completions.")
@_surfacing_errors
def benchmark_cmd(manifest_paths, config_path, output_dir, no_run):
    """Mean metrics per (method, level) across all scenes."""
    config = _config(config_path, output_dir)
    manifests = [load_manifest(p) for p in manifest_paths]
    _, table = runner.cmd_benchmark(manifests, config, run_missing=not no_run)
    click.echo(table)


@main.command("update-dsm")
@manifest_opt
@config_opt
@output_opt
@click.option("--method", type=click.Choice(runner.METHODS), default="prior2dsm", show_default=True)
@_surfacing_errors
def update_dsm_cmd(manifest_path, config_path, output_dir, method):
    """Complete externally flagged changed regions of an outdated DSM."""
    config = _config(config_path, output_dir)
    report = runner.cmd_update_dsm(load_manifest(manifest_path), config, method)
    for row in report["rows"]:
        click.echo(f"{row['method']:<14} MAE {row['mae']:.2f}  RMSE {row['rmse']:.2f}  SSIM {row['ssim']:.2f}")


@main.command("plot")
@click.option("--pred", type=click.Path(exists=True), required=True)
@click.option("--gt", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--title", default="")
@_surfacing_errors
def plot_cmd(pred, gt, out_dir, title):
    """Render height (black to yellow) and error (blue to red) maps."""
    for p in runner.cmd_plot(pred, gt, out_dir, title):
        click.echo(str(p))


if __name__ == "__main__":
    main()
