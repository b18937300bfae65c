"""Rendering of height and error maps.

Heights use a black-to-yellow ramp, absolute errors a blue-to-red ramp;
colormap endpoints are pinned to the per-figure min/max and annotated in
the margin.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import LinearSegmentedColormap

from .raster import HeightRaster, _require_same_meta

HEIGHT_CMAP = LinearSegmentedColormap.from_list("height_black_yellow", ["#000000", "#6b4f00", "#ffd700"])
ERROR_CMAP = LinearSegmentedColormap.from_list("error_blue_red", ["#1040c0", "#f0f0f0", "#d01818"])


def _render(arr: np.ndarray, cmap, title: str, path: Path, unit: str = "m"):
    vmin, vmax = float(np.nanmin(arr)), float(np.nanmax(arr))
    fig, ax = plt.subplots(figsize=(6, 6))
    im = ax.imshow(arr, cmap=cmap, vmin=vmin, vmax=vmax, interpolation="nearest")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    cbar = fig.colorbar(im, ax=ax, fraction=0.046)
    cbar.set_label(f"min {vmin:.2f} {unit} / max {vmax:.2f} {unit}")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_height(raster: HeightRaster, path, title: str = "height") -> Path:
    path = Path(path)
    _render(raster.values, HEIGHT_CMAP, title, path)
    return path


def render_error(pred: HeightRaster, gt: HeightRaster, path, title: str = "absolute error") -> Path:
    _require_same_meta(pred, gt)
    path = Path(path)
    err = np.abs(pred.values - gt.values)
    _render(err, ERROR_CMAP, title, path)
    return path
