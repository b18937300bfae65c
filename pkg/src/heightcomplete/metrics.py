"""Error metrics over completed regions: MAE, RMSE and windowed SSIM.

Reported metrics are restricted to the change-mask region; SSIM is
computed on the full tile after substituting ground truth outside the
region so that structural differences arise only from completed pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import BitMask, HeightRaster, _require_same_meta

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


class MetricError(ValueError):
    """Raised for invalid metric inputs (empty regions, shape mismatch)."""


@dataclass(frozen=True)
class MetricsReport:
    mae_m: float
    rmse_m: float
    ssim: float
    n_pixels: int
    region: str
    data_range: float = 0.0

    def __post_init__(self):
        if self.n_pixels <= 0:
            raise MetricError("report requires n_pixels > 0")
        if self.rmse_m + 1e-12 < self.mae_m or self.mae_m < 0:
            raise MetricError(f"inconsistent report: rmse {self.rmse_m} < mae {self.mae_m}")


def _region_errors(pred: HeightRaster, gt: HeightRaster, region: BitMask) -> np.ndarray:
    _require_same_meta(pred, gt, region)
    sel = region.bits & gt.valid & pred.valid
    if not sel.any():
        raise MetricError("empty evaluation region")
    return pred.values[sel] - gt.values[sel]


def mae(pred: HeightRaster, gt: HeightRaster, region: BitMask) -> float:
    """Mean absolute error in meters over the region."""
    return float(np.abs(_region_errors(pred, gt, region)).mean())


def rmse(pred: HeightRaster, gt: HeightRaster, region: BitMask) -> float:
    """Root mean square error in meters over the region."""
    return float(np.sqrt((_region_errors(pred, gt, region) ** 2).mean()))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def _windowed(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable weighted window means, cropped to fully interior windows."""
    half = kernel.size // 2
    out = ndimage.correlate1d(arr, kernel, axis=0)
    out = ndimage.correlate1d(out, kernel, axis=1)
    return out[half:-half, half:-half]


def ssim(pred: HeightRaster, gt: HeightRaster, data_range: float) -> float:
    """Mean structural similarity with a Gaussian 11x11 window (sigma 1.5).

    Stabilizers are C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L the given
    data range. Only windows fully inside the raster contribute.
    """
    _require_same_meta(pred, gt)
    if not (data_range > 0):
        raise MetricError(f"data_range must be positive, got {data_range}")
    h, w = gt.meta.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise MetricError(f"raster {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x = np.nan_to_num(pred.values)
    y = np.nan_to_num(gt.values)
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mx, my = _windowed(x, k), _windowed(y, k)
    vx = _windowed(x * x, k) - mx**2
    vy = _windowed(y * y, k) - my**2
    cxy = _windowed(x * y, k) - mx * my
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx**2 + my**2 + c1) * (vx + vy + c2)
    return float((num / den).mean())


def evaluate_completed(pred: HeightRaster, gt: HeightRaster, change: BitMask) -> MetricsReport:
    """Metrics on completed pixels only.

    MAE/RMSE run over the change mask; SSIM runs on the full tile with
    non-changed pixels of the prediction replaced by ground truth, so any
    structural difference comes from the completed region.
    """
    _require_same_meta(pred, gt, change)
    if not change.bits.any():
        raise MetricError("change mask has no true bits")
    err = _region_errors(pred, gt, change)
    gt_vals = gt.valid_values
    data_range = float(gt_vals.max() - gt_vals.min())
    merged_vals = np.where(change.bits, pred.values, gt.values)
    merged = HeightRaster(gt.meta, np.where(np.isfinite(merged_vals), merged_vals, 0.0))
    gt_filled = HeightRaster(gt.meta, np.nan_to_num(gt.values))
    return MetricsReport(
        mae_m=float(np.abs(err).mean()),
        rmse_m=float(np.sqrt((err**2).mean())),
        ssim=ssim(merged, gt_filled, max(data_range, 1e-9)),
        n_pixels=int(err.size),
        region="completed",
        data_range=data_range,
    )
