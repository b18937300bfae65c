"""Non-learning completion and alignment strategies.

Four strategies over a relative depth map and an incomplete metric prior:
global affine rescaling, bilinear hole filling, locally weighted linear
regression, and kNN-local affine alignment (spatial or feature-space
neighbors). All of them leave valid prior pixels untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .raster import BitMask, HeightRaster, RelativeDepthMap, _require_same_meta

_QUERY_CHUNK = 2048


class AlignmentError(ValueError):
    """Raised when an alignment strategy's preconditions are not met."""


@dataclass(frozen=True)
class AffinePair:
    """Scale (meters per relative unit) and shift (meters).

    ``degenerate`` marks fits where the relative values carried no slope
    information and the scale collapsed to zero.
    """

    scale: float
    shift: float
    degenerate: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.scale) and np.isfinite(self.shift)):
            raise AlignmentError(f"non-finite affine pair ({self.scale}, {self.shift})")


@dataclass(frozen=True)
class NeighborQueryConfig:
    k: int = 16
    bandwidth_m: float = 30.0
    metric: str = "spatial"  # spatial | feature

    def __post_init__(self):
        if self.k < 1:
            raise AlignmentError(f"k must be >= 1, got {self.k}")
        if not (self.bandwidth_m > 0):
            raise AlignmentError(f"bandwidth_m must be > 0, got {self.bandwidth_m}")
        if self.metric not in ("spatial", "feature"):
            raise AlignmentError(f"unknown metric {self.metric!r}")


def _affine_lstsq(r: np.ndarray, h: np.ndarray, w: np.ndarray | None = None):
    """Closed-form (weighted) least squares of h on (r, 1).

    Returns (scale, shift, degenerate).
    """
    if w is None:
        w = np.ones_like(r)
    sw = w.sum()
    mr = (w * r).sum() / sw
    mh = (w * h).sum() / sw
    var = (w * (r - mr) ** 2).sum() / sw
    scale_ref = max(1.0, float(np.abs(r).max()) ** 2) if r.size else 1.0
    if var <= 1e-12 * scale_ref:
        return 0.0, float(mh), True
    cov = (w * (r - mr) * (h - mh)).sum() / sw
    s = cov / var
    return float(s), float(mh - s * mr), False


def global_affine_fit(rel: RelativeDepthMap, prior: HeightRaster) -> AffinePair:
    """Single scale-shift pair minimizing squared error over all valid prior
    pixels; degenerate inputs fall back to a pure shift."""
    _require_same_meta(rel, prior)
    valid = prior.valid
    if valid.sum() < 2:
        raise AlignmentError(f"need >= 2 valid prior pixels, got {int(valid.sum())}")
    s, b, degenerate = _affine_lstsq(rel.values[valid], prior.values[valid])
    return AffinePair(s, b, degenerate)


def apply_affine(rel: RelativeDepthMap, p: AffinePair) -> HeightRaster:
    """Compose scale * rel + shift into a fully valid height raster."""
    return HeightRaster(rel.meta, p.scale * rel.values + p.shift, BitMask(rel.meta, np.zeros(rel.meta.shape, bool)))


# ---------------------------------------------------------------------------
# Bilinear hole filling
# ---------------------------------------------------------------------------


def _interp_lines(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Linear interpolation along axis 1 between bracketing valid samples.

    Outside the valid span the nearest valid value is extended; lines with
    no valid sample stay NaN.
    """
    out = np.full(values.shape, np.nan)
    idx = np.arange(values.shape[1])
    for i in range(values.shape[0]):
        v = valid[i]
        if v.any():
            out[i] = np.interp(idx, idx[v], values[i, v])
    return out


def bilinear_fill(prior: HeightRaster) -> HeightRaster:
    """Fill nodata pixels by bilinear interpolation from the valid lattice.

    Missing cells take the mean of a row-wise and a column-wise linear
    interpolation between bracketing valid pixels, which reproduces any
    a + bx + cy + dxy surface exactly on interior rectangular holes.
    Holes touching the border are extended from the nearest valid values.
    """
    valid = prior.valid
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise AlignmentError("bilinear_fill requires at least one valid pixel")
    if n_valid == valid.size:
        return prior

    rows = _interp_lines(prior.values, valid)
    cols = _interp_lines(prior.values.T, valid.T).T
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        filled = np.nanmean(np.stack([rows, cols]), axis=0)

    missing = ~np.isfinite(filled)
    if missing.any():
        # rows/columns with no valid sample at all: take the nearest valid value
        from scipy import ndimage

        _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
        nearest = prior.values[ri, ci]
        filled[missing] = nearest[missing]

    filled[valid] = prior.values[valid]
    return HeightRaster(prior.meta, filled, BitMask(prior.meta, np.zeros(prior.meta.shape, bool)))


# ---------------------------------------------------------------------------
# LWLR and kNN local affine completion
# ---------------------------------------------------------------------------


def _pixel_coords_m(meta) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0 : meta.height, 0 : meta.width]
    return ys.astype(np.float64) * meta.pixel_size, xs.astype(np.float64) * meta.pixel_size


def lwlr_complete(rel: RelativeDepthMap, prior: HeightRaster, cfg: NeighborQueryConfig) -> HeightRaster:
    """Locally weighted linear regression completion.

    Each missing pixel gets its own scale-shift pair fitted over all valid
    pixels with Gaussian spatial weights exp(-d^2 / (2 bandwidth^2)).
    Pixels whose weighted fit is degenerate fall back to shift-only with
    the global scale.
    """
    _require_same_meta(rel, prior)
    valid = prior.valid
    if valid.sum() < 2:
        raise AlignmentError(f"need >= 2 valid prior pixels, got {int(valid.sum())}")
    g = global_affine_fit(rel, prior)

    ym, xm = _pixel_coords_m(prior.meta)
    vy, vx = ym[valid], xm[valid]
    vr, vh = rel.values[valid], prior.values[valid]
    miss = np.flatnonzero(~valid.ravel())
    qy, qx = ym.ravel()[miss], xm.ravel()[miss]
    qr = rel.values.ravel()[miss]

    out = prior.values.copy()
    flat = out.ravel()
    inv2b2 = 1.0 / (2.0 * cfg.bandwidth_m**2)
    scale_ref = max(1.0, float(np.abs(vr).max()) ** 2)
    for lo in range(0, miss.size, _QUERY_CHUNK):
        sl = slice(lo, lo + _QUERY_CHUNK)
        d2 = (qy[sl, None] - vy[None, :]) ** 2 + (qx[sl, None] - vx[None, :]) ** 2
        w = np.exp(-d2 * inv2b2)
        sw = w.sum(axis=1)
        mr = w @ vr / sw
        mh = w @ vh / sw
        var = (w * (vr[None, :] - mr[:, None]) ** 2).sum(axis=1) / sw
        cov = (w * (vr[None, :] - mr[:, None]) * (vh[None, :] - mh[:, None])).sum(axis=1) / sw
        degen = var <= 1e-12 * scale_ref
        s = np.where(degen, 0.0, cov / np.where(degen, 1.0, var))
        b = mh - s * mr
        # degenerate: shift-only around the global scale
        s = np.where(degen, g.scale, s)
        b = np.where(degen, (w @ (vh - g.scale * vr)) / sw, b)
        flat[miss[sl]] = s * qr[sl] + b
    return HeightRaster(prior.meta, out.reshape(prior.meta.shape), BitMask(prior.meta, np.zeros(prior.meta.shape, bool)))


def knn_affine_complete(
    rel: RelativeDepthMap,
    prior: HeightRaster,
    cfg: NeighborQueryConfig,
    features=None,
) -> HeightRaster:
    """Local affine completion from the k nearest valid pixels.

    Neighbors are selected by spatial Euclidean distance in meters, or by
    cosine distance in feature space when ``cfg.metric == "feature"``
    (``features`` must then be a DenseFeatureMap covering the tile).
    Ties are broken by row-major pixel index; degenerate neighborhoods fall
    back to shift-only with the global scale.
    """
    import warnings

    _require_same_meta(rel, prior)
    valid = prior.valid
    n_valid = int(valid.sum())
    if n_valid < 2:
        raise AlignmentError(f"need >= 2 valid prior pixels, got {n_valid}")
    if cfg.metric == "feature" and features is None:
        raise AlignmentError("metric='feature' requires a DenseFeatureMap")

    k = cfg.k
    if k > n_valid:
        warnings.warn(f"k={k} exceeds {n_valid} valid pixels; clamping", stacklevel=2)
        k = n_valid

    g = global_affine_fit(rel, prior)
    miss = np.flatnonzero(~valid.ravel())
    vr, vh = rel.values[valid], prior.values[valid]

    if cfg.metric == "spatial":
        ym, xm = _pixel_coords_m(prior.meta)
        vpts = np.column_stack([ym[valid], xm[valid]])
        qpts = np.column_stack([ym.ravel()[miss], xm.ravel()[miss]])
    else:
        feats = features.pixel_features()
        fm = feats.reshape(-1, feats.shape[-1])
        norms = np.linalg.norm(fm, axis=1, keepdims=True)
        fm = fm / np.where(norms > 0, norms, 1.0)
        vpts = fm[valid.ravel()]
        qpts = fm[miss]

    out = prior.values.copy()
    flat = out.ravel()
    qr = rel.values.ravel()[miss]
    scale_ref = max(1.0, float(np.abs(vr).max()) ** 2)
    for lo in range(0, miss.size, _QUERY_CHUNK):
        sl = slice(lo, lo + _QUERY_CHUNK)
        if cfg.metric == "spatial":
            d = ((qpts[sl, None, :] - vpts[None, :, :]) ** 2).sum(axis=2)
        else:
            d = 1.0 - qpts[sl] @ vpts.T
        # stable sort keeps row-major order (valid pixels enumerated row-major)
        nn = np.argsort(d, axis=1, kind="stable")[:, :k]
        nr, nh = vr[nn], vh[nn]
        mr, mh = nr.mean(axis=1), nh.mean(axis=1)
        var = ((nr - mr[:, None]) ** 2).mean(axis=1)
        cov = ((nr - mr[:, None]) * (nh - mh[:, None])).mean(axis=1)
        degen = var <= 1e-12 * scale_ref
        s = np.where(degen, g.scale, cov / np.where(degen, 1.0, var))
        b = np.where(degen, (nh - g.scale * nr).mean(axis=1), mh - s * mr)
        flat[miss[sl]] = s * qr[sl] + b
    return HeightRaster(prior.meta, out.reshape(prior.meta.shape), BitMask(prior.meta, np.zeros(prior.meta.shape, bool)))
