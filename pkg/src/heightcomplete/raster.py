"""Core raster containers, geospatial metadata, tiling, mask morphology and IO.

All containers are immutable after construction and validated on creation.
Missing data is always carried as an explicit boolean mask, never as a
sentinel value inside arithmetic paths; sentinels only exist on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import tifffile
from scipy import ndimage

DEFAULT_NODATA_SENTINEL = -9999.0

# GeoTIFF tag codes used for the on-disk geotransform.
_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GDAL_NODATA = 42113


class RasterError(ValueError):
    """Raised for malformed raster files or inconsistent raster inputs."""


@dataclass(frozen=True)
class GridMeta:
    """Geospatial grid descriptor shared by all rasters of one scene.

    ``origin`` is the (easting, northing) of the top-left corner of the
    top-left pixel, in meters. Pixels are square; anisotropic resolutions
    are rejected at load time.
    """

    width: int
    height: int
    pixel_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    crs_tag: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise RasterError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if not (self.pixel_size > 0):
            raise RasterError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols) array shape."""
        return (self.height, self.width)

    def shifted(self, row0: int, col0: int, height: int, width: int) -> "GridMeta":
        """Metadata of a window starting at pixel (row0, col0)."""
        e, n = self.origin
        return GridMeta(
            width=width,
            height=height,
            pixel_size=self.pixel_size,
            origin=(e + col0 * self.pixel_size, n - row0 * self.pixel_size),
            crs_tag=self.crs_tag,
        )


def _check_shape(meta: GridMeta, arr: np.ndarray, name: str):
    if arr.shape[:2] != meta.shape:
        raise RasterError(f"{name} shape {arr.shape[:2]} does not match meta {meta.shape}")


@dataclass(frozen=True)
class BitMask:
    """Binary grid; used for change masks and validity masks."""

    meta: GridMeta
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        _check_shape(self.meta, bits, "bits")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def true_count(self) -> int:
        return int(self.bits.sum())

    @property
    def true_fraction(self) -> float:
        return float(self.bits.mean())

    def crop(self, r0: int, c0: int, h: int, w: int) -> "BitMask":
        return BitMask(self.meta.shifted(r0, c0, h, w), self.bits[r0 : r0 + h, c0 : c0 + w])

    def __or__(self, other: "BitMask") -> "BitMask":
        _require_same_meta(self, other)
        return BitMask(self.meta, self.bits | other.bits)

    def __and__(self, other: "BitMask") -> "BitMask":
        _require_same_meta(self, other)
        return BitMask(self.meta, self.bits & other.bits)

    def __invert__(self) -> "BitMask":
        return BitMask(self.meta, ~self.bits)


@dataclass(frozen=True)
class HeightRaster:
    """Metric height grid (meters) with an explicit nodata mask.

    Cells flagged nodata are stored as NaN internally; every non-flagged
    cell is finite.
    """

    meta: GridMeta
    values: np.ndarray = field(repr=False)
    nodata: BitMask = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        _check_shape(self.meta, values, "values")
        nodata = self.nodata
        if nodata is None:
            nodata = BitMask(self.meta, ~np.isfinite(values))
        if nodata.meta.shape != self.meta.shape:
            raise RasterError("nodata mask shape does not match values")
        if not np.isfinite(values[~nodata.bits]).all():
            raise RasterError("non-finite height values outside the nodata mask")
        values[nodata.bits] = np.nan
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nodata", nodata)

    @property
    def valid(self) -> np.ndarray:
        """Boolean array, True where a metric value is present."""
        return ~self.nodata.bits

    @property
    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]

    def crop(self, r0: int, c0: int, h: int, w: int) -> "HeightRaster":
        return HeightRaster(
            self.meta.shifted(r0, c0, h, w),
            self.values[r0 : r0 + h, c0 : c0 + w],
            self.nodata.crop(r0, c0, h, w),
        )


@dataclass(frozen=True)
class RgbImage:
    """3-channel reflectance image with values in [0, 1]."""

    meta: GridMeta
    channels: np.ndarray = field(repr=False)

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        if ch.ndim != 3 or ch.shape[2] != 3:
            raise RasterError(f"rgb channels must have shape (H, W, 3), got {ch.shape}")
        _check_shape(self.meta, ch, "channels")
        if not np.isfinite(ch).all():
            raise RasterError("non-finite rgb values")
        np.clip(ch, 0.0, 1.0, out=ch)
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    def crop(self, r0: int, c0: int, h: int, w: int) -> "RgbImage":
        return RgbImage(self.meta.shifted(r0, c0, h, w), self.channels[r0 : r0 + h, c0 : c0 + w])


@dataclass(frozen=True)
class RelativeDepthMap:
    """Unitless monocular prediction; meaningful only up to scale and shift."""

    meta: GridMeta
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        _check_shape(self.meta, values, "values")
        if not np.isfinite(values).all():
            raise RasterError("relative depth values must all be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def crop(self, r0: int, c0: int, h: int, w: int) -> "RelativeDepthMap":
        return RelativeDepthMap(self.meta.shifted(r0, c0, h, w), self.values[r0 : r0 + h, c0 : c0 + w])


Raster = HeightRaster | RgbImage | BitMask | RelativeDepthMap


def _require_same_meta(*rasters):
    metas = [r.meta for r in rasters]
    first = metas[0]
    for m in metas[1:]:
        if m != first:
            raise RasterError(f"rasters do not share GridMeta: {m} != {first}")
    return first


# ---------------------------------------------------------------------------
# File IO (GeoTIFF-compatible via tifffile)
# ---------------------------------------------------------------------------


def _geo_extratags(meta: GridMeta, nodata: float | None):
    ps = float(meta.pixel_size)
    e, n = meta.origin
    tags = [
        (_TAG_PIXEL_SCALE, "d", 3, (ps, ps, 0.0)),
        (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, e, n, 0.0)),
    ]
    if nodata is not None:
        nod = repr(float(nodata)) + "\x00"
        tags.append((_TAG_GDAL_NODATA, "s", len(nod), nod))
    return tags


def save_raster(obj: Raster, path, nodata_sentinel: float = DEFAULT_NODATA_SENTINEL) -> None:
    """Write a raster to a GeoTIFF-compatible file.

    Heights and relative maps are stored as 64-bit floats (bit-exact round
    trip), masks as 8-bit 0/1, RGB as 8-bit per channel.
    """
    path = Path(path)
    desc = json.dumps({"crs": obj.meta.crs_tag, "kind": _kind_of(obj)})
    if isinstance(obj, HeightRaster):
        data = obj.values.copy()
        data[obj.nodata.bits] = nodata_sentinel
        extratags = _geo_extratags(obj.meta, nodata_sentinel)
    elif isinstance(obj, RelativeDepthMap):
        data = obj.values
        extratags = _geo_extratags(obj.meta, None)
    elif isinstance(obj, BitMask):
        data = obj.bits.astype(np.uint8)
        extratags = _geo_extratags(obj.meta, None)
    elif isinstance(obj, RgbImage):
        data = np.round(obj.channels * 255.0).astype(np.uint8)
        extratags = _geo_extratags(obj.meta, None)
    else:
        raise RasterError(f"unsupported raster object {type(obj).__name__}")
    try:
        tifffile.imwrite(
            path,
            data,
            photometric="rgb" if isinstance(obj, RgbImage) else "minisblack",
            description=desc,
            extratags=extratags,
        )
    except OSError as exc:
        raise RasterError(f"cannot write raster to {path}: {exc}") from exc


def _kind_of(obj: Raster) -> str:
    return {HeightRaster: "height", RgbImage: "rgb", BitMask: "mask", RelativeDepthMap: "relative"}[type(obj)]


def load_raster(path, kind: str, nodata_sentinel: float | None = None) -> Raster:
    """Load a georeferenced raster file as the requested container kind.

    ``kind`` is one of ``height``, ``rgb``, ``mask``, ``relative``. The
    nodata sentinel defaults to the value recorded in the file (GDAL nodata
    tag), falling back to -9999.
    """
    path = Path(path)
    if kind not in ("height", "rgb", "mask", "relative"):
        raise RasterError(f"unknown raster kind {kind!r}")
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            data = page.asarray()
            tags = {}
            for t in page.tags.values():
                tags.setdefault(t.code, t.value)
    except (OSError, tifffile.TiffFileError) as exc:
        raise RasterError(f"unreadable raster file {path}: {exc}") from exc

    if _TAG_PIXEL_SCALE not in tags or _TAG_TIEPOINT not in tags:
        raise RasterError(f"{path}: missing geotransform (pixel scale / tiepoint tags)")
    sx, sy = float(tags[_TAG_PIXEL_SCALE][0]), float(tags[_TAG_PIXEL_SCALE][1])
    if abs(sx - sy) > 1e-9 * max(abs(sx), abs(sy)):
        raise RasterError(f"{path}: anisotropic pixels ({sx} x {sy}) are not supported")
    tie = tags[_TAG_TIEPOINT]
    origin = (float(tie[3]), float(tie[4]))

    crs = ""
    desc = tags.get(270, "")
    if desc:
        try:
            crs = json.loads(desc).get("crs", "")
        except (json.JSONDecodeError, AttributeError):
            crs = str(desc)

    if nodata_sentinel is None:
        raw = tags.get(_TAG_GDAL_NODATA)
        nodata_sentinel = float(str(raw).strip("\x00 ")) if raw is not None else DEFAULT_NODATA_SENTINEL

    if kind == "rgb":
        if data.ndim != 3 or data.shape[2] != 3:
            bands = data.shape[2] if data.ndim == 3 else 1
            raise RasterError(f"{path}: band-count mismatch, rgb needs 3 bands, file has {bands}")
        meta = GridMeta(data.shape[1], data.shape[0], sx, origin, crs)
        ch = data.astype(np.float64)
        if np.issubdtype(data.dtype, np.integer):
            ch = ch / float(np.iinfo(data.dtype).max)
        return RgbImage(meta, ch)

    if data.ndim != 2:
        bands = data.shape[2] if data.ndim == 3 else data.ndim
        raise RasterError(f"{path}: band-count mismatch, {kind} needs 1 band, file has {bands}")
    meta = GridMeta(data.shape[1], data.shape[0], sx, origin, crs)
    if kind == "mask":
        return BitMask(meta, data != 0)
    values = data.astype(np.float64)
    if kind == "relative":
        return RelativeDepthMap(meta, values)
    nodata = ~np.isfinite(values) | (values == nodata_sentinel)
    return HeightRaster(meta, values, BitMask(meta, nodata))


# ---------------------------------------------------------------------------
# Tiling and mask morphology
# ---------------------------------------------------------------------------


def tile(scene: Mapping[str, Raster], tile_px: int) -> list[dict[str, Raster]]:
    """Split aligned rasters into non-overlapping square tiles, row-major.

    Trailing partial tiles are dropped so every tile has uniform shape.
    """
    if tile_px <= 0:
        raise RasterError(f"tile_px must be positive, got {tile_px}")
    if not scene:
        raise RasterError("empty scene")
    meta = _require_same_meta(*scene.values())
    if tile_px > min(meta.width, meta.height):
        raise RasterError(f"tile_px {tile_px} larger than scene {meta.width}x{meta.height}")
    tiles = []
    for i in range(meta.height // tile_px):
        for j in range(meta.width // tile_px):
            r0, c0 = i * tile_px, j * tile_px
            tiles.append({k: v.crop(r0, c0, tile_px, tile_px) for k, v in scene.items()})
    return tiles


def dilate_mask(mask: BitMask, radius_m: float) -> BitMask:
    """Grow the true set by a Euclidean buffer of ``radius_m`` meters.

    A bit is set iff any input true bit lies within center-to-center
    distance radius_m (converted to pixels via pixel_size).
    """
    if radius_m < 0:
        raise RasterError(f"radius_m must be >= 0, got {radius_m}")
    if radius_m == 0 or not mask.bits.any():
        return mask
    radius_px = radius_m / mask.meta.pixel_size
    return BitMask(mask.meta, _dilate_bool(mask.bits, radius_px))


def _dilate_bool(bits: np.ndarray, radius_px: float) -> np.ndarray:
    dist = ndimage.distance_transform_edt(~bits)
    return dist <= radius_px + 1e-9
