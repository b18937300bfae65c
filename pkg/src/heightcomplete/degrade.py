"""Reproducible degradation of ground-truth height rasters.

Incomplete priors are generated by removing randomly selected surface
objects (connected components of removable land-cover classes) together
with a surrounding metric buffer, until a target missing fraction is
reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage

from .raster import BitMask, GridMeta, HeightRaster, RasterError, _dilate_bool, _require_same_meta

_CONNECT_8 = np.ones((3, 3), dtype=bool)


class DegradationError(ValueError):
    """Raised when a requested degradation cannot be produced.

    ``max_achievable`` carries the largest missing fraction reachable with
    the available objects, when that is the cause.
    """

    def __init__(self, message: str, max_achievable: float | None = None):
        super().__init__(message)
        self.max_achievable = max_achievable


@dataclass(frozen=True)
class LulcClass:
    name: str
    is_object: bool


@dataclass(frozen=True)
class LulcRaster:
    """Integer land-use / land-cover class grid with a class table."""

    meta: GridMeta
    labels: np.ndarray = field(repr=False)
    class_table: Mapping[int, LulcClass] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.shape != self.meta.shape:
            raise RasterError(f"labels shape {labels.shape} does not match meta {self.meta.shape}")
        present = set(np.unique(labels).tolist())
        missing = present - set(self.class_table)
        if missing:
            raise RasterError(f"labels {sorted(missing)} missing from class_table")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_table", dict(self.class_table))

    def object_codes(self) -> list[int]:
        return sorted(c for c, cls in self.class_table.items() if cls.is_object)


@dataclass(frozen=True)
class DegradationSpec:
    """Target missing fraction, object buffer and the classes to remove."""

    target_fraction: float
    buffer_m: float = 10.0
    object_classes: frozenset[int] = frozenset()
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.target_fraction < 1.0):
            raise DegradationError(f"target_fraction must be in (0, 1), got {self.target_fraction}")
        if self.buffer_m < 0:
            raise DegradationError(f"buffer_m must be >= 0, got {self.buffer_m}")
        object.__setattr__(self, "object_classes", frozenset(self.object_classes))


@dataclass(frozen=True)
class DegradationResult:
    mask: BitMask
    achieved_fraction: float
    selected_components: int
    seed: int
    # pixels of the components actually selected, pre-buffer
    selected_object_pixels: BitMask | None = None


def _components(lulc: LulcRaster, codes) -> list[np.ndarray]:
    """8-connected components of each object class, as (rows, cols) index pairs."""
    comps = []
    for code in sorted(codes):
        labeled, n = ndimage.label(lulc.labels == code, structure=_CONNECT_8)
        comps.extend(ndimage.value_indices(labeled, ignore_value=0).values() if n else [])
    return comps


def build_change_mask(lulc: LulcRaster, spec: DegradationSpec) -> DegradationResult:
    """Select buffered objects in seeded-random order until the target missing
    fraction is reached.

    Selection is without replacement; each selected component is dilated by
    ``buffer_m`` and unioned into the mask. Deterministic for fixed inputs
    and seed. Raises :class:`DegradationError` with the maximum achievable
    fraction if even all objects together fall short of the target.
    """
    codes = spec.object_classes or lulc.object_codes()
    bad = [c for c in codes if c not in lulc.class_table or not lulc.class_table[c].is_object]
    if bad:
        raise DegradationError(f"classes {sorted(bad)} are not removable object classes")
    comps = _components(lulc, codes)
    if not comps:
        raise DegradationError("lulc contains no connected component of an object class")

    radius_px = spec.buffer_m / lulc.meta.pixel_size
    total = lulc.labels.size
    order = np.random.default_rng(spec.seed).permutation(len(comps))

    mask = np.zeros(lulc.meta.shape, dtype=bool)
    picked = np.zeros_like(mask)
    selected = 0
    for idx in order:
        comp = np.zeros_like(mask)
        comp[comps[idx]] = True
        picked |= comp
        mask |= _dilate_bool(comp, radius_px) if radius_px > 0 else comp
        selected += 1
        if mask.sum() / total >= spec.target_fraction:
            return DegradationResult(
                mask=BitMask(lulc.meta, mask),
                achieved_fraction=mask.sum() / total,
                selected_components=selected,
                seed=spec.seed,
                selected_object_pixels=BitMask(lulc.meta, picked),
            )
    raise DegradationError(
        f"target fraction {spec.target_fraction} unreachable; "
        f"all {selected} objects with buffers cover only {mask.sum() / total:.4f}",
        max_achievable=mask.sum() / total,
    )


def apply_degradation(gt: HeightRaster, change: BitMask) -> HeightRaster:
    """Convert changed cells of a ground-truth raster to nodata."""
    _require_same_meta(gt, change)
    return HeightRaster(gt.meta, gt.values, gt.nodata | change)
