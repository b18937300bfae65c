"""Relative-depth backend plugin registry.

A backend maps an RGB window (plus optional scene context) to a unitless
RelativeDepthMap. Production monocular models are consumed through
external weight files; the synthetic oracle backend derives the relative
map from ground truth and exists for tests and demos only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .raster import HeightRaster, RelativeDepthMap, RgbImage


class DepthBackendError(RuntimeError):
    """Raised when a backend is unknown or its weights are unavailable."""


# Scene context passed to a backend: at least "rgb"; the oracle additionally
# needs "gt". Backends must not read the prior.
DepthBackend = Callable[[Mapping[str, object]], RelativeDepthMap]

_EXTERNAL_MODELS = ("depth_anything_v2", "depth_pro", "moge2")


@dataclass(frozen=True)
class OracleDepthBackend:
    """rel = a * gt + b + noise; affine-invertible ground-truth distortion."""

    a: float = 1.0
    b: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __call__(self, scene: Mapping[str, object]) -> RelativeDepthMap:
        gt = scene.get("gt")
        if not isinstance(gt, HeightRaster):
            raise DepthBackendError("oracle depth backend requires a ground-truth raster in the scene")
        values = self.a * np.nan_to_num(gt.values) + self.b
        if self.noise_sigma > 0:
            rng = np.random.default_rng(self.seed)
            values = values + rng.normal(0.0, self.noise_sigma, values.shape)
        return RelativeDepthMap(gt.meta, values)


def affine_of_gt(a: float = 1.0, b: float = 0.0, noise_sigma: float = 0.0, seed: int = 0) -> DepthBackend:
    """Synthetic oracle backend used only in tests and demos."""
    return OracleDepthBackend(a, b, noise_sigma, seed)


@dataclass(frozen=True)
class PrecomputedDepthBackend:
    """Serve an externally produced relative map (e.g. model output on disk)."""

    rel: RelativeDepthMap

    def __call__(self, scene: Mapping[str, object]) -> RelativeDepthMap:
        rgb = scene.get("rgb")
        if isinstance(rgb, RgbImage) and rgb.meta != self.rel.meta:
            raise DepthBackendError("precomputed relative map does not match the scene grid")
        return self.rel


def get_depth_backend(name: str, **params) -> DepthBackend:
    """Resolve a backend by name.

    ``oracle`` takes a/b/noise_sigma/seed; ``precomputed`` takes ``path``;
    the external foundation models require a configured weights file and
    raise a clear error otherwise, suggesting the oracle fallback.
    """
    if name == "oracle":
        return affine_of_gt(**params)
    if name == "precomputed":
        from .raster import load_raster

        path = params.get("path")
        if path is None:
            raise DepthBackendError("precomputed depth backend requires a 'path'")
        return PrecomputedDepthBackend(load_raster(path, "relative"))
    if name in _EXTERNAL_MODELS:
        weights = params.get("weights_path")
        raise DepthBackendError(
            f"depth backend {name!r} needs external model weights"
            + (f" (not found at {weights})" if weights else " (no weights_path configured)")
            + "; use depth_backend 'oracle' or 'precomputed' for synthetic runs"
        )
    raise DepthBackendError(f"unknown depth backend {name!r}")
