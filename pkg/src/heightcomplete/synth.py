"""Synthetic scene generation for tests and demos.

Scenes are simple urban mosaics: a gently varying ground surface with
rectangular buildings and round trees. Heights, land-cover labels and a
rendered RGB image stay mutually consistent so that completion methods
have real structure to exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degrade import LulcClass, LulcRaster
from .raster import BitMask, GridMeta, HeightRaster, RgbImage

GROUND, BUILDING, TREE = 0, 1, 2

CLASS_TABLE = {
    GROUND: LulcClass("ground", is_object=False),
    BUILDING: LulcClass("building", is_object=True),
    TREE: LulcClass("tree", is_object=True),
}


@dataclass(frozen=True)
class SyntheticScene:
    rgb: RgbImage
    gt: HeightRaster
    lulc: LulcRaster

    @property
    def meta(self) -> GridMeta:
        return self.gt.meta


def make_scene(
    size: int = 128,
    pixel_size: float = 1.0,
    n_buildings: int = 8,
    n_trees: int = 6,
    seed: int = 0,
    origin: tuple[float, float] = (500000.0, 4400000.0),
    crs_tag: str = "EPSG:32613",
) -> SyntheticScene:
    """Random but fully seeded synthetic scene of the given pixel size."""
    rng = np.random.default_rng(seed)
    meta = GridMeta(size, size, pixel_size, origin, crs_tag)

    ys, xs = np.mgrid[0:size, 0:size] / size
    ground = 0.5 * np.sin(2 * np.pi * xs) * np.cos(np.pi * ys)
    heights = ground.copy()
    labels = np.full((size, size), GROUND, dtype=np.int64)

    for _ in range(n_buildings):
        h = rng.uniform(4.0, 25.0)
        bw, bh = rng.integers(size // 16, size // 5, size=2)
        r0 = int(rng.integers(0, max(1, size - bh)))
        c0 = int(rng.integers(0, max(1, size - bw)))
        heights[r0 : r0 + bh, c0 : c0 + bw] = ground[r0 : r0 + bh, c0 : c0 + bw] + h
        labels[r0 : r0 + bh, c0 : c0 + bw] = BUILDING

    for _ in range(n_trees):
        h = rng.uniform(3.0, 12.0)
        radius = int(rng.integers(max(2, size // 40), max(3, size // 16)))
        cy, cx = rng.integers(radius, size - radius, size=2)
        dist2 = (np.arange(size)[:, None] - cy) ** 2 + (np.arange(size)[None, :] - cx) ** 2
        blob = dist2 <= radius**2
        canopy = ground + h * np.sqrt(np.clip(1.0 - dist2 / max(radius**2, 1), 0.0, 1.0))
        keep = blob & (labels != BUILDING)
        heights[keep] = canopy[keep]
        labels[keep] = TREE

    rgb = _render_rgb(labels, heights, rng)
    gt = HeightRaster(meta, heights, BitMask(meta, np.zeros((size, size), bool)))
    lulc = LulcRaster(meta, labels, CLASS_TABLE)
    return SyntheticScene(RgbImage(meta, rgb), gt, lulc)


def _render_rgb(labels: np.ndarray, heights: np.ndarray, rng) -> np.ndarray:
    palette = {
        GROUND: np.array([0.45, 0.40, 0.33]),
        BUILDING: np.array([0.62, 0.60, 0.58]),
        TREE: np.array([0.15, 0.42, 0.18]),
    }
    rgb = np.zeros(labels.shape + (3,))
    for code, color in palette.items():
        rgb[labels == code] = color
    span = heights.max() - heights.min()
    shade = 0.15 * (heights - heights.min()) / (span if span > 0 else 1.0)
    rgb = rgb + shade[..., None] + rng.normal(0.0, 0.01, rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


def two_region_scene(
    size: int = 64,
    pixel_size: float = 1.0,
    region_affines=((0.5, 3.0), (2.0, -1.0)),
    seed: int = 0,
) -> tuple[SyntheticScene, "np.ndarray"]:
    """Scene split into two visually distinct halves with region-specific
    affine distortions for the relative map.

    Returns the scene and a float array of per-pixel (a, b) of shape
    (H, W, 2); ``rel = a * gt + b`` region-wise.
    """
    rng = np.random.default_rng(seed)
    meta = GridMeta(size, size, pixel_size, (0.0, 0.0), "local")
    half = size // 2

    heights = rng.uniform(0.0, 1.0, (size, size))
    heights[:, :half] += np.linspace(2.0, 8.0, half)[None, :]
    heights[:, half:] += np.linspace(9.0, 3.0, size - half)[None, :]

    labels = np.full((size, size), GROUND, dtype=np.int64)
    labels[:, half:] = BUILDING

    rgb = np.empty((size, size, 3))
    rgb[:, :half] = [0.1, 0.5, 0.15]
    rgb[:, half:] = [0.7, 0.65, 0.6]

    ab = np.empty((size, size, 2))
    (a1, b1), (a2, b2) = region_affines
    ab[:, :half] = [a1, b1]
    ab[:, half:] = [a2, b2]

    gt = HeightRaster(meta, heights, BitMask(meta, np.zeros((size, size), bool)))
    scene = SyntheticScene(RgbImage(meta, rgb), gt, LulcRaster(meta, labels, CLASS_TABLE))
    return scene, ab


def checkerboard_prior(gt: HeightRaster, cell: int = 4, keep: str = "even") -> HeightRaster:
    """Remove alternating square cells from the ground truth."""
    ys, xs = np.mgrid[0 : gt.meta.height, 0 : gt.meta.width]
    parity = ((ys // cell) + (xs // cell)) % 2
    drop = parity == (1 if keep == "even" else 0)
    return HeightRaster(gt.meta, gt.values, gt.nodata | BitMask(gt.meta, drop))
