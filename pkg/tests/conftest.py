import numpy as np
import pytest

from heightcomplete import BitMask, GridMeta, HeightRaster, make_toy_backbone
from heightcomplete import synth


@pytest.fixture(scope="session")
def backbone8():
    return make_toy_backbone(0, patch_size=8, embed_dim=16, layers=1)


@pytest.fixture()
def scene64():
    return synth.make_scene(size=64, seed=1)


@pytest.fixture()
def meta16():
    return GridMeta(16, 16, 1.0)


def plane_raster(meta, a=1.0, b=2.0, c=3.0, d=0.5, hole=None):
    ys, xs = np.mgrid[0 : meta.height, 0 : meta.width].astype(float)
    values = a + b * xs + c * ys + d * xs * ys
    nodata = np.zeros(meta.shape, bool)
    if hole is not None:
        r0, r1, c0, c1 = hole
        nodata[r0:r1, c0:c1] = True
    return HeightRaster(meta, values, BitMask(meta, nodata))
