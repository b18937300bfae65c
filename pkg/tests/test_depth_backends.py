import numpy as np
import pytest

from heightcomplete import GridMeta, HeightRaster, RelativeDepthMap, RgbImage, save_raster
from heightcomplete.depth_backends import (
    DepthBackendError,
    OracleDepthBackend,
    get_depth_backend,
)


def _scene(size=8, seed=0):
    rng = np.random.default_rng(seed)
    meta = GridMeta(size, size, 1.0)
    return {
        "rgb": RgbImage(meta, rng.uniform(0, 1, (size, size, 3))),
        "gt": HeightRaster(meta, rng.uniform(0, 10, (size, size))),
    }


def test_oracle_affine_of_gt():
    scene = _scene()
    rel = get_depth_backend("oracle", a=0.5, b=2.0)(scene)
    assert np.abs(rel.values - (0.5 * scene["gt"].values + 2.0)).max() <= 1e-12


def test_oracle_noise_seeded():
    scene = _scene()
    a = OracleDepthBackend(noise_sigma=0.3, seed=4)(scene)
    b = OracleDepthBackend(noise_sigma=0.3, seed=4)(scene)
    c = OracleDepthBackend(noise_sigma=0.3, seed=5)(scene)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert not np.array_equal(a.values, scene["gt"].values)


def test_oracle_requires_gt():
    with pytest.raises(DepthBackendError, match="ground-truth"):
        get_depth_backend("oracle")({"rgb": _scene()["rgb"]})


def test_precomputed_backend(tmp_path):
    scene = _scene()
    rel = RelativeDepthMap(scene["gt"].meta, np.random.default_rng(1).uniform(0, 1, (8, 8)))
    save_raster(rel, tmp_path / "rel.tif")
    backend = get_depth_backend("precomputed", path=tmp_path / "rel.tif")
    out = backend(scene)
    assert np.abs(out.values - rel.values).max() <= 1e-6
    with pytest.raises(DepthBackendError, match="path"):
        get_depth_backend("precomputed")


def test_precomputed_grid_mismatch(tmp_path):
    rel = RelativeDepthMap(GridMeta(4, 4, 1.0), np.zeros((4, 4)))
    save_raster(rel, tmp_path / "rel.tif")
    backend = get_depth_backend("precomputed", path=tmp_path / "rel.tif")
    with pytest.raises(DepthBackendError, match="grid"):
        backend(_scene(size=8))


@pytest.mark.parametrize("name", ["depth_anything_v2", "depth_pro", "moge2"])
def test_external_models_need_weights(name):
    with pytest.raises(DepthBackendError, match="weights"):
        get_depth_backend(name)


def test_unknown_backend():
    with pytest.raises(DepthBackendError, match="unknown"):
        get_depth_backend("midas")
