import numpy as np
import pytest

from heightcomplete import (
    BitMask,
    DegradationError,
    DegradationSpec,
    GridMeta,
    HeightRaster,
    LulcClass,
    LulcRaster,
    apply_degradation,
    build_change_mask,
    dilate_mask,
)

TABLE = {
    0: LulcClass("ground", False),
    1: LulcClass("building", True),
    2: LulcClass("tree", True),
}


def _lulc(labels, ps=1.0):
    meta = GridMeta(labels.shape[1], labels.shape[0], ps)
    return LulcRaster(meta, labels, TABLE)


def test_class_table_must_cover_labels():
    labels = np.zeros((4, 4), int)
    labels[0, 0] = 7
    with pytest.raises(Exception, match="class_table"):
        LulcRaster(GridMeta(4, 4, 1.0), labels, TABLE)


def test_spec_validation():
    with pytest.raises(DegradationError):
        DegradationSpec(target_fraction=0.0)
    with pytest.raises(DegradationError):
        DegradationSpec(target_fraction=1.5)
    with pytest.raises(DegradationError):
        DegradationSpec(target_fraction=0.5, buffer_m=-1)


def test_single_candidate_building():
    labels = np.zeros((20, 20), int)
    labels[5:15, 5:15] = 1  # 100 px building, buffer 1 m grows it
    lulc = _lulc(labels)
    spec = DegradationSpec(target_fraction=0.25, buffer_m=1.0, seed=0)
    res = build_change_mask(lulc, spec)
    expected = dilate_mask(BitMask(lulc.meta, labels == 1), 1.0)
    assert np.array_equal(res.mask.bits, expected.bits)
    assert res.achieved_fraction == pytest.approx(expected.true_fraction)
    assert res.achieved_fraction >= 0.25
    assert res.selected_components == 1


def test_determinism_same_seed():
    rng = np.random.default_rng(5)
    labels = (rng.random((64, 64)) < 0.2).astype(int)
    lulc = _lulc(labels)
    spec = DegradationSpec(target_fraction=0.3, buffer_m=2.0, seed=42)
    a = build_change_mask(lulc, spec)
    b = build_change_mask(lulc, spec)
    assert np.array_equal(a.mask.bits, b.mask.bits)
    assert a.achieved_fraction == b.achieved_fraction
    c = build_change_mask(lulc, DegradationSpec(target_fraction=0.3, buffer_m=2.0, seed=43))
    assert not np.array_equal(a.mask.bits, c.mask.bits)


def test_unreachable_target_reports_max_achievable():
    labels = np.zeros((20, 20), int)
    labels[0:4, 0:4] = 1
    lulc = _lulc(labels)
    with pytest.raises(DegradationError) as exc:
        build_change_mask(lulc, DegradationSpec(target_fraction=0.75, buffer_m=0.0, seed=0))
    assert exc.value.max_achievable == pytest.approx(16 / 400)


def test_no_object_components():
    lulc = _lulc(np.zeros((8, 8), int))
    with pytest.raises(DegradationError, match="no connected component"):
        build_change_mask(lulc, DegradationSpec(target_fraction=0.2, seed=0))


def test_eight_connectivity_merges_diagonal():
    labels = np.zeros((10, 10), int)
    labels[2, 2] = 1
    labels[3, 3] = 1  # diagonal neighbor: one object under 8-connectivity
    res = build_change_mask(_lulc(labels), DegradationSpec(target_fraction=0.01, buffer_m=0.0, seed=0))
    assert res.selected_components == 1
    assert res.mask.true_count == 2


def test_selected_objects_fully_buffered():
    rng = np.random.default_rng(1)
    labels = np.zeros((60, 60), int)
    for _ in range(12):
        r, c = rng.integers(0, 54, 2)
        labels[r : r + 5, c : c + 5] = 1
    lulc = _lulc(labels)
    res = build_change_mask(lulc, DegradationSpec(target_fraction=0.25, buffer_m=3.0, seed=0))
    # every selected object pixel carries its full buffer
    grown = dilate_mask(res.selected_object_pixels, 3.0)
    assert (grown.bits <= res.mask.bits).all()
    assert (res.selected_object_pixels.bits <= (labels > 0)).all()


def test_apply_degradation_identity_and_saturation():
    meta = GridMeta(8, 8, 1.0)
    gt = HeightRaster(meta, np.arange(64, dtype=float).reshape(8, 8))
    none = BitMask(meta, np.zeros((8, 8), bool))
    out = apply_degradation(gt, none)
    assert np.array_equal(out.values, gt.values)
    assert out.nodata.true_count == 0
    full = BitMask(meta, np.ones((8, 8), bool))
    assert apply_degradation(gt, full).nodata.true_count == 64


def test_apply_degradation_union_with_preexisting_nodata():
    meta = GridMeta(10, 10, 1.0)
    rng = np.random.default_rng(7)
    pre = rng.random((10, 10)) < 0.05
    change = rng.random((10, 10)) < 0.25
    gt = HeightRaster(meta, np.where(pre, np.nan, rng.normal(size=(10, 10))), BitMask(meta, pre))
    out = apply_degradation(gt, BitMask(meta, change))
    # oracle: plain set union on the small grid
    assert out.nodata.true_count == int((pre | change).sum())
    assert np.array_equal(out.nodata.bits, pre | change)
    keep = ~(pre | change)
    assert np.array_equal(out.values[keep], gt.values[keep])


def test_apply_degradation_meta_mismatch():
    gt = HeightRaster(GridMeta(8, 8, 1.0), np.zeros((8, 8)))
    change = BitMask(GridMeta(8, 8, 2.0), np.zeros((8, 8), bool))
    with pytest.raises(Exception, match="GridMeta"):
        apply_degradation(gt, change)


def test_stored_mask_reapplies_identically(tmp_path):
    from heightcomplete import load_raster, save_raster

    rng = np.random.default_rng(9)
    labels = (rng.random((48, 48)) < 0.15).astype(int) * 2
    lulc = _lulc(labels)
    res = build_change_mask(lulc, DegradationSpec(target_fraction=0.2, buffer_m=2.0, seed=3))
    gt = HeightRaster(lulc.meta, rng.normal(5, 2, (48, 48)))
    save_raster(res.mask, tmp_path / "m.tif")
    reloaded = load_raster(tmp_path / "m.tif", "mask")
    a = apply_degradation(gt, res.mask)
    b = apply_degradation(gt, reloaded)
    assert np.array_equal(a.nodata.bits, b.nodata.bits)
    assert np.array_equal(a.values[a.valid], b.values[b.valid])
