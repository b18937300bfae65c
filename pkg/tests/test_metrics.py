import numpy as np
import pytest

from heightcomplete import (
    BitMask,
    GridMeta,
    HeightRaster,
    MetricError,
    MetricsReport,
    evaluate_completed,
    mae,
    rmse,
    ssim,
)


def _raster(vals, nodata=None):
    arr = np.asarray(vals, float)
    meta = GridMeta(arr.shape[1], arr.shape[0], 1.0)
    nod = np.zeros(arr.shape, bool) if nodata is None else np.asarray(nodata)
    return HeightRaster(meta, np.where(nod, np.nan, arr), BitMask(meta, nod))


def _full(meta):
    return BitMask(meta, np.ones(meta.shape, bool))


# --- MAE / RMSE -------------------------------------------------------------


def test_hand_computed_sums():
    # errors [1, -3]: MAE = 2, RMSE = sqrt(5)
    gt = _raster([[0.0, 0.0]])
    pred = _raster([[1.0, -3.0]])
    region = _full(gt.meta)
    assert mae(pred, gt, region) == pytest.approx(2.0)
    assert rmse(pred, gt, region) == pytest.approx(np.sqrt(5.0))


def test_perfect_prediction_zero_error():
    rng = np.random.default_rng(0)
    gt = _raster(rng.normal(size=(8, 8)))
    assert mae(gt, gt, _full(gt.meta)) == 0.0
    assert rmse(gt, gt, _full(gt.meta)) == 0.0


def test_rmse_dominates_mae_randomized():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = rng.integers(2, 20)
        gt = _raster(rng.normal(size=(1, n)))
        pred = _raster(rng.normal(size=(1, n)) * rng.uniform(0.1, 10))
        region = _full(gt.meta)
        assert rmse(pred, gt, region) >= mae(pred, gt, region) - 1e-12


def test_region_restriction():
    gt = _raster([[0.0, 0.0, 0.0]])
    pred = _raster([[1.0, 100.0, 3.0]])
    bits = np.array([[True, False, True]])
    region = BitMask(gt.meta, bits)
    assert mae(pred, gt, region) == pytest.approx(2.0)  # the 100 is outside


def test_invalid_pixels_excluded():
    gt = _raster([[0.0, 0.0]], nodata=[[False, True]])
    pred = _raster([[1.0, 50.0]])
    assert mae(pred, gt, _full(gt.meta)) == pytest.approx(1.0)


def test_empty_region_errors():
    gt = _raster([[0.0, 0.0]])
    with pytest.raises(MetricError, match="empty"):
        mae(gt, gt, BitMask(gt.meta, np.zeros((1, 2), bool)))


def test_report_invariant_enforced():
    with pytest.raises(MetricError):
        MetricsReport(mae_m=3.0, rmse_m=1.0, ssim=1.0, n_pixels=4, region="completed")
    with pytest.raises(MetricError):
        MetricsReport(mae_m=1.0, rmse_m=2.0, ssim=1.0, n_pixels=0, region="completed")


# --- SSIM -------------------------------------------------------------------


def test_ssim_self_is_one():
    rng = np.random.default_rng(2)
    gt = _raster(rng.uniform(0, 30, (32, 32)))
    assert ssim(gt, gt, 30.0) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetry():
    rng = np.random.default_rng(3)
    a = _raster(rng.uniform(0, 10, (24, 24)))
    b = _raster(rng.uniform(0, 10, (24, 24)))
    assert ssim(a, b, 10.0) == pytest.approx(ssim(b, a, 10.0), abs=1e-12)


def test_ssim_inversion_is_low():
    rng = np.random.default_rng(4)
    vals = rng.uniform(0, 10, (32, 32))
    a = _raster(vals)
    inv = _raster(10.0 - vals)
    assert ssim(a, inv, 10.0) < 0.2


def test_ssim_matches_bruteforce_windowed_oracle():
    # independent oracle: explicit per-window Gaussian-weighted moments
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (16, 16))
    y = x + rng.normal(0, 0.1, (16, 16))
    L = 1.0
    r = np.arange(11) - 5.0
    k1 = np.exp(-(r**2) / (2 * 1.5**2))
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(16 - 10):
        for j in range(16 - 10):
            wx = x[i : i + 11, j : j + 11]
            wy = y[i : i + 11, j : j + 11]
            mx, my = (k2 * wx).sum(), (k2 * wy).sum()
            vx = (k2 * wx * wx).sum() - mx**2
            vy = (k2 * wy * wy).sum() - my**2
            cxy = (k2 * wx * wy).sum() - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx**2 + my**2 + c1) * (vx + vy + c2))
            )
    expected = float(np.mean(vals))
    got = ssim(_raster(x), _raster(y), L)
    assert got == pytest.approx(expected, abs=1e-6)


def test_ssim_checkerboard_worse_than_shift():
    # a constant offset preserves structure; a checkerboard destroys it
    rng = np.random.default_rng(6)
    vals = rng.uniform(0, 10, (32, 32))
    gt = _raster(vals)
    shifted = _raster(vals + 1.0)
    checker = _raster(vals + 3.0 * ((np.indices((32, 32)).sum(axis=0)) % 2))
    assert ssim(checker, gt, 10.0) < ssim(shifted, gt, 10.0)


def test_ssim_validation():
    gt = _raster(np.zeros((8, 8)))
    with pytest.raises(MetricError, match="window"):
        ssim(gt, gt, 1.0)
    big = _raster(np.zeros((16, 16)))
    with pytest.raises(MetricError, match="data_range"):
        ssim(big, big, 0.0)


# --- evaluate_completed -----------------------------------------------------


def test_evaluate_completed_report():
    rng = np.random.default_rng(7)
    vals = rng.uniform(0, 20, (24, 24))
    gt = _raster(vals)
    change = np.zeros((24, 24), bool)
    change[5:12, 5:12] = True
    pred_vals = vals.copy()
    pred_vals[change] += 2.0  # constant 2 m error in the region
    rep = evaluate_completed(_raster(pred_vals), gt, BitMask(gt.meta, change))
    assert rep.mae_m == pytest.approx(2.0)
    assert rep.rmse_m == pytest.approx(2.0)
    assert rep.n_pixels == 49
    assert rep.region == "completed"
    assert rep.data_range == pytest.approx(vals.max() - vals.min())
    assert 0 < rep.ssim < 1


def test_evaluate_completed_ignores_errors_outside_change():
    rng = np.random.default_rng(8)
    vals = rng.uniform(0, 20, (24, 24))
    gt = _raster(vals)
    change = np.zeros((24, 24), bool)
    change[2:6, 2:6] = True
    pred_vals = vals + 100.0  # wild everywhere
    pred_vals[change] = vals[change] + 1.0
    rep = evaluate_completed(_raster(pred_vals), gt, BitMask(gt.meta, change))
    # errors outside the region neither enter MAE/RMSE nor SSIM
    assert rep.mae_m == pytest.approx(1.0)
    ref = evaluate_completed(_raster(np.where(change, vals + 1.0, vals)), gt, BitMask(gt.meta, change))
    assert rep.ssim == pytest.approx(ref.ssim, abs=1e-12)


def test_evaluate_completed_perfect():
    rng = np.random.default_rng(9)
    vals = rng.uniform(0, 20, (16, 16))
    gt = _raster(vals)
    change = np.zeros((16, 16), bool)
    change[4:8, 4:8] = True
    rep = evaluate_completed(_raster(vals), gt, BitMask(gt.meta, change))
    assert rep.mae_m == 0.0 and rep.rmse_m == 0.0
    assert rep.ssim == pytest.approx(1.0, abs=1e-12)


def test_evaluate_completed_empty_change():
    gt = _raster(np.zeros((16, 16)))
    with pytest.raises(MetricError, match="change"):
        evaluate_completed(gt, gt, BitMask(gt.meta, np.zeros((16, 16), bool)))
