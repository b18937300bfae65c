import numpy as np
import pytest
import torch

from heightcomplete import (
    AffineField,
    AffinePair,
    BitMask,
    GridMeta,
    HeightRaster,
    LoraLinear,
    RelativeDepthMap,
    RgbImage,
    ScaleShiftHead,
    TtaConfig,
    TtaError,
    apply_affine,
    compose_metric,
    global_affine_fit,
    inject_lora,
    predict_affine_field,
    rgb_to_tensor,
    strided_dense_extract,
    tta_optimize,
)
from heightcomplete.tta import adapter_parameters, normalize_relative


def _problem(size=16, seed=0, missing=0.4, noise=0.0):
    rng = np.random.default_rng(seed)
    meta = GridMeta(size, size, 1.0)
    img = RgbImage(meta, rng.uniform(0, 1, (size, size, 3)))
    gt = rng.uniform(0, 20, (size, size))
    rel = RelativeDepthMap(meta, gt / 25.0 + 0.1 + noise * rng.normal(size=(size, size)))
    nod = rng.random((size, size)) < missing
    prior = HeightRaster(meta, np.where(nod, np.nan, gt), BitMask(meta, nod))
    return img, rel, prior, nod


# --- low-rank adapters ------------------------------------------------------


def test_lora_default_scaling_is_two(backbone8):
    adapted = inject_lora(backbone8)
    loras = [m for m in adapted.module.modules() if isinstance(m, LoraLinear)]
    assert loras, "no adapters injected"
    for m in loras:
        assert m.rank == 8
        assert m.alpha == 16.0
        assert m.scaling == 2.0


def test_lora_parameter_count(backbone8):
    r = 4
    adapted = inject_lora(backbone8, rank=r)
    D = backbone8.embed_dim
    for m in adapted.module.modules():
        if isinstance(m, LoraLinear):
            d_out, d_in = m.base.weight.shape
            assert m.lora_a.numel() + m.lora_b.numel() == r * (d_in + d_out)
    # qkv + out_proj per block, two tensors each
    assert len(adapter_parameters(adapted)) == backbone8.layer_count * 2 * 2
    # only the adapters are trainable
    trainable = [p for p in adapted.module.parameters() if p.requires_grad]
    assert len(trainable) == len(adapter_parameters(adapted))
    assert sum(p.numel() for p in trainable) == backbone8.layer_count * (r * (D + 3 * D) + r * (D + D))


def test_lora_zero_init_forward_identity(backbone8):
    img = rgb_to_tensor(
        RgbImage(GridMeta(16, 16, 1.0), np.random.default_rng(2).uniform(0, 1, (16, 16, 3)))
    )
    adapted = inject_lora(backbone8, seed=5)
    base = backbone8.forward_tokens(img)
    out = adapted.forward_tokens(img)
    # B zero-initialized: bit-identical to the frozen forward
    assert torch.equal(base, out)
    for m in adapted.module.modules():
        if isinstance(m, LoraLinear):
            assert torch.count_nonzero(m.delta_weight()) == 0
            assert torch.count_nonzero(m.lora_a) > 0  # A is random, not zero


def test_lora_perturbation_changes_forward(backbone8):
    img = rgb_to_tensor(
        RgbImage(GridMeta(16, 16, 1.0), np.random.default_rng(2).uniform(0, 1, (16, 16, 3)))
    )
    adapted = inject_lora(backbone8)
    with torch.no_grad():
        for m in adapted.module.modules():
            if isinstance(m, LoraLinear):
                m.lora_b.fill_(0.01)
    assert not torch.equal(backbone8.forward_tokens(img), adapted.forward_tokens(img))


def test_inject_lora_leaves_original_untouched(backbone8):
    inject_lora(backbone8)
    assert not any(isinstance(m, LoraLinear) for m in backbone8.module.modules())


def test_inject_lora_validation(backbone8):
    with pytest.raises(TtaError, match="target"):
        inject_lora(backbone8, targets=("mlp",))
    with pytest.raises(TtaError, match="rank"):
        inject_lora(backbone8, rank=0)


# --- head and affine field --------------------------------------------------


def test_head_zero_init_reproduces_global_fit():
    head = ScaleShiftHead(16, hidden=32, init_affine=AffinePair(2.5, -1.0), seed=0)
    feats = torch.randn(5, 7, 16, dtype=torch.float64)
    s, b = head.scale_shift(feats)
    assert torch.equal(s, torch.full((5, 7), 2.5, dtype=torch.float64))
    assert torch.equal(b, torch.full((5, 7), -1.0, dtype=torch.float64))


def test_predict_field_dim_mismatch(backbone8, meta16):
    img = RgbImage(meta16, np.random.default_rng(0).uniform(0, 1, (16, 16, 3)))
    feats = strided_dense_extract(img, backbone8, 4)
    with pytest.raises(TtaError, match="dim"):
        predict_affine_field(feats, ScaleShiftHead(feats.dim + 1, hidden=16))


def test_compose_constant_field(meta16):
    rel = RelativeDepthMap(meta16, np.random.default_rng(1).uniform(0, 1, (16, 16)))
    fld = AffineField(meta16, 4, np.full((4, 4), 2.0), np.full((4, 4), 1.0))
    out = compose_metric(rel, fld)
    assert np.abs(out.values - (2.0 * rel.values + 1.0)).max() <= 1e-12
    assert out.nodata.true_count == 0


def test_pixel_fields_constant(meta16):
    fld = AffineField(meta16, 4, np.full((4, 4), 3.0), np.full((4, 4), -2.0))
    s, b = fld.pixel_fields()
    assert s.shape == (16, 16) and np.abs(s - 3.0).max() <= 1e-12
    assert np.abs(b - (-2.0)).max() <= 1e-12


def test_normalize_relative():
    meta = GridMeta(4, 4, 1.0)
    rel = RelativeDepthMap(meta, np.linspace(-3, 5, 16).reshape(4, 4))
    n = normalize_relative(rel)
    assert n.values.min() == 0.0 and n.values.max() == 1.0
    const = normalize_relative(RelativeDepthMap(meta, np.full((4, 4), 7.0)))
    assert (const.values == 0.0).all()


# --- optimization loop ------------------------------------------------------


def test_steps_zero_matches_global_baseline(backbone8):
    img, rel, prior, nod = _problem()
    cfg = TtaConfig(steps=0, feature_stride=4, hidden=32)
    res = tta_optimize(img, rel, prior, cfg, inject_lora(backbone8))
    rel_n = normalize_relative(rel)
    ref = apply_affine(rel_n, global_affine_fit(rel_n, prior))
    assert np.abs(res.completed.values[nod] - ref.values[nod]).max() <= 1e-10
    # valid prior pixels are copied verbatim
    assert np.array_equal(res.completed.values[~nod], prior.values[~nod])
    assert len(res.loss_trace) == 1


def test_loss_trace_length_and_decrease(backbone8):
    img, rel, prior, _ = _problem(seed=3, noise=0.05)
    cfg = TtaConfig(steps=25, lr_head=1e-2, lr_lora=1e-3, feature_stride=4, hidden=32)
    res = tta_optimize(img, rel, prior, cfg, inject_lora(backbone8))
    assert len(res.loss_trace) == 26
    assert res.loss_trace[-1] < res.loss_trace[0]
    assert all(np.isfinite(res.loss_trace))


def test_frozen_backbone_mode_keeps_adapters_fixed(backbone8):
    img, rel, prior, _ = _problem(seed=4)
    adapted = inject_lora(backbone8)
    before = [p.detach().clone() for p in adapter_parameters(adapted)]
    cfg = TtaConfig(steps=5, mode="frozen_backbone", feature_stride=4, hidden=32)
    tta_optimize(img, rel, prior, cfg, adapted)
    after = adapter_parameters(adapted)
    for b, a in zip(before, after):
        assert torch.equal(b, a)


def test_full_mode_moves_adapters(backbone8):
    img, rel, prior, _ = _problem(seed=5)
    adapted = inject_lora(backbone8)
    cfg = TtaConfig(steps=5, lr_lora=1e-2, feature_stride=4, hidden=32)
    tta_optimize(img, rel, prior, cfg, adapted)
    assert any(torch.count_nonzero(m.lora_b) for m in adapted.module.modules() if isinstance(m, LoraLinear))
    assert not any(
        p.requires_grad for n, p in adapted.module.named_parameters() if "lora" not in n
    )


def test_direct_height_steps_zero_predicts_anchor_mean(backbone8):
    img, rel, prior, nod = _problem(seed=6)
    cfg = TtaConfig(steps=0, mode="direct_height", feature_stride=4, hidden=32)
    res = tta_optimize(img, rel, prior, cfg, inject_lora(backbone8))
    mean = prior.valid_values.mean()
    assert np.abs(res.completed.values[nod] - mean).max() <= 1e-10


def test_holdout_policy(backbone8):
    img, rel, prior, nod = _problem(seed=7)
    cfg = TtaConfig(steps=1, anchor_policy="holdout", holdout_fraction=0.25, feature_stride=4, hidden=32)
    res = tta_optimize(img, rel, prior, cfg, inject_lora(backbone8))
    assert res.holdout_mask is not None
    n_valid = int((~nod).sum())
    assert res.holdout_mask.sum() == round(0.25 * n_valid)
    # holdout is carved out of valid prior pixels only
    assert not (res.holdout_mask & nod).any()


def test_divergence_raises_with_step(backbone8):
    img, rel, prior, _ = _problem(seed=8)
    cfg = TtaConfig(steps=5, lr_head=1e200, loss="l2", feature_stride=4, hidden=32)
    with pytest.raises(TtaError) as exc:
        tta_optimize(img, rel, prior, cfg, inject_lora(backbone8))
    assert exc.value.step is not None


def test_too_few_anchor_pixels(backbone8):
    img, rel, prior, _ = _problem()
    meta = prior.meta
    nod = np.ones(meta.shape, bool)
    nod[0, 0] = False
    sparse = HeightRaster(meta, np.where(nod, np.nan, 1.0), BitMask(meta, nod))
    with pytest.raises(TtaError, match="anchor"):
        tta_optimize(img, rel, sparse, TtaConfig(steps=0), inject_lora(backbone8))


def test_config_validation():
    with pytest.raises(TtaError):
        TtaConfig(steps=-1)
    with pytest.raises(TtaError):
        TtaConfig(lr_head=0.0)
    with pytest.raises(TtaError):
        TtaConfig(loss="huber")
    with pytest.raises(TtaError):
        TtaConfig(mode="finetune")
    with pytest.raises(TtaError):
        TtaConfig(anchor_policy="holdout", holdout_fraction=0.0)


def test_determinism_same_seed(backbone8):
    img, rel, prior, _ = _problem(seed=10)
    cfg = TtaConfig(steps=10, lr_head=1e-2, lr_lora=1e-3, feature_stride=4, hidden=32, seed=3)
    a = tta_optimize(img, rel, prior, cfg, inject_lora(backbone8, seed=3))
    b = tta_optimize(img, rel, prior, cfg, inject_lora(backbone8, seed=3))
    assert np.array_equal(a.completed.values, b.completed.values)
    assert a.loss_trace == b.loss_trace
