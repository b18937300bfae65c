"""Test-time optimization of a spatially varying affine field.

Low-rank adapters are injected into the backbone's attention projections,
and a small MLP head maps dense ViT features to per-token (scale, shift)
pairs that convert relative depth into metric height. Both are optimized
at inference time against the valid pixels of an incomplete height prior;
no cross-scene training ever happens.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from .baselines import AffinePair, global_affine_fit
from .features import (
    BackboneHandle,
    DenseFeatureMap,
    rgb_to_tensor,
    strided_feature_grid,
    upsample_cells,
    upsample_cells_torch,
)
from .raster import BitMask, HeightRaster, RelativeDepthMap, RgbImage, _require_same_meta

_DTYPE = torch.float64

VALID_TARGETS = ("qkv", "out_proj")
MODES = ("full", "frozen_backbone", "direct_height")


class TtaError(RuntimeError):
    """Raised when test-time optimization cannot proceed or diverges."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# LoRA
# ---------------------------------------------------------------------------


class LoraLinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update.

    Computes W x + b + (alpha/rank) * B (A x). B starts at zero so the
    adapted forward initially equals the frozen forward bit-for-bit.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float, generator: torch.Generator):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.alpha = float(alpha)
        d_out, d_in = base.weight.shape
        a = torch.empty(rank, d_in, dtype=base.weight.dtype)
        a.normal_(0.0, 1.0 / math.sqrt(d_in), generator=generator)
        self.lora_a = nn.Parameter(a)
        self.lora_b = nn.Parameter(torch.zeros(d_out, rank, dtype=base.weight.dtype))

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta_weight(self) -> torch.Tensor:
        return self.scaling * self.lora_b @ self.lora_a

    def forward(self, x):
        return self.base(x) + self.scaling * ((x @ self.lora_a.T) @ self.lora_b.T)


def inject_lora(
    backbone: BackboneHandle,
    rank: int = 8,
    alpha: float = 16.0,
    targets=("qkv", "out_proj"),
    seed: int = 0,
) -> BackboneHandle:
    """Return a copy of the backbone with adapters on the chosen attention
    projections of every block; the original handle is left untouched."""
    if rank < 1:
        raise TtaError(f"rank must be >= 1, got {rank}")
    targets = tuple(targets)
    for t in targets:
        if t not in VALID_TARGETS:
            raise TtaError(f"unknown adaptation target {t!r}; expected one of {VALID_TARGETS}")
    adapted = replace(backbone, module=copy.deepcopy(backbone.module))
    for p in adapted.module.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(seed)
    for blk in range(adapted.layer_count):
        for t in targets:
            base = adapted.attention_projection(blk, t)
            adapted.set_attention_projection(blk, t, LoraLinear(base, rank, alpha, gen))
    return adapted


def adapter_parameters(backbone: BackboneHandle) -> list[nn.Parameter]:
    params = []
    for m in backbone.module.modules():
        if isinstance(m, LoraLinear):
            params.extend([m.lora_a, m.lora_b])
    return params


def adapter_state(backbone: BackboneHandle) -> dict[str, torch.Tensor]:
    return {
        n: p.detach().clone()
        for n, p in backbone.module.named_parameters()
    }


# ---------------------------------------------------------------------------
# Scale-shift head
# ---------------------------------------------------------------------------


class ScaleShiftHead(nn.Module):
    """Three-layer MLP mapping token features to residual (scale, shift).

    The final layer is zero-initialized and outputs are added to the global
    affine fit, so before any optimization the head reproduces that fit at
    every location.
    """

    def __init__(self, input_dim: int, hidden: int = 256, init_affine: AffinePair = AffinePair(1.0, 0.0), seed: int = 0):
        super().__init__()
        self.input_dim = input_dim
        self.init_affine = init_affine
        self.body = nn.Sequential(
            nn.Linear(input_dim, hidden),
            nn.LayerNorm(hidden),
            nn.GELU(),
            nn.Linear(hidden, hidden),
            nn.LayerNorm(hidden),
            nn.GELU(),
        )
        self.out = nn.Linear(hidden, 2)
        self.to(_DTYPE)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in self.body:
                if isinstance(m, nn.Linear):
                    m.weight.normal_(0.0, 1.0 / math.sqrt(m.weight.shape[1]), generator=gen)
                    m.bias.zero_()
            self.out.weight.zero_()
            self.out.bias.zero_()

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """Raw residual (scale, shift) per location; shape (..., 2)."""
        return self.out(self.body(features))

    def scale_shift(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw = self.forward(features)
        return raw[..., 0] + self.init_affine.scale, raw[..., 1] + self.init_affine.shift


@dataclass(frozen=True)
class AffineField:
    """Per-cell (scale, shift) grids at feature-stride resolution."""

    meta: object
    stride: int
    scale: np.ndarray = field(repr=False)
    shift: np.ndarray = field(repr=False)

    def pixel_fields(self) -> tuple[np.ndarray, np.ndarray]:
        both = np.stack([self.scale, self.shift], axis=-1)
        up = upsample_cells(both, self.meta.shape, self.stride, "bilinear")
        return up[..., 0], up[..., 1]


def predict_affine_field(features: DenseFeatureMap, head: ScaleShiftHead) -> AffineField:
    if features.dim != head.input_dim:
        raise TtaError(f"feature dim {features.dim} does not match head input dim {head.input_dim}")
    with torch.no_grad():
        s, b = head.scale_shift(torch.from_numpy(features.values))
    return AffineField(features.meta, features.stride, s.numpy(), b.numpy())


def compose_metric(rel: RelativeDepthMap, fld: AffineField) -> HeightRaster:
    """Per-pixel s * r + b with the field bilinearly upsampled to pixels."""
    if fld.meta.shape != rel.meta.shape:
        raise TtaError(f"field meta {fld.meta.shape} incompatible with relative map {rel.meta.shape}")
    s, b = fld.pixel_fields()
    return HeightRaster(
        rel.meta, s * rel.values + b, BitMask(rel.meta, np.zeros(rel.meta.shape, bool))
    )


# ---------------------------------------------------------------------------
# Optimization loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TtaConfig:
    steps: int = 100
    lr_head: float = 1e-3
    lr_lora: float = 1e-4
    loss: str = "l1"  # l1 | l2
    mode: str = "full"  # full | frozen_backbone | direct_height
    anchor_policy: str = "all_valid"  # all_valid | holdout
    holdout_fraction: float = 0.0
    feature_stride: int = 4
    hidden: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise TtaError(f"steps must be >= 0, got {self.steps}")
        if self.lr_head <= 0 or self.lr_lora <= 0:
            raise TtaError("learning rates must be positive")
        if self.loss not in ("l1", "l2"):
            raise TtaError(f"unknown loss {self.loss!r}")
        if self.mode not in MODES:
            raise TtaError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.anchor_policy not in ("all_valid", "holdout"):
            raise TtaError(f"unknown anchor policy {self.anchor_policy!r}")
        if self.anchor_policy == "holdout" and not (0.0 < self.holdout_fraction < 1.0):
            raise TtaError("holdout policy needs holdout_fraction in (0, 1)")


@dataclass(frozen=True)
class TtaResult:
    completed: HeightRaster
    loss_trace: list[float]
    init_fit: AffinePair
    holdout_mask: np.ndarray | None = None


def normalize_relative(rel: RelativeDepthMap) -> RelativeDepthMap:
    """Min-max normalize to [0, 1]; constant maps collapse to zeros."""
    lo, hi = float(rel.values.min()), float(rel.values.max())
    if hi - lo <= 0:
        return RelativeDepthMap(rel.meta, np.zeros_like(rel.values))
    return RelativeDepthMap(rel.meta, (rel.values - lo) / (hi - lo))


def _anchor_loss(pred, target, mask, kind):
    diff = pred[mask] - target[mask]
    return diff.abs().mean() if kind == "l1" else (diff**2).mean()


def tta_optimize(
    img: RgbImage,
    rel: RelativeDepthMap,
    prior: HeightRaster,
    cfg: TtaConfig,
    backbone: BackboneHandle,
    head: ScaleShiftHead | None = None,
) -> TtaResult:
    """Optimize adapters and head against valid prior pixels; return the
    completed raster (valid prior copied verbatim) and the loss trace.

    At ``steps=0`` the output on missing pixels equals the global affine
    baseline. In ``frozen_backbone`` mode only the head is optimized; in
    ``direct_height`` mode the head predicts heights directly and the
    relative map is ignored.
    """
    _require_same_meta(img, rel, prior)
    valid = prior.valid
    if valid.sum() < 2:
        raise TtaError(f"need >= 2 valid anchor pixels, got {int(valid.sum())}")

    rel_n = normalize_relative(rel)
    init_fit = global_affine_fit(rel_n, prior)
    init_mean = float(prior.valid_values.mean())
    if head is None:
        head = ScaleShiftHead(backbone.embed_dim, cfg.hidden, init_fit, seed=cfg.seed)
    elif head.input_dim != backbone.embed_dim:
        raise TtaError(f"head input dim {head.input_dim} does not match backbone dim {backbone.embed_dim}")

    anchors = valid.copy()
    holdout = None
    if cfg.anchor_policy == "holdout":
        rng = np.random.default_rng(cfg.seed)
        vidx = np.flatnonzero(valid.ravel())
        held = rng.choice(vidx, size=max(1, int(round(cfg.holdout_fraction * vidx.size))), replace=False)
        holdout = np.zeros(valid.shape, bool)
        holdout.ravel()[held] = True
        anchors &= ~holdout
        if anchors.sum() < 2:
            raise TtaError("holdout leaves fewer than 2 anchor pixels")

    img_t = rgb_to_tensor(img)
    rel_t = torch.from_numpy(rel_n.values.copy())
    prior_t = torch.from_numpy(np.nan_to_num(prior.values))
    anchors_t = torch.from_numpy(anchors)
    shape = prior.meta.shape

    lora_params = adapter_parameters(backbone) if cfg.mode == "full" else []
    groups = [{"params": list(head.parameters()), "lr": cfg.lr_head}]
    if lora_params:
        groups.append({"params": lora_params, "lr": cfg.lr_lora})
    opt = torch.optim.Adam(groups)

    frozen_features = None
    if cfg.mode != "full":
        with torch.no_grad():
            frozen_features = strided_feature_grid(img_t, backbone, cfg.feature_stride)

    def compose() -> torch.Tensor:
        feats = (
            strided_feature_grid(img_t, backbone, cfg.feature_stride)
            if cfg.mode == "full"
            else frozen_features
        )
        if cfg.mode == "direct_height":
            cells = head(feats)[..., 0] + init_mean
            return upsample_cells_torch(cells[..., None], shape)[..., 0]
        raw = head(feats)
        cells = torch.stack([raw[..., 0] + init_fit.scale, raw[..., 1] + init_fit.shift], dim=-1)
        field = upsample_cells_torch(cells, shape)
        return field[..., 0] * rel_t + field[..., 1]

    trace: list[float] = []
    for step in range(cfg.steps):
        opt.zero_grad()
        loss = _anchor_loss(compose(), prior_t, anchors_t, cfg.loss)
        val = loss.detach().item()
        if not np.isfinite(val):
            raise TtaError(f"optimization diverged (non-finite loss) at step {step}", step=step)
        trace.append(val)
        loss.backward()
        opt.step()

    with torch.no_grad():
        final = compose()
        trace.append(float(_anchor_loss(final, prior_t, anchors_t, cfg.loss)))

    merged = final.numpy().copy()
    merged[valid] = prior.values[valid]
    completed = HeightRaster(prior.meta, merged, BitMask(prior.meta, np.zeros(shape, bool)))
    return TtaResult(completed=completed, loss_trace=trace, init_fit=init_fit, holdout_mask=holdout)
