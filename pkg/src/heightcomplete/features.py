"""Dense ViT feature extraction by strided overlap accumulation.

A pluggable backbone runs on sub-patch-shifted copies of the image; each
pixel's feature is the mean of all patch tokens covering it, raising the
semantic sampling density by (P/stride)^2. A deterministic toy backbone
stands in for production weights in tests and demos.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .raster import GridMeta, RgbImage

_DTYPE = torch.float64


class FeatureError(ValueError):
    """Raised for invalid feature-extraction inputs."""


# ---------------------------------------------------------------------------
# Backbone
# ---------------------------------------------------------------------------


class _Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, L, D = x.shape
        qkv = self.qkv(x).reshape(B, L, 3, self.heads, D // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(D // self.heads), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, L, D)
        return self.proj(out)


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class _ToyViT(nn.Module):
    """Minimal ViT over square patches; accepts any size divisible by P."""

    def __init__(self, patch_size: int, dim: int, layers: int, heads: int, positional: bool):
        super().__init__()
        self.patch_size = patch_size
        self.dim = dim
        self.positional = positional
        self.embed = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)
        self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)

    def _pos_embed(self, gh: int, gw: int, device):
        # sinusoidal 2-D embedding, recomputed per grid size (deterministic)
        d4 = self.dim // 4
        freq = torch.exp(-math.log(1e4) * torch.arange(d4, dtype=_DTYPE, device=device) / max(d4, 1))
        ys = torch.arange(gh, dtype=_DTYPE, device=device)[:, None] * freq
        xs = torch.arange(gw, dtype=_DTYPE, device=device)[:, None] * freq
        py = torch.cat([ys.sin(), ys.cos()], dim=1)  # (gh, dim/2)
        px = torch.cat([xs.sin(), xs.cos()], dim=1)  # (gw, dim/2)
        pos = torch.cat(
            [py[:, None, :].expand(gh, gw, -1), px[None, :, :].expand(gh, gw, -1)], dim=2
        )
        if pos.shape[2] < self.dim:
            pos = F.pad(pos, (0, self.dim - pos.shape[2]))
        return pos

    def forward(self, img):
        # img: (3, H, W) -> token grid (H/P, W/P, dim)
        x = self.embed(img[None])  # (1, dim, gh, gw)
        _, _, gh, gw = x.shape
        x = x.flatten(2).transpose(1, 2)  # (1, L, dim)
        if self.positional:
            x = x + self._pos_embed(gh, gw, x.device).reshape(1, gh * gw, self.dim)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return x.reshape(gh, gw, self.dim)


@dataclass
class BackboneHandle:
    """Uniform access to a ViT backbone for extraction and adaptation.

    ``module`` maps a (3, H, W) tensor (H, W multiples of ``patch_size``)
    to a (H/P, W/P, embed_dim) token grid. Attention projections are
    reachable per block under the names ``qkv`` and ``out_proj`` for
    adapter injection.
    """

    module: nn.Module
    patch_size: int
    embed_dim: int
    layer_count: int
    name: str = "toy"

    def forward_tokens(self, img: torch.Tensor) -> torch.Tensor:
        h, w = img.shape[-2:]
        if h % self.patch_size or w % self.patch_size:
            raise FeatureError(f"window {h}x{w} not divisible by patch size {self.patch_size}")
        return self.module(img)

    def attention_projection(self, block_index: int, target: str) -> nn.Module:
        attn = self.module.blocks[block_index].attn
        if target == "qkv":
            return attn.qkv
        if target == "out_proj":
            return attn.proj
        raise FeatureError(f"unknown attention projection target {target!r}")

    def set_attention_projection(self, block_index: int, target: str, module: nn.Module):
        attn = self.module.blocks[block_index].attn
        if target == "qkv":
            attn.qkv = module
        elif target == "out_proj":
            attn.proj = module
        else:
            raise FeatureError(f"unknown attention projection target {target!r}")


def make_toy_backbone(
    seed: int, patch_size: int = 16, embed_dim: int = 32, layers: int = 2, positional: bool = False, heads: int = 4
) -> BackboneHandle:
    """Small seeded transformer exposing the same adaptation surface as a
    production backbone; identical seeds give bit-identical outputs."""
    if patch_size not in (8, 16):
        raise FeatureError(f"patch_size must be 8 or 16, got {patch_size}")
    if embed_dim < 8:
        raise FeatureError(f"embed_dim must be >= 8, got {embed_dim}")
    if layers < 1:
        raise FeatureError(f"layers must be >= 1, got {layers}")
    model = _ToyViT(patch_size, embed_dim, layers, heads, positional).to(_DTYPE)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.ndim > 1:
                p.normal_(0.0, 1.0 / math.sqrt(p.shape[-1]), generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            else:
                # LayerNorm gains stay at one
                p.fill_(1.0)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return BackboneHandle(model, patch_size, embed_dim, layers, name=f"toy(seed={seed})")


def load_backbone(name: str, weights_path=None, **kwargs) -> BackboneHandle:
    """Resolve a backbone by name.

    Production satellite ViT weights are loaded from external files; when
    they are absent this degrades to the toy backbone with a prominent
    warning so pipelines stay runnable.
    """
    if name == "toy":
        return make_toy_backbone(**kwargs)
    if weights_path is None:
        warnings.warn(
            f"backbone {name!r} requested but no weights file configured; "
            "falling back to the deterministic toy backbone",
            stacklevel=2,
        )
        return make_toy_backbone(**kwargs)
    raise FeatureError(
        f"no adapter for backbone {name!r}; provide weights via a BackboneHandle plugin"
    )


# ---------------------------------------------------------------------------
# Strided overlap accumulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseFeatureMap:
    """Per-location embeddings at stride resolution with pixel upsampling.

    ``values`` has shape (H/stride, W/stride, dim); ``view_count`` records
    how many overlapping patch tokens were averaged per cell.
    """

    meta: GridMeta
    stride: int
    values: np.ndarray = field(repr=False)
    view_count: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise FeatureError(f"feature values must be 3-D, got shape {values.shape}")
        gh, gw = self.meta.height // self.stride, self.meta.width // self.stride
        if values.shape[:2] != (gh, gw):
            raise FeatureError(f"feature grid {values.shape[:2]} does not match {(gh, gw)}")
        if not np.isfinite(values).all():
            raise FeatureError("non-finite feature values")
        vc = self.view_count
        if vc is None:
            vc = np.ones((gh, gw), dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "view_count", np.ascontiguousarray(vc, dtype=np.int64))

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def pixel_features(self, method: str = "bilinear") -> np.ndarray:
        """Upsample the stride-resolution grid to (H, W, dim)."""
        return upsample_cells(self.values, self.meta.shape, self.stride, method)


def upsample_cells(cells: np.ndarray, shape: tuple[int, int], stride: int, method: str = "bilinear") -> np.ndarray:
    """Upsample a (gh, gw, C) cell grid to pixel resolution (H, W, C)."""
    if stride == 1 and cells.shape[:2] == shape:
        return cells
    if method == "nearest":
        return np.repeat(np.repeat(cells, stride, axis=0), stride, axis=1)[: shape[0], : shape[1]]
    if method != "bilinear":
        raise FeatureError(f"unknown upsampling method {method!r}")
    t = torch.from_numpy(np.ascontiguousarray(cells, dtype=np.float64)).permute(2, 0, 1)[None]
    up = F.interpolate(t, size=shape, mode="bilinear", align_corners=False)
    return up[0].permute(1, 2, 0).numpy()


def upsample_cells_torch(cells: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Differentiable bilinear upsampling of a (gh, gw, C) grid to (H, W, C)."""
    t = cells.permute(2, 0, 1)[None]
    up = F.interpolate(t, size=shape, mode="bilinear", align_corners=False)
    return up[0].permute(1, 2, 0)


def _offsets(patch: int, stride: int) -> list[tuple[int, int]]:
    return [(dy, dx) for dy in range(0, patch, stride) for dx in range(0, patch, stride)]


def strided_feature_grid(img: torch.Tensor, backbone: BackboneHandle, stride: int) -> torch.Tensor:
    """Accumulated features at stride resolution; differentiable.

    For each shift offset the reflectively padded image is re-tokenized so
    that patches start at that offset; tokens are scattered to the stride
    cells they cover and averaged over all offsets.
    """
    P = backbone.patch_size
    if stride < 1 or stride > P or P % stride:
        raise FeatureError(f"stride {stride} must divide patch size {P}")
    _, H, W = img.shape
    if H < P or W < P:
        raise FeatureError(f"image {H}x{W} smaller than backbone window {P}x{P}")
    if H % stride or W % stride:
        raise FeatureError(f"image {H}x{W} not divisible by stride {stride}")
    gh, gw = H // stride, W // stride
    rep = P // stride
    acc = None
    offsets = _offsets(P, stride)
    for dy, dx in offsets:
        pad_b = (-(H + dy)) % P
        pad_r = (-(W + dx)) % P
        view = F.pad(img[None], (dx, pad_r, dy, pad_b), mode="reflect")[0]
        tokens = backbone.forward_tokens(view)  # (th, tw, D)
        cells = tokens.repeat_interleave(rep, dim=0).repeat_interleave(rep, dim=1)
        crop = cells[dy // stride : dy // stride + gh, dx // stride : dx // stride + gw]
        acc = crop if acc is None else acc + crop
    return acc / len(offsets)


def rgb_to_tensor(img: RgbImage) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.channels.transpose(2, 0, 1), dtype=np.float64))


def strided_dense_extract(img: RgbImage, backbone: BackboneHandle, stride: int) -> DenseFeatureMap:
    """Dense semantic features for an RGB tile via strided overlap
    accumulation; each cell's feature averages (P/stride)^2 covering tokens."""
    with torch.no_grad():
        grid = strided_feature_grid(rgb_to_tensor(img), backbone, stride)
    n_views = (backbone.patch_size // stride) ** 2
    gh, gw = img.meta.height // stride, img.meta.width // stride
    counts = np.full((gh, gw), n_views, dtype=np.int64)
    return DenseFeatureMap(img.meta, stride, grid.numpy(), counts)
