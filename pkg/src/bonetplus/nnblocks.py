"""Neural building blocks: conv stem, transformer stage, RFA convolution.

All modules are plain ``nn.Module`` subclasses; normalization layers run in
batch mode during training and on running statistics in eval mode, which
keeps every forward a pure function of (params, input) for gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from bonetplus.errors import ConfigError


@dataclass
class ConvStemConfig:
    """Five 3x3 conv layers with 2x2 max pools after layers 2 and 4."""

    channel_widths: tuple[int, ...] = (32, 32, 64, 64, 128)
    kernel_size: int = 3

    POOL_AFTER = (1, 3)  # layer indices followed by a stride-2 pool

    def __post_init__(self) -> None:
        self.channel_widths = tuple(int(w) for w in self.channel_widths)
        if len(self.channel_widths) != 5:
            raise ConfigError(f"stem needs exactly 5 channel widths, got {self.channel_widths}")
        if any(w <= 0 for w in self.channel_widths):
            raise ConfigError(f"stem widths must be positive: {self.channel_widths}")
        if self.kernel_size % 2 != 1:
            raise ConfigError(f"stem kernel size must be odd, got {self.kernel_size}")

    @property
    def out_channels(self) -> int:
        return self.channel_widths[-1]

    def out_size(self, in_size: int) -> int:
        size = in_size
        for i in range(5):
            if i in self.POOL_AFTER:
                size //= 2
        return size


class ConvStem(nn.Module):
    """Preliminary feature extractor shared (in shape, not weights) by both channels."""

    def __init__(self, in_channels: int, cfg: ConvStemConfig):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        layers: list[nn.Module] = []
        prev = in_channels
        for i, width in enumerate(cfg.channel_widths):
            layers += [
                nn.Conv2d(prev, width, cfg.kernel_size, padding=cfg.kernel_size // 2),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
            if i in cfg.POOL_AFTER:
                layers.append(nn.MaxPool2d(2, 2))
            prev = width
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigError(
                f"stem expects (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        return self.net(x)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two dims; supports batching."""
    if q.shape[-1] != k.shape[-1]:
        raise ConfigError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if q.shape[-1] <= 0:
        raise ConfigError("key dimension must be positive")
    if q.shape[-2] != k.shape[-2] or k.shape[-2] != v.shape[-2]:
        raise ConfigError(
            f"row counts differ: q {q.shape[-2]}, k {k.shape[-2]}, v {v.shape[-2]}"
        )
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


@dataclass
class TransformerBlockConfig:
    """Shape of the global-channel transformer stage."""

    embed_dim: int | None = None  # None: inherit the stem's output width
    num_heads: int = 4
    mlp_hidden: int | None = None  # None: 4 * embed_dim
    num_blocks: int = 1
    token_cap: int = 1024  # max token count before extra stride-4 pooling

    def resolve(self, stem_channels: int) -> "TransformerBlockConfig":
        d = self.embed_dim if self.embed_dim is not None else stem_channels
        if d != stem_channels:
            raise ConfigError(
                f"transformer embed_dim {d} must match stem output channels {stem_channels}"
            )
        if self.num_heads <= 0 or d % self.num_heads != 0:
            raise ConfigError(f"embed_dim {d} not divisible by num_heads {self.num_heads}")
        mlp = self.mlp_hidden if self.mlp_hidden is not None else 4 * d
        return TransformerBlockConfig(d, self.num_heads, mlp, self.num_blocks, self.token_cap)


class MultiHeadSelfAttention(nn.Module):
    """Per-head projections, scaled dot-product attention, concat, output projection."""

    def __init__(self, embed_dim: int, num_heads: int):
        super().__init__()
        if embed_dim % num_heads != 0:
            raise ConfigError(f"embed_dim {embed_dim} not divisible by num_heads {num_heads}")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.q_proj = nn.Linear(embed_dim, embed_dim, bias=False)
        self.k_proj = nn.Linear(embed_dim, embed_dim, bias=False)
        self.v_proj = nn.Linear(embed_dim, embed_dim, bias=False)
        self.out_proj = nn.Linear(embed_dim, embed_dim, bias=False)

    def _split(self, x: Tensor) -> Tensor:
        # (..., n, d) -> (..., h, n, d_k)
        *lead, n, _ = x.shape
        return x.view(*lead, n, self.num_heads, self.head_dim).transpose(-3, -2)

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self.embed_dim:
            raise ConfigError(f"expected token dim {self.embed_dim}, got {tokens.shape[-1]}")
        q = self._split(self.q_proj(tokens))
        k = self._split(self.k_proj(tokens))
        v = self._split(self.v_proj(tokens))
        heads = scaled_dot_product_attention(q, k, v)
        *lead, _, n, _ = heads.shape
        merged = heads.transpose(-3, -2).reshape(*lead, n, self.embed_dim)
        return self.out_proj(merged)


class FeedForward(nn.Module):
    """Position-wise max(0, x W1 + b1) W2 + b2."""

    def __init__(self, embed_dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(embed_dim, hidden)
        self.fc2 = nn.Linear(hidden, embed_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm residual block: x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, embed_dim: int, num_heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim)
        self.attn = MultiHeadSelfAttention(embed_dim, num_heads)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.ffn = FeedForward(embed_dim, mlp_hidden)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class TransformerStage(nn.Module):
    """Tokenize a feature map per pixel, run L blocks, restore the map shape.

    Learned positional embeddings are one vector per token, so the stage is
    built for a fixed token grid.
    """

    def __init__(self, cfg: TransformerBlockConfig, grid_hw: tuple[int, int]):
        super().__init__()
        if cfg.embed_dim is None or cfg.mlp_hidden is None:
            raise ConfigError("TransformerStage needs a resolved config")
        self.cfg = cfg
        self.grid_hw = tuple(grid_hw)
        n_tokens = grid_hw[0] * grid_hw[1]
        self.pos_embed = nn.Parameter(torch.zeros(n_tokens, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_hidden)
            for _ in range(cfg.num_blocks)
        )

    def forward(self, fmap: Tensor) -> Tensor:
        b, c, h, w = fmap.shape
        if c != self.cfg.embed_dim:
            raise ConfigError(f"expected {self.cfg.embed_dim} channels, got {c}")
        if (h, w) != self.grid_hw:
            raise ConfigError(f"expected grid {self.grid_hw}, got {(h, w)}")
        x = fmap.flatten(2).transpose(1, 2)  # (B, HW, C)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return x.transpose(1, 2).reshape(b, c, h, w)


@dataclass
class RFAConvConfig:
    """Receptive-field attention convolution over k x k windows."""

    kernel_size: int = 3
    out_channels: int | None = None  # None: same as input channel count

    def __post_init__(self) -> None:
        if self.kernel_size < 2:
            raise ConfigError(f"kernel_size must be >= 2, got {self.kernel_size}")


class RFAConv(nn.Module):
    """Window features weighted by per-window softmax attention, then mixed.

    Pipeline for input (B, C, H, W) with k = kernel_size:
      window features: grouped k x k conv (groups=C) to k^2*C channels,
        batch-normalized and rectified;
      attention: k x k average pool (stride 1) then 1x1 grouped conv to
        k^2*C channels, softmax over each window's k^2 slots;
      the weighted features are laid out as k x k tiles on a (C, kH, kW)
      grid and mixed by a k x k stride-k conv down to (B, C', H, W).
    """

    def __init__(self, in_channels: int, cfg: RFAConvConfig):
        super().__init__()
        k = cfg.kernel_size
        out_channels = cfg.out_channels if cfg.out_channels is not None else in_channels
        self.cfg = cfg
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = k
        self.window_conv = nn.Conv2d(
            in_channels, k * k * in_channels, k, padding=k // 2, groups=in_channels
        )
        self.window_norm = nn.BatchNorm2d(k * k * in_channels)
        self.pool = nn.AvgPool2d(k, stride=1, padding=k // 2, count_include_pad=True)
        self.attn_conv = nn.Conv2d(
            in_channels, k * k * in_channels, 1, groups=in_channels, bias=False
        )
        self.mix_conv = nn.Conv2d(in_channels, out_channels, k, stride=k)

    def attention_weights(self, x: Tensor) -> Tensor:
        """(B, C, k^2, H, W) softmax weights; each window's slots sum to 1."""
        b, c, h, w = x.shape
        logits = self.attn_conv(self.pool(x)).view(b, c, self.kernel_size**2, h, w)
        return torch.softmax(logits, dim=2)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigError(
                f"expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        b, c, h, w = x.shape
        k = self.kernel_size
        if h < k or w < k:
            raise ConfigError(f"spatial size {(h, w)} smaller than kernel {k}")

        feats = F.relu(self.window_norm(self.window_conv(x))).view(b, c, k * k, h, w)
        weighted = self.attention_weights(x) * feats
        # (B, C, k*k, H, W) -> tiles: output (i*k+u, j*k+v) = slot (u*k+v) at (i, j)
        tiles = (
            weighted.view(b, c, k, k, h, w)
            .permute(0, 1, 4, 2, 5, 3)
            .reshape(b, c, h * k, w * k)
        )
        return self.mix_conv(tiles)


def init_parameters(module: nn.Module) -> None:
    """Kaiming-uniform weights (torch default), zero biases, 0.02-std embeddings."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)) and m.bias is not None:
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=0.02)
    for name, p in module.named_parameters():
        if name.endswith("pos_embed"):
            nn.init.normal_(p, std=0.02)
