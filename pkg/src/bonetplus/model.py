"""Two-stream network assembly and prediction plumbing.

Layout of one forward pass (S = configured input size, default 500)::

    image (1,S,S) --global stem--> (d, S/4, S/4) --cap pools--> transformer --+
                                                                              +--concat--> inception trunk
    attn  (1,S,S) --local stem---> (d, S/4, S/4) --rfaconv--> --cap pools-----+       |
                                                                                   gap + gender embedding
                                                                                      |
                                                                              fc -> fc -> linear -> months

Cap pools are shared stride-4 max pools inserted until the token count is
within the transformer's cap; the local channel applies the same pools
after its module so that all four ablation variants concatenate feature
maps of identical spatial size. With a module flag off the corresponding
channel passes its stem output through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
import torch
from torch import Tensor, nn

from bonetplus.backbone import InceptionBackbone
from bonetplus.errors import ConfigError
from bonetplus.nnblocks import (
    ConvStem,
    ConvStemConfig,
    RFAConv,
    RFAConvConfig,
    TransformerBlockConfig,
    TransformerStage,
    init_parameters,
)

TAP_NAMES = ("pre_transformer", "post_transformer", "pre_rfaconv", "post_rfaconv")


@dataclass
class BoNetPlusConfig:
    """Every architectural knob, with production-scale defaults."""

    global_stem: ConvStemConfig = field(default_factory=ConvStemConfig)
    local_stem: ConvStemConfig = field(default_factory=ConvStemConfig)
    transformer: TransformerBlockConfig = field(default_factory=TransformerBlockConfig)
    rfaconv: RFAConvConfig = field(default_factory=RFAConvConfig)
    backbone_scale: str = "full"  # "full" or "mini" (all trunk widths / 8)
    gender_embed_dim: int = 32
    head_dims: tuple[int, int] = (1024, 512)
    use_transformer: bool = True
    use_rfaconv: bool = True
    input_size: int = 500

    def __post_init__(self) -> None:
        if self.backbone_scale not in ("full", "mini"):
            raise ConfigError(f"backbone_scale must be 'full' or 'mini', got {self.backbone_scale!r}")
        if self.gender_embed_dim <= 0:
            raise ConfigError(f"gender_embed_dim must be positive, got {self.gender_embed_dim}")
        self.head_dims = tuple(int(d) for d in self.head_dims)
        if len(self.head_dims) != 2 or any(d <= 0 for d in self.head_dims):
            raise ConfigError(f"head_dims must be two positive widths, got {self.head_dims}")
        if self.input_size < 16:
            raise ConfigError(f"input_size too small: {self.input_size}")

    @property
    def backbone_width_div(self) -> int:
        return 8 if self.backbone_scale == "mini" else 1

    @classmethod
    def mini(cls, input_size: int = 500, **overrides) -> "BoNetPlusConfig":
        """Desk-scale preset: narrow stems, tiny transformer, mini trunk."""
        defaults = dict(
            global_stem=ConvStemConfig(channel_widths=(2, 2, 4, 4, 8)),
            local_stem=ConvStemConfig(channel_widths=(2, 2, 4, 4, 8)),
            transformer=TransformerBlockConfig(num_heads=2),
            backbone_scale="mini",
            gender_embed_dim=8,
            head_dims=(64, 32),
            input_size=input_size,
        )
        defaults.update(overrides)
        return cls(**defaults)

    def to_dict(self) -> dict:
        return {
            "global_stem": {"channel_widths": list(self.global_stem.channel_widths),
                            "kernel_size": self.global_stem.kernel_size},
            "local_stem": {"channel_widths": list(self.local_stem.channel_widths),
                           "kernel_size": self.local_stem.kernel_size},
            "transformer": {"embed_dim": self.transformer.embed_dim,
                            "num_heads": self.transformer.num_heads,
                            "mlp_hidden": self.transformer.mlp_hidden,
                            "num_blocks": self.transformer.num_blocks,
                            "token_cap": self.transformer.token_cap},
            "rfaconv": {"kernel_size": self.rfaconv.kernel_size,
                        "out_channels": self.rfaconv.out_channels},
            "backbone_scale": self.backbone_scale,
            "gender_embed_dim": self.gender_embed_dim,
            "head_dims": list(self.head_dims),
            "use_transformer": self.use_transformer,
            "use_rfaconv": self.use_rfaconv,
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoNetPlusConfig":
        from bonetplus.runconfig import check_keys  # local import to avoid a cycle

        check_keys(d, {f.name for f in cls.__dataclass_fields__.values()}, "model")
        kwargs = dict(d)
        if "global_stem" in kwargs:
            check_keys(kwargs["global_stem"], {"channel_widths", "kernel_size"}, "model.global_stem")
            kwargs["global_stem"] = ConvStemConfig(**kwargs["global_stem"])
        if "local_stem" in kwargs:
            check_keys(kwargs["local_stem"], {"channel_widths", "kernel_size"}, "model.local_stem")
            kwargs["local_stem"] = ConvStemConfig(**kwargs["local_stem"])
        if "transformer" in kwargs:
            check_keys(
                kwargs["transformer"],
                {"embed_dim", "num_heads", "mlp_hidden", "num_blocks", "token_cap"},
                "model.transformer",
            )
            kwargs["transformer"] = TransformerBlockConfig(**kwargs["transformer"])
        if "rfaconv" in kwargs:
            check_keys(kwargs["rfaconv"], {"kernel_size", "out_channels"}, "model.rfaconv")
            kwargs["rfaconv"] = RFAConvConfig(**kwargs["rfaconv"])
        if "head_dims" in kwargs:
            kwargs["head_dims"] = tuple(kwargs["head_dims"])
        return cls(**kwargs)

    def ablation_variant(self, use_transformer: bool, use_rfaconv: bool) -> "BoNetPlusConfig":
        return replace(self, use_transformer=use_transformer, use_rfaconv=use_rfaconv)


def _cap_pool_plan(stem_out_size: int, token_cap: int) -> tuple[int, int]:
    """Number of extra stride-4 pools and the resulting grid side."""
    n, size = 0, stem_out_size
    while size * size > token_cap:
        next_size = (size - 4) // 4 + 1
        if next_size < 1:
            raise ConfigError(f"cannot pool grid of side {size} below the token cap {token_cap}")
        size, n = next_size, n + 1
    return n, size


@dataclass
class PredictionRecord:
    """One evaluated sample."""

    sample_id: str
    predicted_age: float
    true_age: float
    gender: int


class BoNetPlus(nn.Module):
    """Global transformer channel + local RFA channel + inception fusion."""

    def __init__(self, cfg: BoNetPlusConfig):
        super().__init__()
        if cfg.global_stem.out_size(cfg.input_size) < 1:
            raise ConfigError(f"input_size {cfg.input_size} collapses inside the stem")
        self.cfg = cfg
        self.global_stem = ConvStem(1, cfg.global_stem)
        self.local_stem = ConvStem(1, cfg.local_stem)

        stem_size = cfg.global_stem.out_size(cfg.input_size)
        if cfg.local_stem.out_size(cfg.input_size) != stem_size:
            raise ConfigError("global and local stems must produce the same spatial size")
        n_pools, grid = _cap_pool_plan(stem_size, cfg.transformer.token_cap)
        self.cap_pools = nn.ModuleList(nn.MaxPool2d(4, 4) for _ in range(n_pools))
        self.grid_size = grid

        d_global = cfg.global_stem.out_channels
        d_local = cfg.local_stem.out_channels
        self.transformer = (
            TransformerStage(cfg.transformer.resolve(d_global), (grid, grid))
            if cfg.use_transformer
            else None
        )
        self.rfaconv = RFAConv(d_local, cfg.rfaconv) if cfg.use_rfaconv else None
        local_out = self.rfaconv.out_channels if self.rfaconv is not None else d_local

        self.backbone = InceptionBackbone(d_global + local_out, cfg.backbone_width_div)
        self.gender_embed = nn.Embedding(2, cfg.gender_embed_dim)
        h1, h2 = cfg.head_dims
        self.head = nn.Sequential(
            nn.Linear(self.backbone.out_features + cfg.gender_embed_dim, h1),
            nn.ReLU(inplace=True),
            nn.Linear(h1, h2),
            nn.ReLU(inplace=True),
            nn.Linear(h2, 1),
        )
        init_parameters(self)

    def _check_input(self, x: Tensor, name: str) -> None:
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise ConfigError(f"{name} must be (B, 1, {s}, {s}), got {tuple(x.shape)}")

    def forward(
        self,
        image: Tensor,
        attention_map: Tensor,
        gender: Tensor,
        taps: dict[str, Tensor] | None = None,
    ) -> Tensor:
        """Predicted age in months, shape (B,).

        When ``taps`` is a dict it receives the four module-boundary feature
        maps (keys ``pre/post_transformer``, ``pre/post_rfaconv``) with
        gradient retention enabled, for attribution.
        """
        self._check_input(image, "image")
        self._check_input(attention_map, "attention_map")
        if gender.shape != image.shape[:1]:
            raise ConfigError(f"gender must be (B,), got {tuple(gender.shape)}")

        g = self.global_stem(image)
        for pool in self.cap_pools:
            g = pool(g)
        self._tap(taps, "pre_transformer", g)
        if self.transformer is not None:
            g = self.transformer(g)
        self._tap(taps, "post_transformer", g)

        loc = self.local_stem(attention_map)
        self._tap(taps, "pre_rfaconv", loc)
        if self.rfaconv is not None:
            loc = self.rfaconv(loc)
        self._tap(taps, "post_rfaconv", loc)
        for pool in self.cap_pools:
            loc = pool(loc)

        fused = torch.cat([g, loc], dim=1)
        pooled = self.backbone(fused)
        emb = self.gender_embed(gender.long())
        out = self.head(torch.cat([pooled, emb], dim=1))
        return out.squeeze(-1)

    @staticmethod
    def _tap(taps: dict[str, Tensor] | None, name: str, value: Tensor) -> None:
        if taps is not None:
            if value.requires_grad:
                value.retain_grad()
            taps[name] = value

    @torch.no_grad()
    def predict(self, image: np.ndarray, attention_map: np.ndarray, gender: int) -> float:
        """Single-sample convenience wrapper (eval mode, no autograd)."""
        was_training = self.training
        self.eval()
        try:
            out = self(
                torch.from_numpy(np.ascontiguousarray(image))[None].float(),
                torch.from_numpy(np.ascontiguousarray(attention_map))[None].float(),
                torch.tensor([int(gender)]),
            )
        finally:
            self.train(was_training)
        return float(out.item())


def count_parameters(cfg: BoNetPlusConfig) -> int:
    """Exact trainable scalar count for a config."""
    model = BoNetPlus(cfg)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def predict_ages(
    model: BoNetPlus,
    images: np.ndarray,
    maps: np.ndarray,
    genders: np.ndarray,
    batch_size: int = 16,
    channels_last: bool = True,
) -> np.ndarray:
    """Batched inference over stacked arrays; returns months, shape (N,)."""
    was_training = model.training
    model.eval()
    preds: list[np.ndarray] = []
    try:
        with torch.inference_mode():
            for lo in range(0, len(images), batch_size):
                hi = lo + batch_size
                img = torch.from_numpy(images[lo:hi]).float()
                amp = torch.from_numpy(maps[lo:hi]).float()
                if channels_last:
                    img = img.to(memory_format=torch.channels_last)
                    amp = amp.to(memory_format=torch.channels_last)
                gen = torch.from_numpy(genders[lo:hi]).long()
                preds.append(model(img, amp, gen).numpy())
    finally:
        model.train(was_training)
    return np.concatenate(preds)


def records_from_arrays(
    ids: Iterable[str], preds: np.ndarray, ages: np.ndarray, genders: np.ndarray
) -> list[PredictionRecord]:
    return [
        PredictionRecord(sample_id=i, predicted_age=float(p), true_age=float(a), gender=int(g))
        for i, p, a, g in zip(ids, preds, ages, genders)
    ]
