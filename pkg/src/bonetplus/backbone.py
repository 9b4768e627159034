"""Inception-V3-topology fusion trunk with a global width divisor.

The block structure (stem, three A blocks, reduction, four factorized-7x7
C blocks, reduction, two E blocks, global average pool) follows the
classic design; every conv is padded to SAME and reductions use stride-2
padding-1 convs/pools so the trunk also accepts the small feature grids
produced at desk scale (spatial size never collapses below 1x1). The first
conv takes an arbitrary channel count because the input here is a fused
feature map, not an RGB image.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from bonetplus.errors import ConfigError


class ConvBNReLU(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel, stride=1, padding=0):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=padding, bias=False)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)), inplace=True)


class InceptionA(nn.Module):
    def __init__(self, c_in: int, w, pool_features: int):
        super().__init__()
        self.b1x1 = ConvBNReLU(c_in, w(64), 1)
        self.b5x5 = nn.Sequential(ConvBNReLU(c_in, w(48), 1), ConvBNReLU(w(48), w(64), 5, padding=2))
        self.b3x3dbl = nn.Sequential(
            ConvBNReLU(c_in, w(64), 1),
            ConvBNReLU(w(64), w(96), 3, padding=1),
            ConvBNReLU(w(96), w(96), 3, padding=1),
        )
        self.bpool = ConvBNReLU(c_in, pool_features, 1)
        self.out_channels = w(64) + w(64) + w(96) + pool_features

    def forward(self, x: Tensor) -> Tensor:
        pooled = F.avg_pool2d(x, 3, stride=1, padding=1)
        return torch.cat(
            [self.b1x1(x), self.b5x5(x), self.b3x3dbl(x), self.bpool(pooled)], dim=1
        )


class ReductionA(nn.Module):
    def __init__(self, c_in: int, w):
        super().__init__()
        self.b3x3 = ConvBNReLU(c_in, w(384), 3, stride=2, padding=1)
        self.b3x3dbl = nn.Sequential(
            ConvBNReLU(c_in, w(64), 1),
            ConvBNReLU(w(64), w(96), 3, padding=1),
            ConvBNReLU(w(96), w(96), 3, stride=2, padding=1),
        )
        self.out_channels = w(384) + w(96) + c_in

    def forward(self, x: Tensor) -> Tensor:
        pooled = F.max_pool2d(x, 3, stride=2, padding=1)
        return torch.cat([self.b3x3(x), self.b3x3dbl(x), pooled], dim=1)


class InceptionC(nn.Module):
    def __init__(self, c_in: int, w, c7: int):
        super().__init__()
        self.b1x1 = ConvBNReLU(c_in, w(192), 1)
        self.b7x7 = nn.Sequential(
            ConvBNReLU(c_in, c7, 1),
            ConvBNReLU(c7, c7, (1, 7), padding=(0, 3)),
            ConvBNReLU(c7, w(192), (7, 1), padding=(3, 0)),
        )
        self.b7x7dbl = nn.Sequential(
            ConvBNReLU(c_in, c7, 1),
            ConvBNReLU(c7, c7, (7, 1), padding=(3, 0)),
            ConvBNReLU(c7, c7, (1, 7), padding=(0, 3)),
            ConvBNReLU(c7, c7, (7, 1), padding=(3, 0)),
            ConvBNReLU(c7, w(192), (1, 7), padding=(0, 3)),
        )
        self.bpool = ConvBNReLU(c_in, w(192), 1)
        self.out_channels = 4 * w(192)

    def forward(self, x: Tensor) -> Tensor:
        pooled = F.avg_pool2d(x, 3, stride=1, padding=1)
        return torch.cat(
            [self.b1x1(x), self.b7x7(x), self.b7x7dbl(x), self.bpool(pooled)], dim=1
        )


class ReductionB(nn.Module):
    def __init__(self, c_in: int, w):
        super().__init__()
        self.b3x3 = nn.Sequential(
            ConvBNReLU(c_in, w(192), 1), ConvBNReLU(w(192), w(320), 3, stride=2, padding=1)
        )
        self.b7x7x3 = nn.Sequential(
            ConvBNReLU(c_in, w(192), 1),
            ConvBNReLU(w(192), w(192), (1, 7), padding=(0, 3)),
            ConvBNReLU(w(192), w(192), (7, 1), padding=(3, 0)),
            ConvBNReLU(w(192), w(192), 3, stride=2, padding=1),
        )
        self.out_channels = w(320) + w(192) + c_in

    def forward(self, x: Tensor) -> Tensor:
        pooled = F.max_pool2d(x, 3, stride=2, padding=1)
        return torch.cat([self.b3x3(x), self.b7x7x3(x), pooled], dim=1)


class InceptionE(nn.Module):
    def __init__(self, c_in: int, w):
        super().__init__()
        self.b1x1 = ConvBNReLU(c_in, w(320), 1)
        self.b3x3_stem = ConvBNReLU(c_in, w(384), 1)
        self.b3x3_a = ConvBNReLU(w(384), w(384), (1, 3), padding=(0, 1))
        self.b3x3_b = ConvBNReLU(w(384), w(384), (3, 1), padding=(1, 0))
        self.b3x3dbl_stem = nn.Sequential(
            ConvBNReLU(c_in, w(448), 1), ConvBNReLU(w(448), w(384), 3, padding=1)
        )
        self.b3x3dbl_a = ConvBNReLU(w(384), w(384), (1, 3), padding=(0, 1))
        self.b3x3dbl_b = ConvBNReLU(w(384), w(384), (3, 1), padding=(1, 0))
        self.bpool = ConvBNReLU(c_in, w(192), 1)
        self.out_channels = w(320) + 4 * w(384) + w(192)

    def forward(self, x: Tensor) -> Tensor:
        y1 = self.b3x3_stem(x)
        y2 = self.b3x3dbl_stem(x)
        pooled = F.avg_pool2d(x, 3, stride=1, padding=1)
        return torch.cat(
            [
                self.b1x1(x),
                self.b3x3_a(y1),
                self.b3x3_b(y1),
                self.b3x3dbl_a(y2),
                self.b3x3dbl_b(y2),
                self.bpool(pooled),
            ],
            dim=1,
        )


class InceptionBackbone(nn.Module):
    """Fusion trunk: feature map in, globally pooled feature vector out."""

    def __init__(self, in_channels: int, width_div: int = 1):
        super().__init__()
        if width_div < 1:
            raise ConfigError(f"width divisor must be >= 1, got {width_div}")
        self.in_channels = in_channels
        self.width_div = width_div

        def w(full: int) -> int:
            return max(1, full // width_div)

        self.stem = nn.Sequential(
            ConvBNReLU(in_channels, w(32), 3, stride=2, padding=1),
            ConvBNReLU(w(32), w(32), 3, padding=1),
            ConvBNReLU(w(32), w(64), 3, padding=1),
            nn.MaxPool2d(3, stride=2, padding=1),
            ConvBNReLU(w(64), w(80), 1),
            ConvBNReLU(w(80), w(192), 3, padding=1),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        blocks: list[nn.Module] = []
        c = w(192)
        for pool_features in (w(32), w(64), w(64)):
            block = InceptionA(c, w, pool_features)
            blocks.append(block)
            c = block.out_channels
        red_a = ReductionA(c, w)
        blocks.append(red_a)
        c = red_a.out_channels
        for c7 in (w(128), w(160), w(160), w(192)):
            block = InceptionC(c, w, c7)
            blocks.append(block)
            c = block.out_channels
        red_b = ReductionB(c, w)
        blocks.append(red_b)
        c = red_b.out_channels
        for _ in range(2):
            block = InceptionE(c, w)
            blocks.append(block)
            c = block.out_channels
        self.blocks = nn.Sequential(*blocks)
        self.out_features = c

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigError(
                f"backbone expects (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        x = self.stem(x)
        x = self.blocks(x)
        return F.adaptive_avg_pool2d(x, 1).flatten(1)
