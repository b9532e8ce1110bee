"""Multi-skip attention residual block (MARB) and plain residual blocks."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import torch
from torch import nn


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class MARBConfig:
    channels: int
    gn_groups: int = 4
    leaky_slope: float = 0.2
    attention_channels: int = 1

    def __post_init__(self):
        if self.channels <= 0 or self.channels % 4:
            raise ConfigurationError(f"MARB channels must be a positive multiple of 4, got {self.channels}")
        if (self.channels // 4) % self.gn_groups:
            raise ConfigurationError(
                f"gn_groups={self.gn_groups} must divide C/4={self.channels // 4}")
        if self.attention_channels not in (1, self.channels):
            raise ConfigurationError("attention map must have 1 or C channels")


def conv3x3(cin, cout, stride=1, bias=True):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=bias)


def conv1x1(cin, cout, bias=True):
    return nn.Conv2d(cin, cout, 1, bias=bias)


class ConvGNAct(nn.Sequential):
    def __init__(self, cin, cout, groups=4, slope=0.2):
        super().__init__(conv3x3(cin, cout), nn.GroupNorm(groups, cout),
                         nn.LeakyReLU(slope, inplace=True))


class MARB(nn.Module):
    """Cascaded C/2, C/4, C/4 convolutions, concatenated and fused through a
    1x1 bottleneck, gated by a sigmoid spatial attention map, plus identity."""

    def __init__(self, channels: int, gn_groups: int = 4, leaky_slope: float = 0.2,
                 attention_channels: int = 1):
        super().__init__()
        self.config = MARBConfig(channels, gn_groups, leaky_slope, attention_channels)
        c, c2, c4 = channels, channels // 2, channels // 4
        self.conv1 = ConvGNAct(c, c2, gn_groups, leaky_slope)
        self.conv2 = ConvGNAct(c2, c4, gn_groups, leaky_slope)
        self.conv3 = ConvGNAct(c4, c4, gn_groups, leaky_slope)
        self.squeeze = conv1x1(c, c4)
        self.act = nn.LeakyReLU(leaky_slope, inplace=True)
        self.expand = conv1x1(c4, c)
        self.attention = conv3x3(c, attention_channels)

    def attention_map(self, fused: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.attention(fused))

    def fuse(self, x: torch.Tensor) -> torch.Tensor:
        a = self.conv1(x)
        b = self.conv2(a)
        c = self.conv3(b)
        return self.expand(self.act(self.squeeze(torch.cat([a, b, c], dim=1))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.config.channels:
            raise ConfigurationError(
                f"MARB({self.config.channels}) got input with {x.shape[1]} channels")
        fused = self.fuse(x)
        return x + fused * self.attention_map(fused)


class RB(nn.Module):
    """Two 3x3 convolutions with a residual connection.

    ``half_width=True`` narrows the intermediate layer to C/2 (the ablation
    baseline); otherwise both layers output C channels.
    """

    def __init__(self, channels: int, half_width: bool = True, gn_groups: int = 4,
                 leaky_slope: float = 0.2):
        super().__init__()
        mid = channels // 2 if half_width else channels
        if channels <= 0 or mid % gn_groups:
            raise ConfigurationError(f"RB({channels}) incompatible with {gn_groups} GN groups")
        self.channels = channels
        self.body = nn.Sequential(ConvGNAct(channels, mid, gn_groups, leaky_slope),
                                  conv3x3(mid, channels))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ConfigurationError(f"RB({self.channels}) got input with {x.shape[1]} channels")
        return x + self.body(x)


def marb_param_count(channels: int, attention_channels: int = 1) -> int:
    """Weight-only parameter count of a MARB (biases and GN affine excluded).

    Exact layer-wise sum for C divisible by 4; otherwise the closed form
    107/16 C^2 + 9C rounded to the nearest integer.
    """
    c = channels
    if c % 4 == 0:
        c2, c4 = c // 2, c // 4
        return 9 * c * c2 + 9 * c2 * c4 + 9 * c4 * c4 + 2 * c * c4 + 9 * c * attention_channels
    exact = Fraction(107, 16) * c * c + 9 * c * attention_channels
    return round(exact)


def rb_param_count(channels: int, half_width: bool = False) -> int:
    """Weight-only parameter count of a residual block (18C^2 at full width)."""
    mid = channels // 2 if half_width else channels
    return 9 * channels * mid * 2


def count_params(model: nn.Module, include_aux: bool = True) -> int:
    """Trainable scalars; with ``include_aux=False`` only conv weight tensors count."""
    total = 0
    for p in model.parameters():
        if not p.requires_grad:
            continue
        if include_aux or p.dim() > 1:
            total += p.numel()
    return total
