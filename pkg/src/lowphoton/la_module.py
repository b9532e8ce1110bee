"""Luminance adjustment by illumination estimation.

A small encoder-decoder (stride-2 convolutions and MARBs, additive skip
connections) predicts a one-channel illumination map L in [eps, 1]; the
enhanced image is ``clamp(I / L, 0, 1)``. Because every channel of a pixel
is divided by the same scalar, per-pixel colour ratios are kept. The
``residual`` variant predicts a 3-channel correction instead.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .imaging_sim import DimensionError
from .nn_blocks import MARB, ConfigurationError, conv3x3

VARIANTS = ("illumination", "residual")


@dataclass
class LAConfig:
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    variant: str = "illumination"
    epsilon_floor: float = 0.01
    gn_groups: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if len(self.encoder_channels) < 2:
            raise ConfigurationError("need at least two encoder stages")
        if any(c <= 0 or c % 4 for c in self.encoder_channels):
            raise ConfigurationError(f"channels must be positive multiples of 4: {self.encoder_channels}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown LA variant {self.variant!r}")
        if not 0 < self.epsilon_floor < 1:
            raise ConfigurationError("epsilon_floor must lie in (0, 1)")

    @property
    def downsampling_factor(self) -> int:
        return 2 ** (len(self.encoder_channels) - 1)

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d


def adjust(img: torch.Tensor, illumination: torch.Tensor, eps: float = 0.01,
           clamp: bool = True) -> torch.Tensor:
    """R = img / max(L, eps), broadcast over channels, clamped to [0, 1]."""
    out = img / illumination.clamp_min(eps)
    return out.clamp(0.0, 1.0) if clamp else out


class LAModule(nn.Module):
    def __init__(self, config: LAConfig | None = None, **overrides):
        super().__init__()
        if config is None:
            config = LAConfig(**overrides)
        self.config = config
        chans = config.encoder_channels
        g, s = config.gn_groups, config.leaky_slope

        self.stem = nn.Sequential(conv3x3(3, chans[0]), MARB(chans[0], g, s))
        self.encoder = nn.ModuleList(
            nn.Sequential(conv3x3(cin, cout, stride=2), MARB(cout, g, s))
            for cin, cout in zip(chans[:-1], chans[1:]))
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(cin, cout, 2, stride=2)
            for cin, cout in zip(chans[:0:-1], chans[-2::-1]))
        self.decoder = nn.ModuleList(MARB(c, g, s) for c in chans[-2::-1])

        if config.variant == "illumination":
            self.head = conv3x3(chans[0], 1)
        else:
            self.head = conv3x3(chans[0], 3)
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def _features(self, x):
        h, w = x.shape[-2:]
        f = self.config.downsampling_factor
        if h % f or w % f:
            raise DimensionError(f"LA input dimensions must be divisible by {f}, got {h}x{w}")
        skips = [self.stem(x)]
        for stage in self.encoder:
            skips.append(stage(skips[-1]))
        y = skips.pop()
        for up, block in zip(self.up, self.decoder):
            y = block(up(y) + skips.pop())
        return y

    def estimate_illumination(self, x: torch.Tensor) -> torch.Tensor:
        if self.config.variant != "illumination":
            raise ConfigurationError("residual LA variant does not estimate illumination")
        return torch.sigmoid(self.head(self._features(x))).clamp_min(self.config.epsilon_floor)

    def forward(self, x: torch.Tensor):
        """Return ``(R, L)``; L is None for the residual variant."""
        if self.config.variant == "illumination":
            L = self.estimate_illumination(x)
            return adjust(x, L, self.config.epsilon_floor), L
        residual = torch.tanh(self.head(self._features(x)))
        return (x + residual).clamp(0.0, 1.0), None

    @torch.no_grad()
    def enhance(self, x: torch.Tensor) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return self(x)[0]
        finally:
            self.train(was_training)
