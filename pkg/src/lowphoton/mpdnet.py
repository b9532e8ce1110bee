"""Multi-level pyramid denoising network.

Three flows share features extracted from the input at full, half and
quarter scale:

* denoising flow: quarter-scale features -> noise map, added to I_1/4;
* half-scale high-frequency flow: features of the denoised O_1/4, upsampled
  and merged with F_1/2 -> H_1/2;
* full-scale high-frequency flow: the half flow's penultimate features,
  upsampled and merged with F_1 -> H_1.

Outputs are recombined like a Laplacian pyramid:
``O_1/2 = up(O_1/4) + k H_1/2`` and ``O_1 = up(O_1/2) + k H_1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
from torch import nn

from .imaging_sim import DimensionError
from .nn_blocks import MARB, RB, ConfigurationError, conv1x1, conv3x3
from .pyramid import downsample, upsample

ABLATIONS = ("full", "rb_blocks", "no_multiscale_inputs", "no_multilevel")


@dataclass
class MPDNetConfig:
    channel_schedule: tuple[int, int, int, int] = (32, 64, 128, 256)
    k_sharpness: float = 1.0
    ablation: str = "full"
    gn_groups: int = 4
    leaky_slope: float = 0.2
    zero_init_heads: bool = True

    def __post_init__(self):
        self.channel_schedule = tuple(int(c) for c in self.channel_schedule)
        if len(self.channel_schedule) != 4:
            raise ConfigurationError("channel_schedule needs four entries (full, half, quarter, head)")
        if any(c <= 0 or c % 4 for c in self.channel_schedule):
            raise ConfigurationError(f"channels must be positive multiples of 4: {self.channel_schedule}")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.k_sharpness < 0:
            raise ConfigurationError("k_sharpness must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["channel_schedule"] = list(self.channel_schedule)
        return d


class MPDNetOutput(NamedTuple):
    o_quarter: torch.Tensor
    o_half: torch.Tensor
    o_full: torch.Tensor
    h_half: torch.Tensor
    h_full: torch.Tensor


def input_pyramid(x: torch.Tensor):
    """I_1/2 = down(g(I_1)), I_1/4 = down(g(I_1/2))."""
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise DimensionError(f"MPDNet input dimensions must be divisible by 4, got {h}x{w}")
    half = downsample(x)
    return half, downsample(half)


class MPDNet(nn.Module):
    def __init__(self, config: MPDNetConfig | None = None, **overrides):
        super().__init__()
        if config is None:
            config = MPDNetConfig(**overrides)
        self.config = config
        c1, c2, c4, ch = config.channel_schedule
        multiscale = config.ablation != "no_multiscale_inputs"
        self.multilevel = config.ablation != "no_multilevel"

        def blocks(c, n=1):
            if config.ablation == "rb_blocks":
                make = lambda: RB(c, half_width=True, gn_groups=config.gn_groups,
                                  leaky_slope=config.leaky_slope)
            else:
                make = lambda: MARB(c, config.gn_groups, config.leaky_slope)
            return nn.Sequential(*(make() for _ in range(n)))

        # shared multi-scale feature extraction
        self.head_full = nn.Sequential(conv3x3(3, c1), blocks(c1))
        self.down_half = nn.Sequential(conv3x3(c1, c2, stride=2), blocks(c2))
        self.down_quarter = nn.Sequential(conv3x3(c2, c4, stride=2), blocks(c4))
        if multiscale:
            self.input_half = nn.Sequential(conv3x3(3, c2), blocks(c2, 2))
            self.input_quarter = nn.Sequential(conv3x3(3, c4), blocks(c4, 2))
        else:
            self.input_half = self.input_quarter = None

        self.denoise_body = nn.Sequential(conv1x1(c4, ch), blocks(ch, 2))
        if self.multilevel:
            self.noise_head = conv3x3(ch, 3)
            self.quarter_features = nn.Sequential(conv3x3(3, c4), blocks(c4))
            self.lift_half = conv1x1(c4, c2)
            heads = [self.noise_head]
        else:
            self.lift_half = conv1x1(ch, c2)
        self.half_body = blocks(c2, 2)
        self.lift_full = conv1x1(c2, c1)
        self.full_body = blocks(c1, 2)
        self.full_head = conv3x3(c1, 3)
        if self.multilevel:
            self.half_head = conv3x3(c2, 3)
            heads += [self.half_head, self.full_head]
        else:
            heads = [self.full_head]
        if config.zero_init_heads:
            for conv in heads:
                nn.init.zeros_(conv.weight)
                nn.init.zeros_(conv.bias)

    def extract_features(self, x: torch.Tensor, pyr=None):
        """Return (F_1, F_1/2, F_1/4)."""
        x_half, x_quarter = input_pyramid(x) if pyr is None else pyr
        f_full = self.head_full(x)
        f_half = self.down_half(f_full)
        if self.input_half is not None:
            f_half = f_half + self.input_half(x_half)
        f_quarter = self.down_quarter(f_half)
        if self.input_quarter is not None:
            f_quarter = f_quarter + self.input_quarter(x_quarter)
        return f_full, f_half, f_quarter

    def forward(self, x: torch.Tensor, k: float | None = None) -> MPDNetOutput:
        k = self.config.k_sharpness if k is None else k
        x_half, x_quarter = input_pyramid(x)
        f_full, f_half, f_quarter = self.extract_features(x, (x_half, x_quarter))
        deep = self.denoise_body(f_quarter)

        if not self.multilevel:
            # direct full-scale mapping; pyramid outputs are derived for the losses
            feats = self.half_body(f_half + upsample(self.lift_half(deep)))
            feats = self.full_body(f_full + upsample(self.lift_full(feats)))
            o_full = x + self.full_head(feats)
            o_half = downsample(o_full)
            o_quarter = downsample(o_half)
            return MPDNetOutput(o_quarter, o_half, o_full,
                                o_half - upsample(o_quarter), o_full - upsample(o_half))

        o_quarter = x_quarter + torch.tanh(self.noise_head(deep))
        feats = f_half + upsample(self.lift_half(self.quarter_features(o_quarter)))
        feats = self.half_body(feats)
        h_half = torch.tanh(self.half_head(feats))
        feats = self.full_body(f_full + upsample(self.lift_full(feats)))
        h_full = torch.tanh(self.full_head(feats))

        o_half = upsample(o_quarter) + k * h_half
        o_full = upsample(o_half) + k * h_full
        return MPDNetOutput(o_quarter, o_half, o_full, h_half, h_full)

    @torch.no_grad()
    def denoise(self, x: torch.Tensor, k: float | None = None) -> MPDNetOutput:
        """Inference pass; the full-scale output is clamped to [0, 1]."""
        was_training = self.training
        self.eval()
        try:
            out = self(x, k)
        finally:
            self.train(was_training)
        return out._replace(o_full=out.o_full.clamp(0.0, 1.0))


def build_ablation(ablation: str = "full", **kwargs) -> MPDNet:
    return MPDNet(MPDNetConfig(ablation=ablation, **kwargs))

