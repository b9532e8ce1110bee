"""Gaussian-smoothed resampling and a two-level Laplacian pyramid.

All functions take torch tensors whose last two dimensions are (H, W); any
leading dimensions (batch, channel) are carried through. Upsampling is
bilinear for both the pyramid and the network, so decomposition followed by
reconstruction with k=1 telescopes back to the input. Decimation averages
2x2 blocks after smoothing so that both operators use half-pixel centres;
affine signals then pass through down/up unchanged away from the borders.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F

from .imaging_sim import DimensionError

BINOMIAL_5 = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class PyramidTargets(NamedTuple):
    o_quarter: torch.Tensor
    o_half: torch.Tensor
    h_half: torch.Tensor
    h_full: torch.Tensor


def _as_4d(x: torch.Tensor):
    lead = x.shape[:-2]
    return x.reshape(-1, 1, *x.shape[-2:]), lead


def gaussian_smooth(x: torch.Tensor) -> torch.Tensor:
    """Separable 5-tap binomial blur with edge replication; shape preserved."""
    y, lead = _as_4d(x)
    k = BINOMIAL_5.to(dtype=x.dtype, device=x.device)
    y = F.pad(y, (2, 2, 2, 2), mode="replicate")
    y = F.conv2d(y, k.view(1, 1, 1, 5))
    y = F.conv2d(y, k.view(1, 1, 5, 1))
    return y.reshape(*lead, *y.shape[-2:])


def downsample(x: torch.Tensor) -> torch.Tensor:
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"downsample needs even dimensions, got {h}x{w}")
    y, lead = _as_4d(gaussian_smooth(x))
    # 2x2 mean puts sample j at 2j + 0.5, the grid bilinear upsampling assumes
    y = F.avg_pool2d(y, 2)
    return y.reshape(*lead, *y.shape[-2:])


def upsample(x: torch.Tensor) -> torch.Tensor:
    """Exact 2x bilinear upsampling (half-pixel centres)."""
    y, lead = _as_4d(x)
    y = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
    return y.reshape(*lead, *y.shape[-2:])


def laplacian_decompose(x: torch.Tensor, levels: int = 2):
    """Split ``x`` into a quarter-scale top and high-frequency bands.

    Returns ``(top, [h_half, h_full])`` ordered coarse to fine.
    """
    if levels != 2:
        raise ValueError("only two-level pyramids are supported")
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise DimensionError(f"pyramid needs dimensions divisible by 4, got {h}x{w}")
    t1 = downsample(x)
    t2 = downsample(t1)
    return t2, [t1 - upsample(t2), x - upsample(t1)]


def laplacian_reconstruct(top: torch.Tensor, highs, k: float = 1.0) -> torch.Tensor:
    out = top
    for high in highs:
        up = upsample(out)
        if up.shape != high.shape:
            raise DimensionError(
                f"high-frequency band {tuple(high.shape)} does not match "
                f"upsampled image {tuple(up.shape)}")
        out = up + k * high
    return out


def make_training_targets(gt: torch.Tensor) -> PyramidTargets:
    h, w = gt.shape[-2:]
    if h % 4 or w % 4:
        raise DimensionError(f"targets need dimensions divisible by 4, got {h}x{w}")
    half = downsample(gt)
    quarter = downsample(half)
    return PyramidTargets(o_quarter=quarter, o_half=half,
                          h_half=half - upsample(quarter), h_full=gt - upsample(half))
