"""Training objectives for the denoiser and the luminance adjustment module.

All L1 terms use mean reduction. Tensors are NCHW.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .pyramid import PyramidTargets, make_training_targets

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

VGG_WEIGHTS_ENV = "LOWPHOTON_VGG16_WEIGHTS"
VGG_HUB_FILE = "vgg16-397923af.pth"
# features[:16] ends at relu3_3
VGG_LAYER = 16


class PerceptualUnavailableError(RuntimeError):
    """Pretrained extractor weights could not be located."""


@dataclass
class LossReport:
    total: torch.Tensor
    components: dict[str, torch.Tensor] = field(default_factory=dict)

    def item_dict(self) -> dict[str, float]:
        d = {name: float(v.detach()) for name, v in self.components.items()}
        d["total"] = float(self.total.detach())
        return d


def _check_shapes(*pairs):
    for a, b in pairs:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def high_freq_loss(h_half, h_full, targets: PyramidTargets) -> torch.Tensor:
    _check_shapes((h_half, targets.h_half), (h_full, targets.h_full))
    return F.l1_loss(h_half, targets.h_half) + F.l1_loss(h_full, targets.h_full)


def multiscale_output_loss(o_quarter, o_half, o_full, gt, targets: PyramidTargets | None = None):
    targets = make_training_targets(gt) if targets is None else targets
    _check_shapes((o_quarter, targets.o_quarter), (o_half, targets.o_half), (o_full, gt))
    return (F.l1_loss(o_quarter, targets.o_quarter) + F.l1_loss(o_half, targets.o_half)
            + F.l1_loss(o_full, gt))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float32):
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-coords**2 / (2 * sigma**2))
    return g / g.sum()


def ssim_map(x: torch.Tensor, y: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    """Per-channel SSIM over valid 11x11 Gaussian windows (sigma 1.5)."""
    _check_shapes((x, y))
    if x.dim() == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}px on each side for SSIM")
    c = x.shape[1]
    g = gaussian_window(dtype=x.dtype).to(x.device)
    kx = g.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = g.view(1, 1, -1, 1).expand(c, 1, -1, 1)

    def blur(t):
        return F.conv2d(F.conv2d(t, kx, groups=c), ky, groups=c)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x**2
    syy = blur(y * y) - mu_y**2
    sxy = blur(x * y) - mu_x * mu_y
    return ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)
            / ((mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)))


def ssim(x, y, data_range: float = 1.0) -> torch.Tensor:
    return ssim_map(x, y, data_range).mean()


def ssim_loss(x, y) -> torch.Tensor:
    return 1.0 - ssim(x, y)


def _locate_vgg_weights(path=None) -> Path:
    candidates = [path, os.environ.get(VGG_WEIGHTS_ENV),
                  Path(torch.hub.get_dir()) / "checkpoints" / VGG_HUB_FILE]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    raise PerceptualUnavailableError(
        "pretrained VGG16 weights not found; pass a path, set "
        f"{VGG_WEIGHTS_ENV}, or disable the perceptual term")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class PerceptualLoss(nn.Module):
    """L1 distance between frozen mid-depth CNN activations.

    By default the extractor is VGG16 up to relu3_3 loaded from local
    ImageNet weights; any frozen module mapping (N, 3, H, W) in [0, 1]-ish
    normalised space to feature maps can be supplied instead.
    """

    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, extractor: nn.Module | None = None, weights_path=None,
                 identity: str | None = None):
        super().__init__()
        if extractor is None:
            from torchvision.models import vgg16

            path = _locate_vgg_weights(weights_path)
            net = vgg16()
            net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
            extractor = net.features[:VGG_LAYER]
            identity = f"vgg16.features[:{VGG_LAYER}]@sha256:{file_digest(path)}"
        self.extractor = extractor.eval()
        for p in self.extractor.parameters():
            p.requires_grad_(False)
        self.identity = identity or "custom"
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))

    def train(self, mode: bool = True):
        super().train(mode)
        self.extractor.eval()
        return self

    def forward(self, x, y):
        _check_shapes((x, y))
        mean, std = self.mean.to(x.dtype), self.std.to(x.dtype)
        fx = self.extractor((x - mean) / std)
        fy = self.extractor((y - mean) / std)
        return F.l1_loss(fx, fy)


@dataclass
class MPDLossWeights:
    """Switches for the loss ablations; each term has unit weight when on."""

    high_freq: bool = True
    output: bool = True
    ssim: bool = True
    perceptual: bool = True


def mpd_full_loss(outputs, gt, perceptual: PerceptualLoss | None = None,
                  terms: MPDLossWeights | None = None) -> LossReport:
    """l_H + l_O + l_SSIM(O_1, gt) + l_vgg(O_1, gt), honouring disabled terms.

    If the perceptual term is enabled a ``perceptual`` module must be given.
    """
    terms = terms or MPDLossWeights()
    targets = make_training_targets(gt)
    comps = {}
    if terms.high_freq:
        comps["l_h"] = high_freq_loss(outputs.h_half, outputs.h_full, targets)
    if terms.output:
        comps["l_o"] = multiscale_output_loss(outputs.o_quarter, outputs.o_half,
                                              outputs.o_full, gt, targets)
    if terms.ssim:
        comps["l_ssim"] = ssim_loss(outputs.o_full, gt)
    if terms.perceptual:
        if perceptual is None:
            raise PerceptualUnavailableError("perceptual term enabled but no extractor supplied")
        comps["l_vgg"] = perceptual(outputs.o_full, gt)
    total = sum(comps.values()) if comps else gt.new_zeros(())
    return LossReport(total, comps)


def _forward_diff(t):
    dx = torch.zeros_like(t)
    dy = torch.zeros_like(t)
    dx[..., :, :-1] = t[..., :, 1:] - t[..., :, :-1]
    dy[..., :-1, :] = t[..., 1:, :] - t[..., :-1, :]
    return dx, dy


def smooth_loss(illumination: torch.Tensor, gt: torch.Tensor, eta: float = 10.0) -> torch.Tensor:
    """Structure-aware smoothness: |grad L| * exp(-eta |grad gt|), averaged
    over pixels and both directions; gt gradient is the channel-wise max."""
    if illumination.shape[-2:] != gt.shape[-2:]:
        raise ValueError("illumination and reference must share spatial dimensions")
    lx, ly = _forward_diff(illumination)
    rx, ry = _forward_diff(gt)
    rx = rx.abs().amax(dim=-3, keepdim=True)
    ry = ry.abs().amax(dim=-3, keepdim=True)
    wx = lx.abs() * torch.exp(-eta * rx)
    wy = ly.abs() * torch.exp(-eta * ry)
    return 0.5 * (wx.mean() + wy.mean())


def la_full_loss(enhanced, gt, illumination=None, eta: float = 10.0) -> LossReport:
    """l1(R, gt) + l_smooth(L); the smoothness term is skipped when L is None."""
    _check_shapes((enhanced, gt))
    comps = {"l_1": F.l1_loss(enhanced, gt)}
    if illumination is not None:
        comps["l_smooth"] = smooth_loss(illumination, gt, eta)
    return LossReport(sum(comps.values()), comps)
