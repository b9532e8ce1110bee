"""Low-photon-count raw imaging simulation.

Pipeline: RGB ground truth -> RGGB mosaic -> Poisson photon counts plus
Gaussian readout noise -> per-image scaling to 0..255 -> bilinear demosaic.
Dark current is not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import convolve

CFA_PATTERN = "RGGB"

# channel index sampled at (row % 2, col % 2)
_RGGB = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}

_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


class DimensionError(ValueError):
    """Image dimensions incompatible with the requested operation."""


class DegenerateMeanError(ValueError):
    """Mosaic mean is zero, so photon-level normalisation is undefined."""


@dataclass(frozen=True)
class PhotonSimParams:
    ppp: float
    read_noise_sigma: float = 0.25
    quantum_efficiency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.ppp > 0:
            raise ValueError(f"ppp must be positive, got {self.ppp}")
        if self.read_noise_sigma < 0:
            raise ValueError("read_noise_sigma must be non-negative")
        if not 0 < self.quantum_efficiency <= 1:
            raise ValueError("quantum_efficiency must lie in (0, 1]")


@dataclass
class RawBayerImage:
    """Single-channel mosaic with values in [0, 255]."""

    data: np.ndarray
    pattern: str = CFA_PATTERN

    @property
    def shape(self):
        return self.data.shape


def cfa_masks(height: int, width: int) -> np.ndarray:
    """Boolean (3, H, W) masks marking which channel each site samples."""
    masks = np.zeros((3, height, width), dtype=bool)
    for (dy, dx), ch in _RGGB.items():
        masks[ch, dy::2, dx::2] = True
    return masks


def _check_even(shape):
    h, w = shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(f"Bayer operations need even dimensions, got {h}x{w}")


def mosaic_bayer(img: np.ndarray) -> np.ndarray:
    """Sample an H x W x 3 image on an RGGB lattice, returning an H x W array."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected H x W x 3 image, got shape {img.shape}")
    _check_even(img.shape)
    out = np.empty(img.shape[:2], dtype=np.float64)
    for (dy, dx), ch in _RGGB.items():
        out[dy::2, dx::2] = img[dy::2, dx::2, ch]
    return out


def simulate_photon_capture(bayer: np.ndarray, params: PhotonSimParams,
                            rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw photon counts for a [0, 1] mosaic at mean level ``params.ppp``.

    Counts are Poisson(bayer / mean(bayer) * ppp * qe) plus N(0, sigma) readout
    noise, so values can be slightly negative.
    """
    bayer = np.asarray(bayer, dtype=np.float64)
    mean = bayer.mean()
    if not mean > 0:
        raise DegenerateMeanError("mosaic has zero mean; cannot normalise photon level")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    lam = bayer / mean * params.ppp * params.quantum_efficiency
    counts = rng.poisson(lam).astype(np.float64)
    if params.read_noise_sigma > 0:
        counts += rng.normal(0.0, params.read_noise_sigma, size=counts.shape)
    return counts


def scale_to_8bit(counts: np.ndarray) -> RawBayerImage:
    """Clamp negatives to zero and scale by the per-image maximum onto [0, 255]."""
    counts = np.clip(np.asarray(counts, dtype=np.float64), 0.0, None)
    peak = counts.max() if counts.size else 0.0
    if peak <= 0:
        return RawBayerImage(np.zeros_like(counts))
    return RawBayerImage(np.clip(counts / peak * 255.0, 0.0, 255.0))


def demosaic_bilinear(raw: RawBayerImage | np.ndarray) -> np.ndarray:
    """Bilinear RGGB demosaic returning an H x W x 3 image in [0, 1].

    Implemented as normalised convolution: each channel's sparse samples and
    its sampling mask are filtered with the same stencil (edge-replicated),
    and the ratio fills missing sites. Sampled sites keep their exact value.
    """
    data = raw.data if isinstance(raw, RawBayerImage) else np.asarray(raw, dtype=np.float64)
    _check_even(data.shape)
    masks = cfa_masks(*data.shape)
    out = np.empty(data.shape + (3,), dtype=np.float64)
    for ch in range(3):
        kernel = _KERNEL_G if ch == 1 else _KERNEL_RB
        mask = masks[ch].astype(np.float64)
        num = convolve(data * mask, kernel, mode="nearest")
        den = convolve(mask, kernel, mode="nearest")
        out[..., ch] = np.where(masks[ch], data, num / den)
    return np.clip(out / 255.0, 0.0, 1.0)


def synthesize_raw(gt: np.ndarray, params: PhotonSimParams,
                   rng: np.random.Generator | None = None) -> RawBayerImage:
    """Ground truth RGB to the scaled raw mosaic (before demosaicing)."""
    return scale_to_8bit(simulate_photon_capture(mosaic_bayer(gt), params, rng))


def synthesize_low_photon(gt: np.ndarray, params: PhotonSimParams,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Degrade a clean RGB image to a demosaiced low-photon-count observation."""
    return demosaic_bilinear(synthesize_raw(gt, params, rng))


def synthesize_underexposure(gt: np.ndarray, factor: float | None = None,
                             seed: int | None = None,
                             factor_range: tuple[float, float] = (0.1, 0.9)) -> np.ndarray:
    """Darken an image by scaling its HSV value channel.

    If ``factor`` is None it is drawn uniformly from ``factor_range`` with ``seed``.
    """
    lo, hi = factor_range
    if factor is None:
        factor = np.random.default_rng(seed).uniform(lo, hi)
    if not lo <= factor <= hi:
        raise ValueError(f"underexposure factor {factor} outside [{lo}, {hi}]")
    hsv = rgb_to_hsv(np.clip(np.asarray(gt, dtype=np.float64), 0.0, 1.0))
    hsv[..., 2] *= factor
    return hsv_to_rgb(hsv)
