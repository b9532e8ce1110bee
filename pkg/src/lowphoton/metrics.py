"""PSNR/SSIM and per-photon-level evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .imaging_sim import PhotonSimParams, synthesize_low_photon
from .losses import ssim

PSNR_CAP = 100.0


def psnr(x, y, peak: float = 1.0) -> float:
    """PSNR in dB on float images; identical inputs give the 100 dB cap."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse)))


def _to_nchw(img) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(img, dtype=np.float64))
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t.permute(2, 0, 1)[None]
    return t


def ssim_metric(x, y) -> float:
    """Mean SSIM of two H x W (x 3) images in [0, 1]."""
    if np.shape(x) != np.shape(y):
        raise ValueError(f"shape mismatch: {np.shape(x)} vs {np.shape(y)}")
    return float(ssim(_to_nchw(x), _to_nchw(y)))


@dataclass
class BucketStats:
    psnr: float
    ssim: float
    n_images: int
    lpips: float | None = None


@dataclass
class EvalReport:
    per_ppp: dict[float, BucketStats] = field(default_factory=dict)
    aggregate: BucketStats | None = None
    seed: int = 0
    label: str = ""

    def to_dict(self):
        return {
            "label": self.label,
            "seed": self.seed,
            "per_ppp": {str(k): asdict(v) for k, v in self.per_ppp.items()},
            "aggregate": asdict(self.aggregate) if self.aggregate else None,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text


def synthesis_seed(seed: int, image_index: int, ppp_index: int) -> int:
    """Independent, reproducible seed for one (image, photon level) pair."""
    return int(np.random.SeedSequence([seed, image_index, ppp_index]).generate_state(1)[0])


def evaluate_model(chain: Callable[[np.ndarray], np.ndarray] | None,
                   dataset: Sequence[np.ndarray], ppp_grid: Iterable[float], seed: int = 0,
                   bypass_noise: bool = False, read_noise_sigma: float = 0.25,
                   lpips_fn: Callable | None = None, label: str = "") -> EvalReport:
    """Synthesize degraded inputs for every (image, ppp), restore with ``chain``
    and bucket PSNR/SSIM (and optionally LPIPS) by photon level.

    ``chain=None`` scores the degraded inputs themselves. ``bypass_noise``
    feeds the clean images instead (the ppp -> infinity limit).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    ppp_grid = list(ppp_grid)
    report = EvalReport(seed=seed, label=label)
    all_p, all_s, all_l = [], [], []
    for j, ppp in enumerate(ppp_grid):
        ps, ss, ls = [], [], []
        for i, gt in enumerate(dataset):
            if bypass_noise:
                noisy = gt
            else:
                params = PhotonSimParams(ppp=ppp, read_noise_sigma=read_noise_sigma,
                                         seed=synthesis_seed(seed, i, j))
                noisy = synthesize_low_photon(gt, params)
            out = noisy if chain is None else chain(noisy)
            ps.append(psnr(out, gt))
            ss.append(ssim_metric(out, gt))
            if lpips_fn is not None:
                ls.append(float(lpips_fn(out, gt)))
        report.per_ppp[ppp] = BucketStats(float(np.mean(ps)), float(np.mean(ss)), len(ps),
                                          float(np.mean(ls)) if ls else None)
        all_p += ps
        all_s += ss
        all_l += ls
    report.aggregate = BucketStats(float(np.mean(all_p)), float(np.mean(all_s)), len(all_p),
                                   float(np.mean(all_l)) if all_l else None)
    return report


def make_lpips():
    """LPIPS callable on H x W x 3 arrays; needs the optional ``lpips`` package
    and its pretrained backbone."""
    try:
        import lpips
    except ImportError as exc:
        raise RuntimeError("LPIPS requested but the 'lpips' package is not installed") from exc
    net = lpips.LPIPS(net="alex", verbose=False)

    def fn(x, y):
        with torch.no_grad():
            a = _to_nchw(x).float() * 2 - 1
            b = _to_nchw(y).float() * 2 - 1
            return float(net(a, b).mean())

    return fn
