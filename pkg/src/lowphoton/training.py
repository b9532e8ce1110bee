"""Run configuration and the training loops for both networks."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import augment
from .imaging_sim import PhotonSimParams, synthesize_low_photon, synthesize_underexposure
from .la_module import LAConfig, LAModule
from .losses import (MPDLossWeights, PerceptualLoss, PerceptualUnavailableError, la_full_loss,
                     mpd_full_loss)
from .metrics import psnr
from .mpdnet import MPDNet, MPDNetConfig

log = logging.getLogger(__name__)

STAGES = ("train-denoiser", "train-la", "evaluate", "synthesize", "ablate")
STAGE_DEFAULTS = {
    "train-denoiser": {"epochs": 150, "lr_period": 30},
    "train-la": {"epochs": 80, "lr_period": 20},
}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class RunConfig:
    stage: str = "train-denoiser"
    data_dirs: dict = field(default_factory=dict)
    manifest: str | None = None
    output_dir: str = "runs"
    crop_size: int = 256
    batch_size: int = 16
    epochs: int | None = None
    lr: float = 1e-3
    lr_decay: float = 0.8
    lr_period: int | None = None
    ppp_range: tuple[float, float] = (1.0, 10.0)
    read_noise_sigma: float = 0.25
    underexposure_range: tuple[float, float] = (0.1, 0.9)
    seed: int = 0
    ablation: str = "full"
    k_sharpness: float = 1.0
    channel_schedule: tuple[int, ...] = (32, 64, 128, 256)
    la_channels: tuple[int, ...] = (16, 32, 64, 128)
    la_variant: str = "illumination"
    eta: float = 10.0
    high_freq_loss: bool = True
    ssim_loss: bool = True
    # "on" requires pretrained weights, "auto" uses them when present
    perceptual_loss: str = "auto"
    perceptual_weights: str | None = None
    deterministic: bool = False
    val_seed: int = 12345
    # degraded versions per validation image, each at its own seeded ppp
    val_syntheses: int = 4

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        defaults = STAGE_DEFAULTS.get(self.stage, STAGE_DEFAULTS["train-denoiser"])
        if self.epochs is None:
            self.epochs = defaults["epochs"]
        if self.lr_period is None:
            self.lr_period = defaults["lr_period"]
        self.ppp_range = tuple(float(v) for v in self.ppp_range)
        self.underexposure_range = tuple(float(v) for v in self.underexposure_range)
        self.channel_schedule = tuple(int(c) for c in self.channel_schedule)
        self.la_channels = tuple(int(c) for c in self.la_channels)
        if self.crop_size % 8:
            raise ValueError(f"crop_size must be divisible by 8, got {self.crop_size}")
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.epochs <= 0 or self.lr_period <= 0 or self.batch_size <= 0:
            raise ValueError("epochs, lr_period and batch_size must be positive")
        if self.val_syntheses <= 0:
            raise ValueError("val_syntheses must be positive")
        if self.perceptual_loss not in ("on", "off", "auto"):
            raise ValueError("perceptual_loss must be 'on', 'off' or 'auto'")

    @classmethod
    def toy(cls, stage: str = "train-denoiser", **overrides) -> "RunConfig":
        """Desk-scale budget: 96x96 crops, 30 epochs."""
        params = {"stage": stage, "crop_size": 96, "epochs": 30}
        params.update(overrides)
        return cls(**params)

    @classmethod
    def from_json(cls, path, **overrides) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown RunConfig keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    def lr_at(self, epoch: int) -> float:
        """Step decay: lr * decay ** floor(epoch / period), epochs counted from 0."""
        return self.lr * self.lr_decay ** (epoch // self.lr_period)

    def mpdnet_config(self) -> MPDNetConfig:
        return MPDNetConfig(channel_schedule=self.channel_schedule, k_sharpness=self.k_sharpness,
                            ablation=self.ablation)

    def la_config(self) -> LAConfig:
        return LAConfig(encoder_channels=self.la_channels, variant=self.la_variant)


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[dict]
    best_val_psnr: float
    best_epoch: int
    checkpoint: Path | None = None
    seconds: float = 0.0


def to_tensor(images) -> torch.Tensor:
    """List of H x W x 3 arrays -> float32 NCHW tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def to_image(t: torch.Tensor) -> np.ndarray:
    """CHW (or 1xCxHxW) tensor -> H x W x C float64 array."""
    if t.dim() == 4:
        t = t[0]
    return t.detach().permute(1, 2, 0).cpu().double().numpy()


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def degrade(gt: np.ndarray, config: RunConfig, *seed_parts) -> tuple[np.ndarray, float]:
    """Low-photon synthesis at a ppp drawn uniformly from ``config.ppp_range``."""
    rng = np.random.default_rng(_seed(*seed_parts))
    ppp = float(rng.uniform(*config.ppp_range))
    params = PhotonSimParams(ppp=ppp, read_noise_sigma=config.read_noise_sigma,
                             seed=_seed(*seed_parts, 1))
    return synthesize_low_photon(gt, params), ppp


def underexpose(gt: np.ndarray, config: RunConfig, *seed_parts) -> np.ndarray:
    lo, hi = config.underexposure_range
    factor = float(np.random.default_rng(_seed(*seed_parts)).uniform(lo, hi))
    return synthesize_underexposure(gt, factor, factor_range=(lo, hi))


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    size_h, size_w = min(size, h - h % 8), min(size, w - w % 8)
    y, x = (h - size_h) // 2, (w - size_w) // 2
    return img[y:y + size_h, x:x + size_w]


def _batches(config: RunConfig, images, epoch: int):
    """Augmented ground-truth batches for one epoch, in a seeded order."""
    order = np.random.default_rng(_seed(config.seed, epoch)).permutation(len(images))
    crops = []
    for idx in order:
        crop = augment(images[idx], (config.seed, epoch, int(idx)), config.crop_size)
        if crop is None:
            continue
        crops.append((int(idx), crop))
    for start in range(0, len(crops), config.batch_size):
        yield crops[start:start + config.batch_size]


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _check_finite(report, epoch):
    if not math.isfinite(float(report.total.detach())):
        raise TrainingDivergedError(f"non-finite loss at epoch {epoch}: {report.item_dict()}")


def _append_log(path, record):
    if path is None:
        return
    with open(path, "a") as f:
        f.write(json.dumps(record) + "\n")


def _prepare(config: RunConfig, out_dir, log_name):
    torch.manual_seed(config.seed)
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / log_name
    return out_dir, log_path


def resolve_perceptual(config: RunConfig) -> PerceptualLoss | None:
    if config.perceptual_loss == "off":
        return None
    try:
        return PerceptualLoss(weights_path=config.perceptual_weights)
    except PerceptualUnavailableError:
        if config.perceptual_loss == "on":
            raise
        log.warning("perceptual loss disabled: pretrained extractor weights not found")
        return None


def validation_set_denoiser(config: RunConfig, images):
    pairs = []
    for i, gt in enumerate(images):
        gt = center_crop(gt, config.crop_size)
        for j in range(config.val_syntheses):
            noisy, _ = degrade(gt, config, config.val_seed, i, j)
            pairs.append((noisy, gt))
    return pairs


def train_denoiser(config: RunConfig, train_images, val_images=(), out_dir=None,
                   model: MPDNet | None = None) -> TrainResult:
    """Adam on the full MPDNet loss with degraded inputs synthesized per batch.

    The model with the best validation PSNR is kept (the last one if no
    validation images are given).
    """
    out_dir, log_path = _prepare(config, out_dir, "train_denoiser.jsonl")
    model = model or MPDNet(config.mpdnet_config())
    perceptual = resolve_perceptual(config)
    terms = MPDLossWeights(high_freq=config.high_freq_loss, ssim=config.ssim_loss,
                           perceptual=perceptual is not None)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    val_pairs = validation_set_denoiser(config, val_images)

    history, best_state, best_psnr, best_epoch = [], None, -math.inf, -1
    start = time.time()
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        _set_lr(optimizer, lr)
        model.train()
        sums, steps = {}, 0
        for batch in _batches(config, train_images, epoch):
            gts, noisy = [], []
            for idx, crop in batch:
                inp, _ = degrade(crop, config, config.seed, epoch, idx)
                gts.append(crop)
                noisy.append(inp)
            x, y = to_tensor(noisy), to_tensor(gts)
            report = mpd_full_loss(model(x), y, perceptual, terms)
            _check_finite(report, epoch)
            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()
            for name, v in report.item_dict().items():
                sums[name] = sums.get(name, 0.0) + v
            steps += 1
        record = {"epoch": epoch, "lr": lr, "synthesis": "on-the-fly",
                  "losses": {k: v / max(steps, 1) for k, v in sums.items()}}
        if val_pairs:
            record["val_psnr"] = float(np.mean([
                psnr(to_image(model.denoise(to_tensor([n])).o_full), g) for n, g in val_pairs]))
            score = record["val_psnr"]
        else:
            score = epoch
        if score > best_psnr:
            best_psnr, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())
        history.append(record)
        _append_log(log_path, record)
        log.info("denoiser epoch %d lr %.2e %s", epoch, lr, record)

    model.load_state_dict(best_state)
    model.eval()
    ckpt = None
    meta = {"run_config": config.to_dict(), "best_epoch": best_epoch,
            "perceptual": perceptual.identity if perceptual else None}
    if out_dir is not None:
        ckpt = save_checkpoint(model, out_dir / "denoiser.pt", meta)
    return TrainResult(model, history, best_psnr if val_pairs else math.nan, best_epoch, ckpt,
                       time.time() - start)


def train_la(config: RunConfig, train_images, val_images=(), out_dir=None,
             model: LAModule | None = None) -> TrainResult:
    """Train the luminance adjustment module on V-channel underexposed inputs."""
    out_dir, log_path = _prepare(config, out_dir, "train_la.jsonl")
    model = model or LAModule(config.la_config())
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    val_pairs = [(underexpose(center_crop(g, config.crop_size), config, config.val_seed, i),
                  center_crop(g, config.crop_size)) for i, g in enumerate(val_images)]

    history, best_state, best_psnr, best_epoch = [], None, -math.inf, -1
    start = time.time()
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        _set_lr(optimizer, lr)
        model.train()
        sums, steps = {}, 0
        for batch in _batches(config, train_images, epoch):
            gts = [crop for _, crop in batch]
            dark = [underexpose(crop, config, config.seed, epoch, idx) for idx, crop in batch]
            x, y = to_tensor(dark), to_tensor(gts)
            enhanced, illum = model(x)
            report = la_full_loss(enhanced, y, illum, config.eta)
            _check_finite(report, epoch)
            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()
            for name, v in report.item_dict().items():
                sums[name] = sums.get(name, 0.0) + v
            steps += 1
        record = {"epoch": epoch, "lr": lr,
                  "losses": {k: v / max(steps, 1) for k, v in sums.items()}}
        if val_pairs:
            record["val_psnr"] = float(np.mean([
                psnr(to_image(model.enhance(to_tensor([d]))), g) for d, g in val_pairs]))
            score = record["val_psnr"]
        else:
            score = epoch
        if score > best_psnr:
            best_psnr, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())
        history.append(record)
        _append_log(log_path, record)
        log.info("LA epoch %d lr %.2e %s", epoch, lr, record)

    model.load_state_dict(best_state)
    model.eval()
    ckpt = None
    if out_dir is not None:
        ckpt = save_checkpoint(model, out_dir / "la.pt",
                               {"run_config": config.to_dict(), "best_epoch": best_epoch})
    return TrainResult(model, history, best_psnr if val_pairs else math.nan, best_epoch, ckpt,
                       time.time() - start)
