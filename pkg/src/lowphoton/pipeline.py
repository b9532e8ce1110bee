"""End-to-end restoration chain and the ablation suite."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import LA_FORMAT, MPDNET_FORMAT, load_checkpoint
from .metrics import evaluate_model, psnr, ssim_metric
from .mpdnet import ABLATIONS
from .nn_blocks import count_params
from .training import (STAGE_DEFAULTS, RunConfig, center_crop, to_image, to_tensor, train_denoiser, train_la,
                       underexpose)

log = logging.getLogger(__name__)

LOSS_ABLATIONS = ("no_high_freq", "no_ssim", "no_perceptual")
LA_VARIANTS = ("illumination", "residual")


@dataclass
class RestoreResult:
    image: np.ndarray
    denoised: np.ndarray
    illumination: np.ndarray | None = None
    intermediates: dict = field(default_factory=dict)


def _model(obj, fmt):
    if obj is None or isinstance(obj, torch.nn.Module):
        return obj
    return load_checkpoint(obj, expect=fmt)[0]


def _pad8(x: torch.Tensor):
    h, w = x.shape[-2:]
    ph, pw = -h % 8, -w % 8
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x, (h, w)


def restore(img: np.ndarray, denoiser, la=None, k: float | None = None,
            keep_intermediates: bool = False) -> RestoreResult:
    """Denoise an H x W x 3 image in [0, 1], then optionally brighten it.

    ``denoiser`` and ``la`` may be modules or checkpoint paths. Inputs whose
    sides are not multiples of 8 are replicate-padded and cropped back.
    """
    denoiser = _model(denoiser, MPDNET_FORMAT)
    la = _model(la, LA_FORMAT)
    x, (h, w) = _pad8(to_tensor([img]))
    with torch.no_grad():
        out = denoiser.denoise(x, k)
        denoised = out.o_full
        result = denoised
        illum = None
        if la is not None:
            la.eval()
            result, illum = la(denoised)
    crop = lambda t: to_image(t)[:h, :w]
    res = RestoreResult(crop(result), crop(denoised),
                        None if illum is None else crop(illum)[..., 0])
    if keep_intermediates:
        res.intermediates = {name: to_image(getattr(out, name))
                             for name in ("o_quarter", "o_half", "h_half", "h_full")}
    return res


@dataclass
class AblationRow:
    name: str
    group: str
    params: int
    psnr: float
    ssim: float
    per_ppp: dict = field(default_factory=dict)
    note: str = ""


def _denoiser_row(name, group, config, train, val, test, ppp_grid, eval_seed):
    result = train_denoiser(config, train, val)
    model = result.model

    def chain(noisy):
        return restore(noisy, model).image

    report = evaluate_model(chain, test, ppp_grid, seed=eval_seed,
                            read_noise_sigma=config.read_noise_sigma, label=name)
    per_ppp = {p: {"psnr": b.psnr, "ssim": b.ssim} for p, b in report.per_ppp.items()}
    return AblationRow(name, group, count_params(model), report.aggregate.psnr,
                       report.aggregate.ssim, per_ppp)


def _la_row(variant, config, train, val, test, epochs):
    cfg = dataclasses.replace(config, stage="train-la", la_variant=variant, epochs=epochs,
                              lr_period=STAGE_DEFAULTS["train-la"]["lr_period"])
    model = train_la(cfg, train, val).model
    ps, ss = [], []
    for i, gt in enumerate(test):
        gt = center_crop(gt, cfg.crop_size)
        dark = underexpose(gt, cfg, cfg.val_seed + 1, i)
        with torch.no_grad():
            out = to_image(model.enhance(to_tensor([dark])))
        ps.append(psnr(out, gt))
        ss.append(ssim_metric(out, gt))
    return AblationRow(f"la_{variant}", "la", count_params(model), float(np.mean(ps)),
                       float(np.mean(ss)))


def run_ablation_suite(config: RunConfig, train, val, test, ppp_grid=(1, 4, 10),
                       variants=None, la_epochs: int | None = None,
                       eval_seed: int = 0) -> list[AblationRow]:
    """Train and score each requested variant under one shared budget.

    Structural variants swap the denoiser architecture, loss variants drop one
    training term, and the two LA variants are scored on the brightening task.
    """
    names = list(variants) if variants else [*ABLATIONS, *LOSS_ABLATIONS,
                                             *(f"la_{v}" for v in LA_VARIANTS)]
    rows = []
    for name in names:
        log.info("ablation %s", name)
        if name in ABLATIONS:
            cfg = dataclasses.replace(config, ablation=name)
            rows.append(_denoiser_row(name, "structure", cfg, train, val, test, ppp_grid,
                                      eval_seed))
        elif name in LOSS_ABLATIONS:
            note = ""
            if name == "no_high_freq":
                cfg = dataclasses.replace(config, high_freq_loss=False)
            elif name == "no_ssim":
                cfg = dataclasses.replace(config, ssim_loss=False)
            else:
                cfg = dataclasses.replace(config, perceptual_loss="off")
                if config.perceptual_loss != "on":
                    note = "same as full when no pretrained extractor is available"
            row = _denoiser_row(name, "loss", cfg, train, val, test, ppp_grid, eval_seed)
            row.note = note
            rows.append(row)
        elif name.startswith("la_") and name[3:] in LA_VARIANTS:
            rows.append(_la_row(name[3:], config, train, val, test,
                                la_epochs or config.epochs))
        else:
            raise ValueError(f"unknown ablation {name!r}")
    return rows


def direction_checks(rows: list[AblationRow]) -> dict[str, bool]:
    """Expected orderings, reported rather than enforced."""
    by = {r.name: r for r in rows}
    checks = {}
    if "full" in by:
        full = by["full"]
        for other in ("rb_blocks", "no_multiscale_inputs", "no_multilevel", *LOSS_ABLATIONS):
            if other in by:
                checks[f"full >= {other} (PSNR)"] = full.psnr >= by[other].psnr
        if "rb_blocks" in by:
            checks["full params < rb_blocks params"] = full.params < by["rb_blocks"].params
    return checks


def rows_to_csv(rows: list[AblationRow], path) -> Path:
    import csv

    path = Path(path)
    grid = sorted({p for r in rows for p in r.per_ppp})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "group", "params", "psnr", "ssim",
                         *(f"psnr@{p:g}" for p in grid), "note"])
        for r in rows:
            writer.writerow([r.name, r.group, r.params, f"{r.psnr:.4f}", f"{r.ssim:.4f}",
                             *(f"{r.per_ppp[p]['psnr']:.4f}" if p in r.per_ppp else ""
                               for p in grid), r.note])
    return path
