"""Figures for the CLI reports. Everything renders to files via Agg."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _style(ax, title=None, xlabel=None, ylabel=None):
    ax.grid(True, alpha=0.3)
    ax.spines[["top", "right"]].set_visible(False)
    if title:
        ax.set_title(title, fontsize=10)
    if xlabel:
        ax.set_xlabel(xlabel)
    if ylabel:
        ax.set_ylabel(ylabel)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_curves(reports: dict, path) -> Path:
    """PSNR and SSIM against photons per pixel, one line per labelled report."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    for label, report in reports.items():
        ppp = sorted(report.per_ppp)
        a.plot(ppp, [report.per_ppp[p].psnr for p in ppp], marker="o", label=label)
        b.plot(ppp, [report.per_ppp[p].ssim for p in ppp], marker="o", label=label)
    _style(a, "PSNR", "photons per pixel", "dB")
    _style(b, "SSIM", "photons per pixel")
    a.legend(fontsize=8)
    return _save(fig, path)


def plot_history(history: list[dict], path, title="training") -> Path:
    epochs = [r["epoch"] for r in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    names = sorted({k for r in history for k in r["losses"]})
    for name in names:
        a.plot(epochs, [r["losses"].get(name, np.nan) for r in history], label=name)
    _style(a, f"{title} loss", "epoch")
    a.legend(fontsize=8)
    if any("val_psnr" in r for r in history):
        b.plot(epochs, [r.get("val_psnr", np.nan) for r in history], marker=".")
    _style(b, "validation PSNR", "epoch", "dB")
    return _save(fig, path)


def plot_ablation(rows, path) -> Path:
    names = [r.name for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(max(6, 1.1 * len(rows)), 3.8))
    a.bar(names, [r.psnr for r in rows], color="tab:blue")
    b.bar(names, [r.params / 1e6 for r in rows], color="tab:gray")
    _style(a, "mean PSNR", ylabel="dB")
    _style(b, "parameters", ylabel="millions")
    for ax in (a, b):
        ax.tick_params(axis="x", rotation=45, labelsize=8)
    lo = min(r.psnr for r in rows)
    a.set_ylim(lo - 1, max(r.psnr for r in rows) + 0.5)
    return _save(fig, path)


def plot_images(panels: dict, path, cols: int = 4) -> Path:
    """Grid of named H x W x 3 (or H x W) arrays. High-frequency maps are
    shown centred at mid-grey."""
    n = len(panels)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, min(cols, n), figsize=(3 * min(cols, n), 3 * rows),
                             squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (name, img) in zip(axes.flat, panels.items()):
        img = np.asarray(img, dtype=np.float64)
        if name.startswith("h_"):
            img = 0.5 + img / (2 * max(np.abs(img).max(), 1e-8))
        ax.imshow(np.clip(img, 0, 1), cmap="gray" if img.ndim == 2 else None,
                  interpolation="nearest")
        ax.set_title(name, fontsize=9)
    return _save(fig, path)
