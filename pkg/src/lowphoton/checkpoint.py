"""Versioned checkpoint archives for both networks.

An archive is a torch-serialised dict holding a format tag ("mpdnet-v1" or
"la-v1"), the model config record, named weight tensors and free-form
metadata (training provenance, perceptual extractor identity, ...).
"""

from __future__ import annotations

from pathlib import Path

import torch

from .la_module import LAConfig, LAModule
from .mpdnet import MPDNet, MPDNetConfig

MPDNET_FORMAT = "mpdnet-v1"
LA_FORMAT = "la-v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model, path, meta: dict | None = None) -> Path:
    if isinstance(model, MPDNet):
        fmt = MPDNET_FORMAT
    elif isinstance(model, LAModule):
        fmt = LA_FORMAT
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": fmt,
        "config": model.config.to_dict(),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "meta": meta or {},
    }, path)
    return path


def load_checkpoint(path, expect: str | None = None):
    """Rebuild the model stored at ``path``; returns ``(model, meta)``."""
    try:
        archive = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    fmt = archive.get("format") if isinstance(archive, dict) else None
    if fmt not in (MPDNET_FORMAT, LA_FORMAT):
        raise CheckpointError(f"{path}: unrecognised checkpoint format {fmt!r}")
    if expect is not None and fmt != expect:
        raise CheckpointError(f"{path}: expected a {expect} checkpoint, found {fmt}")
    if fmt == MPDNET_FORMAT:
        model = MPDNet(MPDNetConfig(**archive["config"]))
    else:
        model = LAModule(LAConfig(**archive["config"]))
    try:
        model.load_state_dict(archive["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not match stored config: {exc}") from exc
    model.eval()
    return model, archive.get("meta", {})
