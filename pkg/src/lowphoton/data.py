"""Image I/O, dataset manifests and augmentation."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .imaging_sim import RawBayerImage

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
SPLITS = ("train", "val", "test")
# raw mosaics are stored as 8.8 fixed point in 16-bit PNGs
RAW_SCALE = 256


class DatasetError(RuntimeError):
    pass


class IntegrityError(DatasetError):
    pass


def read_rgb(path) -> np.ndarray:
    """Decode an image file to H x W x 3 float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            return np.asarray(im, dtype=np.float64) / 255.0
    except Exception as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def write_rgb(path, img: np.ndarray):
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def write_raw(path, raw: RawBayerImage, meta: dict | None = None):
    """Save a [0, 255] mosaic as a 16-bit PNG plus a JSON sidecar."""
    path = Path(path)
    arr = np.clip(np.round(raw.data * RAW_SCALE), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)
    sidecar = {"pattern": raw.pattern, "scale": RAW_SCALE, "shape": list(arr.shape)}
    sidecar.update(meta or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_raw(path) -> tuple[RawBayerImage, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    return RawBayerImage(arr / meta.get("scale", RAW_SCALE), meta.get("pattern", "RGGB")), meta


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class ManifestEntry:
    path: str
    split: str
    digest: str | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise DatasetError(f"unknown split {e.split!r} for {e.path}")
            if seen.setdefault(e.path, e.split) != e.split:
                raise DatasetError(f"{e.path} appears in splits {seen[e.path]} and {e.split}")

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split == name])

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_dirs(cls, with_digest: bool = True, **dirs) -> "DatasetManifest":
        """``from_dirs(train="a/", test="b/")``: every image in each directory."""
        entries = []
        for split, d in dirs.items():
            if d is None:
                continue
            for p in list_images(d):
                entries.append(ManifestEntry(str(p), split, file_digest(p) if with_digest else None))
        return cls(entries)

    def save(self, path):
        """Paths under the manifest's directory are stored relative to it."""
        root = Path(path).resolve().parent
        data = []
        for e in self.entries:
            p = Path(e.path).resolve()
            rel = p.relative_to(root) if p.is_relative_to(root) else p
            data.append({"path": str(rel), "split": e.split, "digest": e.digest})
        Path(path).write_text(json.dumps(data, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        root = Path(path).resolve().parent
        entries = []
        for d in json.loads(Path(path).read_text()):
            d["path"] = str(root / d["path"])
            entries.append(ManifestEntry(**d))
        return cls(entries)


def load_dataset(manifest: DatasetManifest, seed: int | None = None):
    """Yield decoded images, checking digests. Order is the manifest order, or
    a seeded permutation of it."""
    order = np.arange(len(manifest.entries))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(order)
    for i in order:
        e = manifest.entries[i]
        if not Path(e.path).is_file():
            raise DatasetError(f"missing image {e.path}")
        if e.digest is not None and file_digest(e.path) != e.digest:
            raise IntegrityError(f"digest mismatch for {e.path}")
        yield read_rgb(e.path)


def augment(img: np.ndarray, seed, crop_size: int = 256, flip: bool = True) -> np.ndarray | None:
    """Uniform random crop and 50% horizontal flip, deterministic in ``seed``
    (an int or a sequence such as ``(seed, epoch, index)``).

    Returns None, with a warning, if the image is smaller than the crop.
    """
    h, w = img.shape[:2]
    if h < crop_size or w < crop_size:
        log.warning("skipping %dx%d image smaller than crop %d", h, w, crop_size)
        return None
    rng = np.random.default_rng(seed)
    y = int(rng.integers(0, h - crop_size + 1))
    x = int(rng.integers(0, w - crop_size + 1))
    out = img[y:y + crop_size, x:x + crop_size]
    if flip and rng.random() < 0.5:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


# ordinary photographs only; test sources never appear in training
SAMPLE_TRAIN = ("astronaut", "rocket", "motorcycle_left", "motorcycle_right", "camera", "brick",
                "grass", "gravel")
SAMPLE_TEST = ("chelsea", "coffee")


def _load_sample(name):
    import skimage.data

    if name.startswith("motorcycle_"):
        left, right, _ = skimage.data.stereo_motorcycle()
        return left if name.endswith("left") else right
    return getattr(skimage.data, name)()


def _sample_sources(names):
    out = []
    for n in names:
        try:
            img = _load_sample(n)
        except Exception as exc:  # pragma: no cover - depends on skimage install
            log.warning("skimage sample %s unavailable: %s", n, exc)
            continue
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        img = np.asarray(img[..., :3], dtype=np.float64)
        out.append(img / 255.0 if img.max() > 1 else img)
    if not out:
        raise DatasetError("no skimage sample images available")
    return out


def sample_patches(sources, n: int, size: int, seed: int) -> list[np.ndarray]:
    """Random ``size`` x ``size`` patches, cycling through source images and
    rejecting nearly flat patches."""
    rng = np.random.default_rng(seed)
    patches = []
    attempts = 0
    while len(patches) < n:
        src = sources[attempts % len(sources)]
        attempts += 1
        h, w = src.shape[:2]
        if h < size or w < size:
            continue
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        patch = src[y:y + size, x:x + size]
        if patch.std() < 0.04 or patch.mean() < 0.05:
            if attempts < 50 * n:
                continue
        patches.append(np.ascontiguousarray(patch))
    return patches


def make_sample_dataset(out_dir, n_train: int = 50, n_val: int = 10, n_test: int = 20,
                        size: int = 128, seed: int = 0) -> DatasetManifest:
    """Write PNG patches cut from scikit-image's bundled photographs.

    Test patches come from photographs never used for train/val.
    """
    out_dir = Path(out_dir)
    train_src = _sample_sources(SAMPLE_TRAIN)
    test_src = _sample_sources(SAMPLE_TEST)
    pools = {
        "train": sample_patches(train_src, n_train, size, seed),
        "val": sample_patches(train_src, n_val, size, seed + 1),
        "test": sample_patches(test_src, n_test, size, seed + 2),
    }
    entries = []
    for split, imgs in pools.items():
        d = out_dir / split
        d.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(imgs):
            p = d / f"{split}_{i:04d}.png"
            write_rgb(p, img)
            entries.append(ManifestEntry(str(p), split, file_digest(p)))
    manifest = DatasetManifest(entries)
    manifest.save(out_dir / "manifest.json")
    return manifest
