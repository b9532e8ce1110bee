import json

import numpy as np
import pytest
from scipy.stats import binomtest, chisquare

from lowphoton.data import (DatasetError, DatasetManifest, IntegrityError, ManifestEntry,
                            augment, list_images, load_dataset, make_sample_dataset, read_raw,
                            read_rgb, write_raw, write_rgb)
from lowphoton.imaging_sim import RawBayerImage


def test_rgb_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (9, 7, 3)) / 255.0
    write_rgb(tmp_path / "a.png", img)
    np.testing.assert_array_equal(read_rgb(tmp_path / "a.png"), img)


def test_raw_roundtrip_within_quantisation(tmp_path):
    data = np.random.default_rng(1).uniform(0, 255, (8, 8))
    write_raw(tmp_path / "r.png", RawBayerImage(data), {"ppp": 3.5, "seed": 9})
    back, meta = read_raw(tmp_path / "r.png")
    assert np.abs(back.data - data).max() <= 0.5 / 256 + 1e-12
    assert meta["ppp"] == 3.5 and meta["seed"] == 9 and back.pattern == "RGGB"
    assert json.loads((tmp_path / "r.json").read_text())["shape"] == [8, 8]


def _tree(tmp_path):
    rng = np.random.default_rng(2)
    for split, n in (("train", 3), ("test", 2)):
        (tmp_path / split).mkdir()
        for i in range(n):
            write_rgb(tmp_path / split / f"{i}.png", rng.random((8, 8, 3)))
    return DatasetManifest.from_dirs(train=tmp_path / "train", test=tmp_path / "test")


def test_manifest_from_dirs_and_roundtrip(tmp_path):
    m = _tree(tmp_path)
    assert len(m.split("train")) == 3 and len(m.split("test")) == 2
    m.save(tmp_path / "manifest.json")
    stored = json.loads((tmp_path / "manifest.json").read_text())
    assert not stored[0]["path"].startswith("/")
    again = DatasetManifest.load(tmp_path / "manifest.json")
    assert [len(list(load_dataset(again.split(s)))) for s in ("train", "test")] == [3, 2]


def test_manifest_rejects_leaks_and_bad_splits():
    with pytest.raises(DatasetError):
        DatasetManifest([ManifestEntry("a.png", "train"), ManifestEntry("a.png", "test")])
    with pytest.raises(DatasetError):
        DatasetManifest([ManifestEntry("a.png", "holdout")])


def test_integrity_and_missing(tmp_path):
    m = _tree(tmp_path)
    target = m.split("train").entries[0].path
    write_rgb(target, np.zeros((8, 8, 3)))
    with pytest.raises(IntegrityError):
        list(load_dataset(m.split("train")))
    with pytest.raises(DatasetError):
        list(load_dataset(DatasetManifest([ManifestEntry(str(tmp_path / "nope.png"), "val")])))


def test_load_dataset_seeded_order(tmp_path):
    m = _tree(tmp_path)
    a = [x.sum() for x in load_dataset(m, seed=1)]
    b = [x.sum() for x in load_dataset(m, seed=1)]
    assert a == b
    assert sorted(a) == sorted(x.sum() for x in load_dataset(m))


def test_augment_deterministic_and_small_images(caplog):
    img = np.random.default_rng(3).random((40, 40, 3))
    np.testing.assert_array_equal(augment(img, (0, 1, 2), 32), augment(img, (0, 1, 2), 32))
    assert augment(img, 0, 64) is None
    assert "smaller than crop" in caplog.text


def test_augment_full_size_crop_and_flip_involution():
    img = np.random.default_rng(4).random((32, 32, 3))
    out = augment(img, 5, 32, flip=False)
    np.testing.assert_array_equal(out, img)
    flipped = [s for s in range(20) if not np.array_equal(augment(img, s, 32), img)]
    assert flipped
    s = flipped[0]
    np.testing.assert_array_equal(augment(augment(img, s, 32), s, 32), img)


def test_augment_offsets_uniform_and_flip_balanced():
    h = w = 40
    crop = 32
    # encode position in the pixel values so the crop reveals its offset
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.stack([yy, xx, np.zeros_like(yy)], axis=-1).astype(float)
    ys, xs, flips = [], [], 0
    n = 10_000
    for s in range(n):
        out = augment(img, s, crop)
        flipped = out[0, 0, 1] > out[0, -1, 1]
        flips += flipped
        ys.append(int(out[0, 0, 0]))
        xs.append(int(out[0, -1 if flipped else 0, 1]))
    positions = h - crop + 1
    for offsets in (ys, xs):
        counts = np.bincount(offsets, minlength=positions)
        assert len(counts) == positions
        assert chisquare(counts).pvalue > 1e-3
    assert binomtest(flips, n, 0.5).pvalue > 1e-3


def test_list_images_filters(tmp_path):
    write_rgb(tmp_path / "b.png", np.zeros((2, 2, 3)))
    (tmp_path / "notes.txt").write_text("x")
    assert [p.name for p in list_images(tmp_path)] == ["b.png"]


def test_sample_dataset_splits_disjoint(tmp_path):
    m = make_sample_dataset(tmp_path, n_train=4, n_val=2, n_test=3, size=32, seed=0)
    assert [len(m.split(s)) for s in ("train", "val", "test")] == [4, 2, 3]
    imgs = {s: list(load_dataset(m.split(s))) for s in ("train", "test")}
    assert all(x.shape == (32, 32, 3) for x in imgs["train"] + imgs["test"])
    train_bytes = {x.tobytes() for x in imgs["train"]}
    assert not any(x.tobytes() in train_bytes for x in imgs["test"])
    assert (tmp_path / "manifest.json").is_file()
