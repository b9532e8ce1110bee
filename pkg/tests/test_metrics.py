import json
import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from lowphoton.metrics import (PSNR_CAP, EvalReport, evaluate_model, psnr, ssim_metric,
                               synthesis_seed)


def test_psnr_against_skimage():
    rng = np.random.default_rng(0)
    x = rng.random((16, 16, 3))
    y = np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
    assert psnr(y, x) == pytest.approx(peak_signal_noise_ratio(x, y, data_range=1.0), abs=1e-9)


def test_psnr_known_value_and_cap():
    x = np.zeros((4, 4))
    assert psnr(x + 0.1, x) == pytest.approx(20.0)
    assert psnr(x, x) == PSNR_CAP


def test_ssim_metric_against_skimage():
    rng = np.random.default_rng(1)
    x = rng.random((32, 32, 3))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    ref = structural_similarity(x, y, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0, channel_axis=-1)
    assert ssim_metric(y, x) == pytest.approx(ref, abs=1e-6)


def test_synthesis_seed_distinct_and_stable():
    seeds = {synthesis_seed(0, i, j) for i in range(20) for j in range(10)}
    assert len(seeds) == 200
    assert synthesis_seed(3, 1, 2) == synthesis_seed(3, 1, 2)


@pytest.fixture(scope="module")
def images():
    rng = np.random.default_rng(2)
    return [rng.random((32, 32, 3)) * 0.6 + 0.2 for _ in range(3)]


def test_evaluate_model_buckets(images):
    report = evaluate_model(None, images, [1, 4], seed=0)
    assert set(report.per_ppp) == {1, 4}
    assert all(b.n_images == 3 for b in report.per_ppp.values())
    assert report.aggregate.n_images == 6
    assert report.aggregate.psnr == pytest.approx(
        np.mean([b.psnr for b in report.per_ppp.values()]))


def test_evaluate_model_bypass_and_identity(images):
    clean = evaluate_model(None, images, [1], bypass_noise=True)
    assert clean.per_ppp[1].psnr == PSNR_CAP
    # a chain that ignores its input and returns ground truth scores perfectly
    lookup = iter(images)
    oracle = evaluate_model(lambda _: next(lookup), images, [1])
    assert oracle.per_ppp[1].ssim == pytest.approx(1.0)


def test_evaluate_model_deterministic(images):
    a = evaluate_model(None, images, [2], seed=5).to_dict()
    b = evaluate_model(None, images, [2], seed=5).to_dict()
    assert a == b
    c = evaluate_model(None, images, [2], seed=6).to_dict()
    assert a != c


def test_evaluate_model_lpips_hook(images):
    report = evaluate_model(None, images, [1], lpips_fn=lambda x, y: 0.25)
    assert report.per_ppp[1].lpips == 0.25


def test_empty_dataset():
    with pytest.raises(ValueError):
        evaluate_model(None, [], [1])


def test_report_json_roundtrip(tmp_path, images):
    report = evaluate_model(None, images, [1, 2], seed=0, label="noisy")
    path = tmp_path / "r.json"
    text = report.to_json(path)
    data = json.loads(path.read_text())
    assert json.loads(text) == data
    assert data["label"] == "noisy"
    assert math.isclose(data["aggregate"]["psnr"], report.aggregate.psnr)
    assert isinstance(report, EvalReport)
