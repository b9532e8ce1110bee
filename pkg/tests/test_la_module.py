import numpy as np
import pytest
import torch
from torch import nn

from gradcheck import finite_difference_check
from lowphoton.imaging_sim import DimensionError
from lowphoton.la_module import LAConfig, LAModule, adjust
from lowphoton.losses import la_full_loss
from lowphoton.nn_blocks import ConfigurationError, count_params
from lowphoton.training import RunConfig, train_la


def test_illumination_shape_and_range():
    torch.manual_seed(0)
    la = LAModule()
    x = torch.rand(2, 3, 32, 24)
    L = la.estimate_illumination(x)
    assert L.shape == (2, 1, 32, 24)
    assert L.min() >= 0.01 and L.max() <= 1


def test_epsilon_floor():
    la = LAModule()
    nn.init.zeros_(la.head.weight)
    nn.init.constant_(la.head.bias, -50.0)
    L = la.estimate_illumination(torch.rand(1, 3, 16, 16))
    torch.testing.assert_close(L, torch.full_like(L, 0.01))


def test_every_encoder_stage_gets_gradient():
    torch.manual_seed(1)
    la = LAModule()
    x, gt = torch.rand(2, 3, 32, 32) * 0.4, torch.rand(2, 3, 32, 32)
    R, L = la(x)
    la_full_loss(R, gt, L).total.backward()
    for stage in [la.stem, *la.encoder]:
        grad = sum(p.grad.abs().sum() for p in stage.parameters())
        assert grad > 0


def test_dimension_error():
    with pytest.raises(DimensionError):
        LAModule()(torch.rand(1, 3, 20, 16))


def test_adjust_identity_and_scalar():
    img = torch.rand(1, 3, 8, 8)
    torch.testing.assert_close(adjust(img, torch.ones(1, 1, 8, 8)), img, rtol=0, atol=0)
    torch.testing.assert_close(adjust(img, torch.full((1, 1, 8, 8), 0.5)), (2 * img).clamp(0, 1))
    once = adjust(img, torch.ones(1, 1, 8, 8))
    torch.testing.assert_close(adjust(once, torch.ones(1, 1, 8, 8)), once, rtol=0, atol=0)


def test_adjust_preserves_ratios_and_never_darkens():
    g = torch.Generator().manual_seed(2)
    img = torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64) * 0.5 + 0.01
    L = torch.rand(1, 1, 32, 32, generator=g, dtype=torch.float64) * 0.99 + 0.01
    raw = adjust(img, L, clamp=False)
    out = adjust(img, L)
    assert (raw >= img).all()
    unclipped = (raw <= 1).all(dim=1, keepdim=True).expand_as(img)
    ratio_in = img / img[:, 1:2]
    ratio_out = out / out[:, 1:2]
    assert unclipped.any()
    torch.testing.assert_close(ratio_out[unclipped], ratio_in[unclipped], rtol=1e-10, atol=0)
    mask = unclipped[:, 0]
    assert torch.equal(out.argmax(1)[mask], img.argmax(1)[mask])


def test_residual_variant_identity_and_sizes():
    res = LAModule(variant="residual")
    x = torch.rand(1, 3, 16, 16)
    R, L = res(x)
    assert L is None
    torch.testing.assert_close(R, x, rtol=0, atol=0)
    with pytest.raises(ConfigurationError):
        res.estimate_illumination(x)
    illum = count_params(LAModule())
    assert count_params(res) > illum
    # one 3x3 head over 16 channels with 3 outputs instead of 1
    assert count_params(res) - illum == 2 * (9 * 16 + 1)
    assert abs(illum / 0.3149e6 - 1) < 0.15


def test_bad_config():
    with pytest.raises(ConfigurationError):
        LAConfig(variant="other")
    with pytest.raises(ConfigurationError):
        LAConfig(encoder_channels=(16, 30))


def test_gradient_matches_finite_differences():
    torch.manual_seed(3)
    la = LAModule()
    x = torch.rand(1, 3, 16, 16) * 0.5

    def objective(m, xs):
        R, L = m(xs[0])
        return L.sum() + (R * R).sum()

    for name, idx, ad, fd, rel in finite_difference_check(la, [x], n_params=10, seed=3,
                                                          objective=objective):
        assert rel < 1e-3, (name, idx, ad, fd)


def _natural(n, size, seed):
    from lowphoton.data import SAMPLE_TRAIN, _sample_sources, sample_patches
    return sample_patches(_sample_sources(SAMPLE_TRAIN[:2]), n, size, seed)


def test_identity_targets_drive_illumination_to_one():
    imgs = [im * 0.8 for im in _natural(8, 32, 0)]
    cfg = RunConfig.toy("train-la", crop_size=32, batch_size=4, epochs=40,
                        underexposure_range=(1.0, 1.0), seed=0)
    model = train_la(cfg, imgs).model
    L = model.estimate_illumination(torch.from_numpy(
        np.stack(imgs).astype(np.float32)).permute(0, 3, 1, 2)).detach()
    assert (1 - L).abs().max() < 0.05


def test_smoothness_keeps_illumination_edges_at_structure():
    torch.manual_seed(0)
    gt = torch.zeros(1, 3, 32, 32)
    gt[..., :16] = torch.tensor([0.8, 0.3, 0.2]).view(1, 3, 1, 1)
    gt[..., 16:] = torch.tensor([0.2, 0.4, 0.9]).view(1, 3, 1, 1)
    factor = torch.ones(1, 1, 32, 32)
    factor[..., :16] = 0.3
    factor[..., 16:] = 0.8
    dark = gt * factor
    la = LAModule()
    opt = torch.optim.Adam(la.parameters(), lr=1e-3)
    for _ in range(150):
        R, L = la(dark)
        loss = la_full_loss(R, gt, L).total
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        L = la.estimate_illumination(dark)[0, 0]
    grad = (L[:, 1:] - L[:, :-1]).abs()
    boundary = grad[:, 15].mean()
    interior = torch.cat([grad[:, :14], grad[:, 17:]], dim=1).mean()
    assert boundary >= 5 * interior
