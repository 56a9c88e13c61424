import math

import numpy as np
import pytest
import torch
from scipy import stats

from monoview.errors import DomainError, ValidationError
from monoview.field import FieldConfig, RadianceField
from monoview.geometry import CameraIntrinsics, CameraPose, look_at, strided_patch
from monoview.render import (RaySamples, RenderConfig, composite, importance_resample, pixel_loss, render_patch,
                             render_rays, render_rays_chunked, stratified_sample)

D64 = torch.float64


class ZeroField(torch.nn.Module):
    def forward(self, pos, dirs):
        return torch.zeros(pos.shape[0], dtype=pos.dtype), torch.full((pos.shape[0], 3), 0.3, dtype=pos.dtype)


def samples(t, far):
    t = torch.as_tensor(t, dtype=D64)
    far = torch.as_tensor(far, dtype=D64).reshape(-1)
    deltas = torch.cat([t[:, 1:] - t[:, :-1], far[:, None] - t[:, -1:]], dim=-1)
    return RaySamples(t, deltas)


def test_stratified_bins():
    g = torch.Generator().manual_seed(0)
    s = stratified_sample(torch.full((1000,), 2.0, dtype=D64), torch.full((1000,), 6.0, dtype=D64), 4, g)
    for i in range(4):
        assert (s.t[:, i] >= 2 + i).all() and (s.t[:, i] < 3 + i).all()
    assert (s.t[:, 1:] > s.t[:, :-1]).all()
    one = stratified_sample(torch.tensor([2.0]), torch.tensor([6.0]), 1, g)
    assert 2.0 <= float(one.t) < 6.0
    mid = stratified_sample(torch.tensor([2.0], dtype=D64), torch.tensor([6.0], dtype=D64), 4, deterministic=True)
    torch.testing.assert_close(mid.t, torch.tensor([[2.5, 3.5, 4.5, 5.5]], dtype=D64))
    # last segment ends at the far bound
    torch.testing.assert_close(mid.deltas, torch.tensor([[1.0, 1.0, 1.0, 0.5]], dtype=D64))
    with pytest.raises(DomainError):
        stratified_sample(torch.tensor([2.0]), torch.tensor([6.0]), 0)


def test_importance_concentrated_bin():
    coarse = stratified_sample(torch.full((50,), 2.0, dtype=D64), torch.full((50,), 6.0, dtype=D64), 8,
                               deterministic=True)
    w = torch.zeros(50, 8, dtype=D64)
    w[:, 3] = 1.0
    fine = importance_resample(coarse, w, 2.0, 6.0, 32, torch.Generator().manual_seed(0))
    extra = fine.t[:, :]
    # coarse sample 3 (t = 3.75) owns [3.5, 4.0]
    new = [x for row in extra.tolist() for x in row if x not in coarse.t[0].tolist()]
    assert len(new) == 50 * 32
    assert min(new) >= 3.5 and max(new) <= 4.0
    assert (fine.t[:, 1:] >= fine.t[:, :-1]).all()


def test_importance_uniform_weights_match_uniform_distribution():
    coarse = stratified_sample(torch.zeros(1, dtype=D64), torch.ones(1, dtype=D64), 16, deterministic=True)
    fine = importance_resample(coarse, torch.ones(1, 16, dtype=D64), 0.0, 1.0, 10_000,
                               torch.Generator().manual_seed(1))
    mids = set(coarse.t[0].tolist())
    draws = np.array([x for x in fine.t[0].tolist() if x not in mids])
    assert stats.kstest(draws, "uniform").pvalue > 0.01


def test_importance_zero_weights_falls_back_to_uniform():
    coarse = stratified_sample(torch.zeros(1, dtype=D64), torch.ones(1, dtype=D64), 16, deterministic=True)
    fine = importance_resample(coarse, torch.zeros(1, 16, dtype=D64), 0.0, 1.0, 5000,
                               torch.Generator().manual_seed(2))
    assert torch.isfinite(fine.t).all()
    mids = set(coarse.t[0].tolist())
    draws = np.array([x for x in fine.t[0].tolist() if x not in mids])
    assert stats.kstest(draws, "uniform").pvalue > 0.01


def test_composite_empty_space_white():
    s = samples([[2.0, 3.0, 4.0]], [5.0])
    out = composite(s, torch.zeros(1, 3, dtype=D64), torch.rand(1, 3, 3, dtype=D64), white_background=True)
    torch.testing.assert_close(out["color"], torch.ones(1, 3, dtype=D64))
    assert float(out["opacity"]) == 0.0


def test_composite_opaque_front():
    s = samples([[2.0, 3.0]], [4.0])
    c = torch.tensor([[[0.2, 0.4, 0.6], [0.9, 0.1, 0.5]]], dtype=D64)
    out = composite(s, torch.tensor([[1e6, 1.0]], dtype=D64), c)
    torch.testing.assert_close(out["color"], c[:, 0])
    assert float(out["depth"]) == 2.0
    assert float(out["opacity"]) == 1.0


def test_composite_two_sample_half_split():
    # alpha_1 = 1 - exp(-ln 2) = 0.5, T_2 = 0.5, alpha_2 = 1
    s = samples([[1.0, 2.0]], [3.0])
    sigma = torch.tensor([[math.log(2.0), 1e6]], dtype=D64)
    c = torch.tensor([[[1.0, 0.0, 0.2], [0.0, 1.0, 0.6]]], dtype=D64)
    out = composite(s, sigma, c)
    torch.testing.assert_close(out["color"], 0.5 * c[:, 0] + 0.5 * c[:, 1], atol=1e-6, rtol=0)
    torch.testing.assert_close(out["depth"], torch.tensor([1.5], dtype=D64), atol=1e-6, rtol=0)


def random_rays(n, k, gen):
    t = torch.sort(torch.rand(n, k, generator=gen, dtype=D64) * 4 + 2, dim=-1).values
    s = samples(t, torch.full((n,), 6.5, dtype=D64))
    sigma = torch.rand(n, k, generator=gen, dtype=D64) * 10 * (torch.rand(n, k, generator=gen, dtype=D64) > 0.5)
    rgb = torch.rand(n, k, 3, generator=gen, dtype=D64)
    return s, sigma, rgb


def test_weights_bounded_10k_rays():
    s, sigma, rgb = random_rays(10_000, 32, torch.Generator().manual_seed(3))
    w = composite(s, sigma, rgb)["weights"]
    assert (w >= 0).all()
    assert (w.sum(-1) <= 1 + 1e-6).all()


def test_opaque_far_wall_weights_sum_to_one():
    s, sigma, rgb = random_rays(1000, 16, torch.Generator().manual_seed(4))
    sigma = sigma.clone()
    sigma[:, -1] = 1e9
    w = composite(s, sigma, rgb)["weights"]
    torch.testing.assert_close(w.sum(-1), torch.ones(1000, dtype=D64), atol=1e-5, rtol=0)


def test_composite_gradients_finite_differences():
    gen = torch.Generator().manual_seed(5)
    s, sigma, rgb = random_rays(4, 8, gen)
    sigma = (sigma + 0.1).requires_grad_(True)
    rgb = rgb.requires_grad_(True)

    def f(sig, col):
        out = composite(s, sig, col, white_background=True)
        return torch.cat([out["color"], out["depth"][:, None], out["opacity"][:, None]], dim=-1)

    assert torch.autograd.gradcheck(f, (sigma, rgb), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_front_weight_monotone_in_front_density():
    s = samples([[2.0, 3.0, 4.0]], [5.0])
    rgb = torch.rand(1, 3, 3, dtype=D64)
    prev = -1.0
    for sig in np.linspace(0, 20, 50):
        w1 = float(composite(s, torch.tensor([[sig, 2.0, 1.0]], dtype=D64), rgb)["weights"][0, 0])
        assert w1 >= prev
        prev = w1


def test_single_opaque_sample_depth_exact():
    s = samples([[2.0, 3.3, 4.0]], [5.0])
    out = composite(s, torch.tensor([[0.0, 1e9, 0.0]], dtype=D64), torch.rand(1, 3, 3, dtype=D64))
    assert float(out["depth"]) == 3.3


def small_field(seed=0):
    torch.manual_seed(seed)
    return RadianceField(FieldConfig(depth=2, width=32, skips=(), pos_freqs=4, dir_freqs=2))


def test_zero_density_patch_is_background():
    intr = CameraIntrinsics(20, 20, 8, 8, 16, 16)
    patch = strided_patch(0, 0, 2, 8, (16, 16))
    out = render_patch((ZeroField(), None), intr, CameraPose.identity(), patch, RenderConfig(16, 0, True), 1.0, 4.0)
    torch.testing.assert_close(out["coarse"].colors, torch.ones(8, 8, 3))
    assert (out["coarse"].opacities == 0).all()


def test_single_pixel_patch_equals_single_ray():
    intr = CameraIntrinsics(20, 20, 8, 8, 16, 16)
    pose = look_at((0, 0, 3), (0, 0, 0))
    field = small_field()
    cfg = RenderConfig(16, 8, False)
    out = render_patch((field, field), intr, pose, strided_patch(5, 6, 1, 1, (16, 16)), cfg, 1.0, 5.0,
                       deterministic=True)
    from monoview.geometry import generate_ray

    ray = generate_ray(intr, pose, (5, 6), (1.0, 5.0))
    o = torch.tensor(ray.origin[None], dtype=torch.float32)
    d = torch.tensor(ray.direction[None], dtype=torch.float32)
    ref = render_rays((field, field), o, d, 1.0, 5.0, cfg, deterministic=True)
    for level in ("coarse", "fine"):
        torch.testing.assert_close(out[level].colors.reshape(1, 3), ref[level]["color"])
        torch.testing.assert_close(out[level].depths.reshape(1), ref[level]["depth"])


def test_permuting_rays_permutes_output():
    field = small_field(1)
    gen = torch.Generator().manual_seed(0)
    o = torch.randn(64, 3, generator=gen)
    d = torch.nn.functional.normalize(torch.randn(64, 3, generator=gen), dim=-1)
    perm = torch.randperm(64, generator=gen)
    cfg = RenderConfig(16, 16, True)
    a = render_rays((field, field), o, d, 0.5, 4.0, cfg, deterministic=True)
    b = render_rays((field, field), o[perm], d[perm], 0.5, 4.0, cfg, deterministic=True)
    inv = torch.argsort(perm)
    for level in a:
        torch.testing.assert_close(b[level]["color"][inv], a[level]["color"], rtol=1e-6, atol=1e-7)


def test_tile_size_does_not_change_render():
    field = small_field(2)
    gen = torch.Generator().manual_seed(1)
    o = torch.randn(1000, 3, generator=gen)
    d = torch.nn.functional.normalize(torch.randn(1000, 3, generator=gen), dim=-1)
    cfg = RenderConfig(16, 16, False)
    with torch.no_grad():
        full = render_rays_chunked((field, field), o, d, 0.5, 4.0, cfg, deterministic=True, chunk=1000)
        for chunk in (1, 37, 256):
            part = render_rays_chunked((field, field), o, d, 0.5, 4.0, cfg, deterministic=True, chunk=chunk)
            assert torch.equal(part["fine"]["color"], full["fine"]["color"])


def test_render_patch_differentiable():
    field = small_field(3)
    intr = CameraIntrinsics(20, 20, 8, 8, 16, 16)
    out = render_patch((field, None), intr, look_at((0, 0, 3), (0, 0, 0)), strided_patch(0, 0, 3, 4, (16, 16)),
                       RenderConfig(8, 0), 1.0, 5.0, torch.Generator().manual_seed(0))
    out["coarse"].colors.sum().backward()
    assert all(p.grad is not None for p in field.parameters())


def test_pixel_loss_examples():
    a = torch.rand(4, 4, 3)
    assert float(pixel_loss(a, a)) == 0.0
    assert float(pixel_loss(torch.tensor([[0.1, 0.0, 0.0]]), torch.zeros(1, 3))) == pytest.approx(0.01, abs=1e-7)
    got = pixel_loss(torch.tensor([[0.1, 0.0, 0.0], [0.0, 0.3, 0.0]], dtype=D64), torch.zeros(2, 3, dtype=D64))
    assert float(got) == pytest.approx(0.05, abs=1e-12)
    with pytest.raises(ValidationError):
        pixel_loss(torch.zeros(2, 3), torch.zeros(3, 3))
