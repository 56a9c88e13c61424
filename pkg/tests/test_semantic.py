import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from monoview.errors import ConfigurationError, InitializationError, ValidationError
from monoview.semantic import (AugmentationPolicy, DiscriminatorConfig, MeanColorExtractor, PatchDiscriminator,
                               RandomConvExtractor, adjust_brightness, adversarial_losses, build_extractor,
                               cls_loss, critic_loss, diff_augment, global_feature, hinge_d_loss, hinge_g_loss,
                               reinit_discriminator, translate)

D64 = torch.float64


class ConstantCritic(torch.nn.Module):
    """Scores real-looking patches (mean > 0.5 before augmentation) with fixed values."""

    def __init__(self, real_score, fake_score):
        super().__init__()
        self.real_score, self.fake_score = real_score, fake_score

    def forward(self, x):
        is_real = x.mean(dim=(1, 2, 3)) > 0.5
        return torch.where(is_real, torch.tensor(self.real_score), torch.tensor(self.fake_score))


@pytest.mark.parametrize("real,fake,want_d,want_g", [(2.0, -2.0, 0.0, 2.0), (0.0, 0.0, 2.0, 0.0),
                                                      (-1.0, 1.0, 4.0, -1.0)])
def test_hinge_examples(real, fake, want_d, want_g):
    critic = ConstantCritic(real, fake)
    loss_d, loss_g = adversarial_losses(critic, torch.ones(8, 8, 3), torch.zeros(8, 8, 3), AugmentationPolicy())
    assert float(loss_d) == pytest.approx(want_d, abs=1e-6)
    assert float(loss_g) == pytest.approx(want_g, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_hinge_matches_closed_form(real, fake):
    want_d = np.mean([max(0.0, 1 - r) for r in real]) + np.mean([max(0.0, 1 + f) for f in fake])
    got = hinge_d_loss(torch.tensor(real, dtype=D64), torch.tensor(fake, dtype=D64))
    assert float(got) == pytest.approx(want_d, abs=1e-12)
    assert float(hinge_g_loss(torch.tensor(fake, dtype=D64))) == pytest.approx(-np.mean(fake), abs=1e-12)
    if min(real) >= 1 and max(fake) <= -1:
        assert float(got) == 0.0


def test_critic_loss_detaches_fake():
    torch.manual_seed(0)
    disc = PatchDiscriminator(8, DiscriminatorConfig(8, 3))
    fake = torch.rand(8, 8, 3, requires_grad=True)
    critic_loss(disc, torch.rand(8, 8, 3), fake, AugmentationPolicy.default()).backward()
    assert fake.grad is None
    assert any(p.grad is not None for p in disc.parameters())
    with pytest.raises(ValidationError):
        critic_loss(disc, torch.rand(8, 8, 3), torch.rand(6, 6, 3), AugmentationPolicy())


def test_discriminator_default_architecture():
    disc = PatchDiscriminator(64)
    convs = [m for m in disc.modules() if isinstance(m, torch.nn.Conv2d)]
    assert [c.out_channels for c in convs] == [64, 128, 256, 512, 1]
    assert all(c.kernel_size == (4, 4) and c.stride == (2, 2) for c in convs)
    norms = [i for i, m in enumerate(disc.net) if isinstance(m, torch.nn.InstanceNorm2d)]
    assert len(norms) == 3
    assert disc(torch.rand(2, 3, 64, 64)).shape == (2,)
    with pytest.raises(ValidationError):
        disc(torch.rand(1, 3, 16, 16))


def test_empty_policy_is_identity():
    x = torch.rand(2, 3, 8, 8)
    assert torch.equal(diff_augment(x, AugmentationPolicy()), x)


def test_translation_matches_index_shift():
    x = torch.rand(1, 3, 6, 7)
    out = translate(x, 2, 1)
    want = torch.zeros_like(x)
    for y in range(6):
        for xx in range(7):
            if 0 <= y - 1 < 6 and 0 <= xx - 2 < 7:
                want[..., y, xx] = x[..., y - 1, xx - 2]
    assert torch.equal(out, want)
    assert (out[..., 0, :] == 0).all() and (out[..., :, :2] == 0).all()


def test_brightness_clamps():
    x = torch.tensor([0.0, 0.5, 0.95, 1.0]).reshape(1, 1, 2, 2).expand(1, 3, 2, 2)
    out = adjust_brightness(x, 0.1)
    torch.testing.assert_close(out, torch.clamp(x + 0.1, max=1.0))


def test_unknown_augmentation_rejected():
    with pytest.raises(ConfigurationError):
        AugmentationPolicy.from_names(["color", "blur"])


@pytest.mark.parametrize("kind", ["color", "translation", "cutout"])
def test_augmentation_finite_differences(kind):
    policy = AugmentationPolicy.from_names([kind])
    x = (0.3 + 0.4 * torch.rand(2, 3, 8, 8, dtype=D64)).requires_grad_()

    def fn(inp):
        # the same draws on every evaluation
        return diff_augment(inp, policy, torch.Generator().manual_seed(5))

    assert torch.autograd.gradcheck(fn, (x,), eps=1e-6, atol=1e-7, rtol=1e-4)


def test_augmentation_is_seeded():
    x = torch.rand(4, 3, 8, 8)
    pol = AugmentationPolicy.default()
    a = diff_augment(x, pol, torch.Generator().manual_seed(1))
    b = diff_augment(x, pol, torch.Generator().manual_seed(1))
    c = diff_augment(x, pol, torch.Generator().manual_seed(2))
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_mean_stub_feature():
    ext = MeanColorExtractor().freeze()
    patch = torch.rand(16, 16, 3, dtype=D64)
    feat = global_feature(ext, patch)
    assert feat.shape == (1, 3)
    # bilinear resize preserves the mean only approximately; a constant patch is exact
    const = torch.ones(16, 16, 3, dtype=D64) * torch.tensor([0.2, 0.5, 0.9], dtype=D64)
    torch.testing.assert_close(global_feature(ext, const)[0], torch.tensor([0.2, 0.5, 0.9], dtype=D64))
    assert torch.equal(global_feature(ext, patch), global_feature(ext, patch))


def test_feature_input_resized_to_224():
    seen = {}

    class Probe(MeanColorExtractor):
        def features(self, x):
            seen["shape"] = tuple(x.shape)
            return super().features(x)

    global_feature(Probe().freeze(), torch.rand(64, 64, 3))
    assert seen["shape"] == (1, 3, 224, 224)
    with pytest.raises(ValidationError):
        global_feature(Probe(), torch.rand(1, 1, 3))


def test_feature_extractor_gradient_isolation():
    ext = RandomConvExtractor(seed=0)
    patch = torch.rand(16, 16, 3, requires_grad=True)
    ref = torch.rand(16, 16, 3)
    cls_loss(global_feature(ext, patch), global_feature(ext, ref)).backward()
    assert patch.grad is not None and patch.grad.abs().sum() > 0
    assert all(p.grad is None for p in ext.parameters())
    ext.train()
    assert not ext.training


def test_missing_vit_weights_message():
    with pytest.raises(InitializationError, match="fetch-weights"):
        build_extractor({"kind": "vit", "weights_path": "/nonexistent/dino"})
    with pytest.raises(ConfigurationError):
        build_extractor({"kind": "clip"})


def test_cls_loss_examples():
    a = torch.tensor([[1.0, 0.0]])
    b = torch.tensor([[0.0, 1.0]])
    assert float(cls_loss(a, a)) == 0.0
    assert float(cls_loss(a, b)) == pytest.approx(2.0, abs=1e-6)
    assert float(cls_loss(torch.tensor([[0.3, 0.4]]), torch.zeros(1, 2))) == pytest.approx(0.25, abs=1e-6)
    with pytest.raises(ValidationError):
        cls_loss(torch.zeros(1, 2), torch.zeros(1, 3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_cls_loss_symmetric(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(3, 7, generator=g, dtype=D64), torch.randn(3, 7, generator=g, dtype=D64)
    assert float(cls_loss(a, b)) == float(cls_loss(b, a))
    assert float(cls_loss(a, a)) == 0.0


def test_reinit_is_deterministic_per_seed():
    cfg = DiscriminatorConfig(8, 3)
    a, b, c = reinit_discriminator(3, 8, cfg), reinit_discriminator(3, 8, cfg), reinit_discriminator(4, 8, cfg)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))
    x = torch.rand(2, 3, 8, 8)
    assert not torch.equal(a(x), c(x))
