"""Semantic pseudo labels: patch critic with hinge losses and a global-token prior.

Image tensors are NCHW in [0, 1] unless noted. Single patches given as
(H, W, 3) are accepted by the public helpers and converted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InitializationError, ValidationError

AUGMENT_KINDS = ("color", "translation", "cutout")


def as_nchw(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 3 and x.shape[-1] == 3:
        return x.permute(2, 0, 1)[None]
    if x.dim() == 4:
        return x
    raise ValidationError(f"expected an (H, W, 3) patch or an NCHW batch, got {tuple(x.shape)}")


# ---- differentiable augmentation -------------------------------------------------


def adjust_brightness(x, delta):
    """Add ``delta`` (per sample) and clamp to [0, 1]."""
    delta = torch.as_tensor(delta, dtype=x.dtype).reshape(-1, 1, 1, 1)
    return (x + delta).clamp(0.0, 1.0)


def adjust_saturation(x, factor):
    factor = torch.as_tensor(factor, dtype=x.dtype).reshape(-1, 1, 1, 1)
    mean = x.mean(dim=1, keepdim=True)
    return ((x - mean) * factor + mean).clamp(0.0, 1.0)


def adjust_contrast(x, factor):
    factor = torch.as_tensor(factor, dtype=x.dtype).reshape(-1, 1, 1, 1)
    mean = x.mean(dim=(1, 2, 3), keepdim=True)
    return ((x - mean) * factor + mean).clamp(0.0, 1.0)


def translate(x, shift_x, shift_y):
    """Shift each sample by integer ``(shift_x, shift_y)`` pixels with zero fill.

    ``out[..., y, x] = in[..., y - shift_y, x - shift_x]``.
    """
    n, _, h, w = x.shape
    sx = torch.as_tensor(shift_x, dtype=torch.int64).reshape(-1).expand(n)
    sy = torch.as_tensor(shift_y, dtype=torch.int64).reshape(-1).expand(n)
    ys = torch.arange(h)[None, :] - sy[:, None]  # (n, h)
    xs = torch.arange(w)[None, :] - sx[:, None]  # (n, w)
    valid = ((ys >= 0) & (ys < h))[:, :, None] & ((xs >= 0) & (xs < w))[:, None, :]
    ys = ys.clamp(0, h - 1)
    xs = xs.clamp(0, w - 1)
    idx = (ys[:, :, None] * w + xs[:, None, :]).reshape(n, 1, h * w).expand(n, x.shape[1], h * w)
    out = x.reshape(n, x.shape[1], h * w).gather(2, idx).reshape(x.shape)
    return out * valid[:, None].to(x.dtype)


def cutout(x, center_x, center_y, size_h, size_w):
    """Zero a ``size_h`` x ``size_w`` box centred at the given pixel of each sample."""
    n, _, h, w = x.shape
    cx = torch.as_tensor(center_x, dtype=torch.int64).reshape(-1).expand(n)
    cy = torch.as_tensor(center_y, dtype=torch.int64).reshape(-1).expand(n)
    ys = torch.arange(h)[None, :]
    xs = torch.arange(w)[None, :]
    in_y = (ys >= (cy - size_h // 2)[:, None]) & (ys < (cy - size_h // 2 + size_h)[:, None])
    in_x = (xs >= (cx - size_w // 2)[:, None]) & (xs < (cx - size_w // 2 + size_w)[:, None])
    keep = ~(in_y[:, :, None] & in_x[:, None, :])
    return x * keep[:, None].to(x.dtype)


@dataclass
class Augmentation:
    kind: str
    magnitude: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ConfigurationError(f"unknown augmentation kind {self.kind!r}; choose from {AUGMENT_KINDS}")


DEFAULT_MAGNITUDES = {
    "color": {"brightness": 0.25, "saturation": (0.0, 2.0), "contrast": (0.5, 1.5)},
    "translation": {"ratio": 0.125},
    "cutout": {"ratio": 0.5},
}


@dataclass
class AugmentationPolicy:
    steps: list = field(default_factory=list)

    @classmethod
    def from_names(cls, names):
        return cls([Augmentation(n, dict(DEFAULT_MAGNITUDES.get(n, {}))) for n in names])

    @classmethod
    def default(cls):
        return cls.from_names(AUGMENT_KINDS)

    def names(self):
        return [s.kind for s in self.steps]


def _uniform(n, lo, hi, generator, dtype):
    return lo + (hi - lo) * torch.rand(n, generator=generator, dtype=dtype)


def diff_augment(x: torch.Tensor, policy: AugmentationPolicy, generator=None) -> torch.Tensor:
    """Apply ``policy`` with independent random draws per sample; differentiable in ``x``."""
    squeeze = x.dim() == 3
    out = as_nchw(x)
    n, _, h, w = out.shape
    for step in policy.steps:
        mag = {**DEFAULT_MAGNITUDES[step.kind], **step.magnitude}
        if step.kind == "color":
            b = mag["brightness"]
            out = adjust_brightness(out, _uniform(n, -b, b, generator, out.dtype))
            out = adjust_saturation(out, _uniform(n, *mag["saturation"], generator, out.dtype))
            out = adjust_contrast(out, _uniform(n, *mag["contrast"], generator, out.dtype))
        elif step.kind == "translation":
            mx = int(w * mag["ratio"] + 0.5)
            my = int(h * mag["ratio"] + 0.5)
            sx = torch.randint(-mx, mx + 1, (n,), generator=generator)
            sy = torch.randint(-my, my + 1, (n,), generator=generator)
            out = translate(out, sx, sy)
        elif step.kind == "cutout":
            ch, cw = int(h * mag["ratio"] + 0.5), int(w * mag["ratio"] + 0.5)
            cx = torch.randint(0, w + (1 - cw % 2), (n,), generator=generator)
            cy = torch.randint(0, h + (1 - ch % 2), (n,), generator=generator)
            out = cutout(out, cx, cy, ch, cw)
    if squeeze:
        return out[0].permute(1, 2, 0)
    return out


# ---- patch critic ---------------------------------------------------------------


@dataclass
class DiscriminatorConfig:
    base_channels: int = 64
    n_layers: int = 5
    leaky_slope: float = 0.2


class PatchDiscriminator(nn.Module):
    """Strided-convolution critic producing one score per patch.

    Layers use kernel 4 / stride 2 while the feature map is at least 4 pixels
    on its short side, otherwise kernel 3 / stride 1, so the same design works
    for small patches. Channels double per layer (capped at 8x base) and the
    last layer emits a 1-channel map that is spatially averaged. Instance norm
    follows layers 2 to n-1.
    """

    def __init__(self, patch_size, config: DiscriminatorConfig | None = None):
        super().__init__()
        self.config = config = config or DiscriminatorConfig()
        rows, cols = (patch_size, patch_size) if isinstance(patch_size, int) else patch_size
        self.patch_size = (int(rows), int(cols))
        layers = []
        ch_in, side = 3, min(rows, cols)
        for i in range(config.n_layers):
            last = i == config.n_layers - 1
            ch_out = 1 if last else config.base_channels * min(2**i, 8)
            if side >= 4:
                conv = nn.Conv2d(ch_in, ch_out, 4, stride=2, padding=1)
                side //= 2
            else:
                conv = nn.Conv2d(ch_in, ch_out, 3, stride=1, padding=1)
            layers.append(conv)
            if not last:
                if i > 0 and side > 1:
                    layers.append(nn.InstanceNorm2d(ch_out, affine=True))
                layers.append(nn.LeakyReLU(config.leaky_slope))
            ch_in = ch_out
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        x = as_nchw(x)
        if tuple(x.shape[-2:]) != self.patch_size:
            raise ValidationError(f"critic expects {self.patch_size} patches, got {tuple(x.shape[-2:])}")
        # inputs are mapped from [0, 1] to [-1, 1]
        return self.net(x * 2.0 - 1.0).mean(dim=(1, 2, 3))


def init_discriminator_weights(module: nn.Module, generator: torch.Generator):
    """Conv weights ~ N(0, 0.02), biases zero, norm scales 1."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * 0.02)
                m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def reinit_discriminator(seed: int, patch_size, config: DiscriminatorConfig | None = None) -> PatchDiscriminator:
    """A freshly initialised critic; identical parameters for identical seeds."""
    disc = PatchDiscriminator(patch_size, config)
    init_discriminator_weights(disc, torch.Generator().manual_seed(int(seed)))
    return disc


def hinge_d_loss(real_scores, fake_scores):
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def hinge_g_loss(fake_scores):
    return (-fake_scores).mean()


def critic_loss(disc, real, fake, policy: AugmentationPolicy, generator=None):
    """Hinge critic loss; ``fake`` is detached so only the critic receives gradients."""
    real, fake = as_nchw(real), as_nchw(fake)
    if real.shape[1:] != fake.shape[1:]:
        raise ValidationError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} patches differ in shape")
    real_scores = disc(diff_augment(real, policy, generator))
    fake_scores = disc(diff_augment(fake.detach(), policy, generator))
    return hinge_d_loss(real_scores, fake_scores)


def generator_loss(disc, fake, policy: AugmentationPolicy, generator=None):
    return hinge_g_loss(disc(diff_augment(as_nchw(fake), policy, generator)))


def adversarial_losses(disc, real, fake, policy: AugmentationPolicy, generator=None):
    """Hinge critic and generator losses on augmented patches, as ``(loss_d, loss_g)``.

    The critic loss sees ``fake`` detached; the generator loss keeps its graph.
    """
    loss_d = critic_loss(disc, real, fake, policy, generator)
    return loss_d, generator_loss(disc, fake, policy, generator)


# ---- global feature prior -------------------------------------------------------

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class FeatureExtractor(nn.Module):
    """Frozen network returning one global feature vector per image.

    Subclasses set ``input_size``, ``mean`` and ``std`` and implement
    :meth:`features` on normalised NCHW batches.
    """

    input_size = 224
    mean = (0.0, 0.0, 0.0)
    std = (1.0, 1.0, 1.0)

    def freeze(self):
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def train(self, mode: bool = True):
        # extractors never leave eval mode
        return super().train(False)

    def features(self, x):
        raise NotImplementedError

    def forward(self, x):
        return self.features(x)


class MeanColorExtractor(FeatureExtractor):
    """Stub: the feature is the per-channel mean of the resized patch."""

    def features(self, x):
        return x.mean(dim=(2, 3))


class RandomConvExtractor(FeatureExtractor):
    """Stub with structure sensitivity: a frozen, seeded random conv net plus global pooling.

    Serves as a cheap deterministic stand-in for a pretrained backbone in tests
    and desk-scale runs.
    """

    def __init__(self, seed: int = 0, channels: int = 32, input_size: int = 64):
        super().__init__()
        self.input_size = input_size
        self.mean, self.std = (0.5, 0.5, 0.5), (0.25, 0.25, 0.25)
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 5, stride=2, padding=2), nn.Tanh(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.Tanh(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.Tanh(),
        )
        g = torch.Generator().manual_seed(seed)
        for m in self.net:
            if isinstance(m, nn.Conv2d):
                fan_in = m.weight[0].numel()
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=g) / math.sqrt(fan_in))
                    m.bias.zero_()
        self.freeze()

    def features(self, x):
        h = self.net(x)
        # mean plus a coarse 2x2 layout summary, scaled so squared distances are per-dimension means
        feat = torch.cat([h.mean(dim=(2, 3)), F.adaptive_avg_pool2d(h, 2).flatten(1)], dim=1)
        return feat / math.sqrt(feat.shape[1])


class ViTClassTokenExtractor(FeatureExtractor):
    """Class token of a self-supervised ViT (e.g. DINO ViT-S/16) loaded from local weights."""

    mean, std = IMAGENET_MEAN, IMAGENET_STD

    def __init__(self, weights_path, mode: str = "cls"):
        super().__init__()
        path = Path(weights_path) if weights_path else None
        if path is None or not path.exists():
            raise InitializationError(
                f"ViT weights not found at {weights_path!r}; download them with "
                "`monoview fetch-weights --dest <dir>` and set extractor.weights_path"
            )
        try:
            from transformers import ViTModel
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise InitializationError("the ViT extractor needs the `transformers` package") from exc
        self.model = ViTModel.from_pretrained(str(path), local_files_only=True, add_pooling_layer=False)
        self.mode = mode
        self.freeze()

    def features(self, x):
        hidden = self.model(pixel_values=x).last_hidden_state
        if self.mode == "cls":
            return hidden[:, 0]
        # self-similarity of the patch tokens, flattened
        tokens = F.normalize(hidden[:, 1:], dim=-1)
        return (tokens @ tokens.transpose(1, 2)).flatten(1)


def build_extractor(spec: dict | None) -> FeatureExtractor:
    """Construct an extractor from a config mapping ``{kind, weights_path, seed}``."""
    spec = dict(spec or {})
    kind = spec.get("kind", "vit")
    if kind in ("vit", "dino", "cls"):
        return ViTClassTokenExtractor(spec.get("weights_path"), "cls")
    if kind == "self-similarity":
        return ViTClassTokenExtractor(spec.get("weights_path"), "self-similarity")
    if kind == "mean-stub":
        return MeanColorExtractor().freeze()
    if kind == "random-conv":
        return RandomConvExtractor(int(spec.get("seed", 0)), int(spec.get("channels", 32)),
                                   int(spec.get("input_size", 64)))
    raise ConfigurationError(f"unknown extractor kind {kind!r}")


def global_feature(extractor: FeatureExtractor, patch: torch.Tensor) -> torch.Tensor:
    """Resize to the extractor's input size, normalise, and extract (B, D) features."""
    x = as_nchw(patch)
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ValidationError("patch must be at least 2x2 pixels")
    size = extractor.input_size
    x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    mean = torch.tensor(extractor.mean, dtype=x.dtype).reshape(1, 3, 1, 1)
    std = torch.tensor(extractor.std, dtype=x.dtype).reshape(1, 3, 1, 1)
    return extractor((x - mean) / std)


def cls_loss(feat_a: torch.Tensor, feat_b: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between features, averaged over the batch."""
    if feat_a.shape[-1] != feat_b.shape[-1]:
        raise ValidationError(f"feature dimensions differ: {feat_a.shape[-1]} vs {feat_b.shape[-1]}")
    return ((feat_a - feat_b) ** 2).sum(-1).mean()
