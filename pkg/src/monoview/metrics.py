"""Image quality metrics and the evaluation report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError, InitializationError, ValidationError

PSNR_CAP = 99.0


def _as_float64(img) -> torch.Tensor:
    if torch.is_tensor(img):
        return img.detach().to(torch.float64).cpu()
    return torch.as_tensor(np.asarray(img), dtype=torch.float64)


def psnr(img_a, img_b) -> float:
    a, b = _as_float64(img_a), _as_float64(img_b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(((a - b) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(img_a, img_b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM on [0, 1] images (H, W) or (H, W, C), averaged over valid windows and channels."""
    a, b = _as_float64(img_a), _as_float64(img_b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 2:
        a, b = a[..., None], b[..., None]
    h, w, c = a.shape
    if h < window or w < window:
        raise DomainError(f"image {h}x{w} is smaller than the {window}x{window} window")
    a = a.permute(2, 0, 1)[:, None]
    b = b.permute(2, 0, 1)[:, None]
    kernel = _gaussian_window(window, sigma)[None, None]
    mu_a = F.conv2d(a, kernel)
    mu_b = F.conv2d(b, kernel)
    var_a = F.conv2d(a * a, kernel) - mu_a**2
    var_b = F.conv2d(b * b, kernel) - mu_b**2
    cov = F.conv2d(a * b, kernel) - mu_a * mu_b
    c1, c2 = k1**2, k2**2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


class PerceptualBackend:
    name = "base"

    def __call__(self, img_a, img_b) -> float:
        raise NotImplementedError


class MeanAbsDiffBackend(PerceptualBackend):
    """Test stub: mean absolute pixel difference."""

    name = "mad-stub"

    def __call__(self, img_a, img_b):
        a, b = _as_float64(img_a), _as_float64(img_b)
        if a.shape != b.shape:
            raise ValidationError("shape mismatch")
        return float((a - b).abs().mean())


class LpipsBackend(PerceptualBackend):
    """Learned perceptual distance from the ``lpips`` package."""

    name = "lpips"

    def __init__(self, net: str = "alex"):
        try:
            import lpips
        except ImportError as exc:
            raise InitializationError("perceptual metric needs the `lpips` package (pip install lpips)") from exc
        try:
            self.model = lpips.LPIPS(net=net, verbose=False).eval()
        except Exception as exc:  # weight download failures surface here
            raise InitializationError(f"could not load LPIPS/{net} weights: {exc}") from exc

    def __call__(self, img_a, img_b):
        a = _as_float64(img_a).float().permute(2, 0, 1)[None] * 2 - 1
        b = _as_float64(img_b).float().permute(2, 0, 1)[None] * 2 - 1
        with torch.no_grad():
            return float(self.model(a, b).reshape(()))


def build_perceptual(name: str | None) -> PerceptualBackend | None:
    if name in (None, "none"):
        return None
    if name == "lpips":
        return LpipsBackend()
    if name == "mad-stub":
        return MeanAbsDiffBackend()
    raise InitializationError(f"unknown perceptual backend {name!r}")


def perceptual_distance(img_a, img_b, backend: PerceptualBackend) -> float:
    if backend is None:
        raise InitializationError("no perceptual backend configured")
    return backend(img_a, img_b)


@dataclass
class ViewMetrics:
    name: str
    psnr: float
    ssim: float
    perceptual: float | None = None
    depth_error: float | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = {"view": self.name, "psnr": self.psnr, "ssim": self.ssim, "perceptual": self.perceptual,
             "depth_error": self.depth_error}
        d.update(self.extra)
        return d


@dataclass
class EvalReport:
    views: list
    perceptual_backend: str | None = None

    def __len__(self):
        return len(self.views)

    def _mean(self, key):
        vals = [getattr(v, key) for v in self.views if getattr(v, key) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_psnr(self):
        return self._mean("psnr")

    @property
    def mean_ssim(self):
        return self._mean("ssim")

    @property
    def mean_perceptual(self):
        return self._mean("perceptual")

    @property
    def mean_depth_error(self):
        return self._mean("depth_error")

    def summary(self):
        return {"views": len(self.views), "psnr": self.mean_psnr, "ssim": self.mean_ssim,
                "perceptual": self.mean_perceptual, "perceptual_backend": self.perceptual_backend,
                "depth_error": self.mean_depth_error}

    def table(self) -> str:
        lines = [f"{'view':<24}{'PSNR':>9}{'SSIM':>9}{'LPIPS':>10}"]
        for v in self.views:
            p = "-" if v.perceptual is None else f"{v.perceptual:.4f}"
            lines.append(f"{v.name:<24}{v.psnr:>9.2f}{v.ssim:>9.4f}{p:>10}")
        p = "-" if self.mean_perceptual is None else f"{self.mean_perceptual:.4f}"
        lines.append(f"{'mean':<24}{self.mean_psnr:>9.2f}{self.mean_ssim:>9.4f}{p:>10}")
        return "\n".join(lines)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for v in self.views:
                fh.write(json.dumps(v.as_dict()) + "\n")

    def write_csv(self, path):
        rows = [v.as_dict() for v in self.views]
        keys = list(rows[0]) if rows else ["view", "psnr", "ssim", "perceptual", "depth_error"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
