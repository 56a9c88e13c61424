"""Quadrature volume rendering of color, expected depth and opacity."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import DomainError, ValidationError
from .geometry import CameraIntrinsics, CameraPose, PixelPatch, generate_rays

DEPTH_EPS = 1e-10


@dataclass
class RenderConfig:
    n_coarse: int = 64
    n_fine: int = 128
    white_background: bool = False
    chunk: int = 4096

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RaySamples:
    """Sample distances ``t`` (R, N), ascending, and segment lengths ``deltas``.

    The last segment of every ray ends at the far bound, so
    ``deltas[:, -1] = t_far - t[:, -1]``.
    """

    t: torch.Tensor
    deltas: torch.Tensor


def _deltas(t: torch.Tensor, far: torch.Tensor) -> torch.Tensor:
    return torch.cat([t[:, 1:] - t[:, :-1], far[:, None] - t[:, -1:]], dim=-1)


def stratified_sample(near, far, n_samples: int, generator=None, deterministic: bool = False) -> RaySamples:
    """One draw per equal-width bin of ``[near, far)``; bin midpoints when ``deterministic``."""
    if n_samples < 1:
        raise DomainError(f"need at least one sample per ray, got {n_samples}")
    near = torch.as_tensor(near).reshape(-1)
    far = torch.as_tensor(far, dtype=near.dtype).reshape(-1)
    n_rays = near.shape[0]
    if deterministic:
        u = torch.full((n_rays, n_samples), 0.5, dtype=near.dtype)
    else:
        u = torch.rand((n_rays, n_samples), generator=generator, dtype=near.dtype)
    bins = torch.arange(n_samples, dtype=near.dtype)
    t = near[:, None] + (far - near)[:, None] * (bins + u) / n_samples
    return RaySamples(t, _deltas(t, far))


def sample_pdf(edges: torch.Tensor, weights: torch.Tensor, n_samples: int, generator=None, deterministic=False):
    """Inverse-CDF sampling from the piecewise-constant density over ``edges``.

    Rays whose weights sum to zero fall back to a uniform density.
    """
    weights = weights.detach()
    total = weights.sum(-1, keepdim=True)
    uniform = torch.full_like(weights, 1.0 / weights.shape[-1])
    pdf = torch.where(total > 0, weights / total.clamp_min(1e-30), uniform)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[:, :1]), cdf], dim=-1)
    cdf[:, -1] = 1.0
    n_rays = weights.shape[0]
    if deterministic:
        u = ((torch.arange(n_samples, dtype=weights.dtype) + 0.5) / n_samples).expand(n_rays, n_samples)
    else:
        u = torch.rand((n_rays, n_samples), generator=generator, dtype=weights.dtype)
    u = u.contiguous()
    idx = torch.searchsorted(cdf, u, right=True)
    lo = (idx - 1).clamp(0, weights.shape[-1] - 1)
    hi = lo + 1
    cdf_lo, cdf_hi = cdf.gather(-1, lo), cdf.gather(-1, hi)
    e_lo, e_hi = edges.gather(-1, lo), edges.gather(-1, hi)
    denom = cdf_hi - cdf_lo
    frac = torch.where(denom > 0, (u - cdf_lo) / denom.clamp_min(1e-30), torch.zeros_like(u))
    return e_lo + frac * (e_hi - e_lo)


def importance_resample(coarse: RaySamples, coarse_weights, near, far, n_samples: int, generator=None,
                        deterministic: bool = False) -> RaySamples:
    """Draw ``n_samples`` extra distances in proportion to the coarse weights and merge.

    Coarse sample ``i`` owns the interval between the midpoints to its
    neighbours (the first and last intervals extend to the ray bounds).
    """
    t = coarse.t.detach()
    near = torch.as_tensor(near, dtype=t.dtype).reshape(-1).expand(t.shape[0])
    far = torch.as_tensor(far, dtype=t.dtype).reshape(-1).expand(t.shape[0])
    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    edges = torch.cat([near[:, None], mids, far[:, None]], dim=-1)
    fine = sample_pdf(edges, coarse_weights, n_samples, generator, deterministic)
    merged, _ = torch.sort(torch.cat([t, fine.detach()], dim=-1), dim=-1)
    return RaySamples(merged, _deltas(merged, far))


def composite(samples: RaySamples, sigma: torch.Tensor, rgb: torch.Tensor, white_background: bool = False):
    """Alpha-composite per-sample density and color along each ray.

    Returns a dict with ``color`` (R, 3), ``depth`` (R,), ``opacity`` (R,) and
    the per-sample ``weights`` (R, N). Depth is the opacity-normalised expected
    termination distance.
    """
    tau = sigma * samples.deltas
    alpha = 1.0 - torch.exp(-tau)
    # transmittance as exp of the exclusive cumulative optical depth
    acc = torch.cumsum(tau, dim=-1)
    trans = torch.exp(-torch.cat([torch.zeros_like(acc[:, :1]), acc[:, :-1]], dim=-1))
    weights = trans * alpha
    opacity = weights.sum(-1)
    color = (weights[..., None] * rgb).sum(-2)
    if white_background:
        color = color + (1.0 - opacity)[..., None]
    depth = (weights * samples.t).sum(-1) / opacity.clamp_min(DEPTH_EPS)
    return {"color": color, "depth": depth, "opacity": opacity, "weights": weights}


def _per_ray(value, like: torch.Tensor) -> torch.Tensor:
    value = torch.as_tensor(value, dtype=like.dtype)
    return value.expand(like.shape[0]) if value.dim() == 0 else value


def render_rays(fields, origins, directions, near, far, config: RenderConfig, generator=None,
                deterministic: bool = False):
    """Render a batch of rays through a coarse field and an optional fine field.

    ``fields`` is ``(coarse, fine)``; ``fine`` may be ``None`` or
    ``config.n_fine`` may be 0 for single-network rendering. ``near`` and
    ``far`` are scalars or per-ray tensors. Returns ``{"coarse": ..., "fine": ...}``
    where ``fine`` is absent when unused.
    """
    coarse_field, fine_field = fields
    n_rays = origins.shape[0]
    near, far = _per_ray(near, origins), _per_ray(far, origins)

    def run(field, samples):
        pts = origins[:, None, :] + directions[:, None, :] * samples.t[..., None]
        dirs = directions[:, None, :].expand_as(pts)
        sigma, rgb = field(pts.reshape(-1, 3), dirs.reshape(-1, 3))
        n = samples.t.shape[1]
        return composite(samples, sigma.reshape(n_rays, n), rgb.reshape(n_rays, n, 3), config.white_background)

    coarse_samples = stratified_sample(near, far, config.n_coarse, generator, deterministic)
    out = {"coarse": run(coarse_field, coarse_samples)}
    if fine_field is not None and config.n_fine > 0:
        fine_samples = importance_resample(coarse_samples, out["coarse"]["weights"], near, far, config.n_fine,
                                           generator, deterministic)
        out["fine"] = run(fine_field, fine_samples)
    return out


# tiles are padded to a multiple of this many rays: vectorised math kernels treat
# ragged tails differently, which would make results depend on the tile size
TILE_ALIGN = 16


def render_rays_chunked(fields, origins, directions, near, far, config: RenderConfig, generator=None,
                        deterministic: bool = False, chunk: int | None = None):
    """:func:`render_rays` over slices of ``chunk`` rays; drops per-sample weights."""
    chunk = chunk or config.chunk
    near, far = _per_ray(near, origins), _per_ray(far, origins)
    pieces = []
    for i in range(0, origins.shape[0], chunk):
        idx = torch.arange(i, min(i + chunk, origins.shape[0]))
        n = idx.shape[0]
        pad = -n % TILE_ALIGN
        if pad:
            idx = torch.cat([idx, idx[-1:].expand(pad)])
        out = render_rays(fields, origins[idx], directions[idx], near[idx], far[idx], config, generator,
                          deterministic)
        pieces.append({lv: {k: r[k][:n] for k in ("color", "depth", "opacity")} for lv, r in out.items()})
    return {level: {k: torch.cat([p[level][k] for p in pieces], dim=0) for k in ("color", "depth", "opacity")}
            for level in pieces[0]}


@dataclass
class RenderedPatch:
    colors: torch.Tensor  # (rows, cols, 3)
    depths: torch.Tensor  # (rows, cols) expected ray distance
    opacities: torch.Tensor  # (rows, cols)
    z_depths: torch.Tensor  # (rows, cols) expected depth along the optical axis


def rays_for_pixels(intr: CameraIntrinsics, pose: CameraPose, pixels: np.ndarray, dtype=torch.float32):
    origins, dirs, cos = generate_rays(intr, pose, pixels)
    return (torch.as_tensor(origins, dtype=dtype), torch.as_tensor(dirs, dtype=dtype),
            torch.as_tensor(cos, dtype=dtype))


def render_patch(fields, intr: CameraIntrinsics, pose: CameraPose, patch: PixelPatch, config: RenderConfig,
                 near: float, far: float, generator=None, deterministic: bool = False, dtype=torch.float32):
    """Render every pixel of ``patch``; returns ``{level: RenderedPatch}`` for coarse (and fine)."""
    origins, dirs, cos = rays_for_pixels(intr, pose, patch.coords, dtype)
    out = render_rays(fields, origins, dirs, float(near), float(far), config, generator, deterministic)
    shape = patch.shape
    return {
        level: RenderedPatch(
            r["color"].reshape(*shape, 3), r["depth"].reshape(shape), r["opacity"].reshape(shape),
            (r["depth"] * cos).reshape(shape),
        )
        for level, r in out.items()
    }


def pixel_loss(rendered: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the squared L2 color error."""
    if rendered.shape != target.shape:
        raise ValidationError(f"shape mismatch: {tuple(rendered.shape)} vs {tuple(target.shape)}")
    return ((rendered - target) ** 2).reshape(-1, rendered.shape[-1]).sum(-1).mean()
