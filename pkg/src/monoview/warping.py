"""Depth pseudo labels: forward warping with a z-buffer, smoothness, geometry loss.

Warping is written with explicit element-wise arithmetic instead of matrix
products so that a scalar per-point reimplementation reproduces it bit for
bit. Depth values stay differentiable; target pixel locations do not.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError, ValidationError
from .geometry import CameraIntrinsics, RigidTransform

log = logging.getLogger(__name__)

# colliding sources closer than this in target depth are ties, resolved by scan order
TIE_EPS = 1e-6


@dataclass
class DepthMap:
    """z-depth ``values`` (H, W) with a boolean validity ``mask``."""

    values: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self):
        self.values = torch.as_tensor(self.values)
        self.mask = torch.as_tensor(self.mask, dtype=torch.bool)
        if self.values.shape != self.mask.shape or self.values.dim() != 2:
            raise ValidationError(f"depth {tuple(self.values.shape)} and mask {tuple(self.mask.shape)} must be equal 2-D")
        v = self.values.detach()[self.mask]
        if not (torch.isfinite(v).all() and (v > 0).all()):
            raise ValidationError("depth must be finite and positive wherever the mask is set")

    @property
    def shape(self):
        return tuple(self.values.shape)

    @classmethod
    def full(cls, value: float, shape, dtype=torch.float64):
        return cls(torch.full(shape, float(value), dtype=dtype), torch.ones(shape, dtype=torch.bool))

    def numpy(self):
        return self.values.detach().cpu().numpy(), self.mask.cpu().numpy()


@dataclass
class WarpResult:
    """Depth in the target view; ``source_index`` is the winning source scan index or -1."""

    depth: DepthMap
    source_index: torch.Tensor

    @property
    def mask(self):
        return self.depth.mask


def warp_points(pixels, depths: torch.Tensor, k_src: CameraIntrinsics, k_dst: CameraIntrinsics,
                transform: RigidTransform):
    """Reproject source pixel centers at z-depth ``depths`` into the target camera.

    Returns ``(cols, rows, target_depth, in_front)``: integer target pixel
    (nearest center), the target-frame z-depth, and whether the point lies in
    front of the target camera.
    """
    pixels = torch.as_tensor(np.asarray(pixels), dtype=torch.int64).reshape(-1, 2)
    z = depths.reshape(-1)
    dtype = z.dtype
    u = pixels[:, 0].to(dtype)
    v = pixels[:, 1].to(dtype)

    x_s = (u + 0.5 - k_src.cx) / k_src.fx * z
    y_s = -(v + 0.5 - k_src.cy) / k_src.fy * z
    z_s = -z

    r = [[float(transform.rotation[i, j]) for j in range(3)] for i in range(3)]
    t = [float(transform.translation[i]) for i in range(3)]
    x_d = r[0][0] * x_s + r[0][1] * y_s + r[0][2] * z_s + t[0]
    y_d = r[1][0] * x_s + r[1][1] * y_s + r[1][2] * z_s + t[1]
    z_d = r[2][0] * x_s + r[2][1] * y_s + r[2][2] * z_s + t[2]

    depth_d = -z_d
    in_front = depth_d.detach() > 0
    safe = torch.where(in_front, depth_d.detach(), torch.ones_like(depth_d.detach()))
    u_d = k_dst.fx * x_d.detach() / safe + k_dst.cx
    v_d = -k_dst.fy * y_d.detach() / safe + k_dst.cy
    finite = torch.isfinite(u_d) & torch.isfinite(v_d)
    cols = torch.where(finite, torch.floor(u_d), torch.full_like(u_d, -1.0)).clamp(-1, 2**40).to(torch.int64)
    rows = torch.where(finite, torch.floor(v_d), torch.full_like(v_d, -1.0)).clamp(-1, 2**40).to(torch.int64)
    return cols, rows, depth_d, in_front & finite


def zbuffer(cols, rows, depth, valid, size):
    """Painter's algorithm: per target pixel keep the nearest source.

    Sources whose depths are within ``TIE_EPS`` of the minimum tie, and the
    earliest in scan order wins. Returns a :class:`WarpResult` whose depths
    carry gradients from the winning sources.
    """
    height, width = size
    inside = valid & (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    src = torch.nonzero(inside, as_tuple=False).reshape(-1)
    key = rows[src] * width + cols[src]
    z = depth.detach()[src]
    n_pix = height * width

    group_min = torch.full((n_pix,), float("inf"), dtype=z.dtype).scatter_reduce(0, key, z, "amin")
    cand = z <= group_min[key] + TIE_EPS
    big = torch.iinfo(torch.int64).max
    winner = torch.full((n_pix,), big, dtype=torch.int64).scatter_reduce(0, key[cand], src[cand], "amin")
    hit = winner != big
    source_index = torch.where(hit, winner, torch.full_like(winner, -1))

    values = torch.zeros(n_pix, dtype=depth.dtype)
    values = values.index_put((torch.nonzero(hit).reshape(-1),), depth[winner[hit]])
    return WarpResult(DepthMap(values.reshape(height, width), hit.reshape(height, width)),
                      source_index.reshape(height, width))


def warp_depth(src_depth: DepthMap, k_src: CameraIntrinsics, k_dst: CameraIntrinsics,
               transform: RigidTransform, dst_size=None) -> WarpResult:
    """Forward-warp every valid pixel of ``src_depth`` into the target camera.

    Source scan order is row-major over the source image; ``source_index`` in
    the result refers to that order.
    """
    if not isinstance(k_src, CameraIntrinsics) or not isinstance(k_dst, CameraIntrinsics):
        raise ValidationError("intrinsics must be CameraIntrinsics instances")
    height, width = src_depth.shape
    dst_size = dst_size or k_dst.size
    vv, uu = torch.meshgrid(torch.arange(height), torch.arange(width), indexing="ij")
    pixels = torch.stack([uu.reshape(-1), vv.reshape(-1)], dim=-1)
    values = src_depth.values.reshape(-1)
    mask = src_depth.mask.reshape(-1)
    safe = torch.where(mask, values, torch.ones_like(values))
    cols, rows, z, in_front = warp_points(pixels, safe, k_src, k_dst, transform)
    return zbuffer(cols, rows, z, in_front & mask, dst_size)


def warp_patch_points(pixels, depths, k_src, k_dst, transform, dst_size=None) -> WarpResult:
    """Warp a sparse set of source pixels (e.g. a rendered strided patch)."""
    cols, rows, z, in_front = warp_points(pixels, depths, k_src, k_dst, transform)
    valid = in_front & torch.isfinite(depths.detach().reshape(-1)) & (depths.detach().reshape(-1) > 0)
    return zbuffer(cols, rows, z, valid, dst_size or k_dst.size)


def _second_differences(d: torch.Tensor):
    dxx = d[1:-1, 2:] - 2 * d[1:-1, 1:-1] + d[1:-1, :-2]
    dyy = d[2:, 1:-1] - 2 * d[1:-1, 1:-1] + d[:-2, 1:-1]
    dxy = (d[2:, 2:] - d[2:, :-2] - d[:-2, 2:] + d[:-2, :-2]) / 4.0
    return dxx, dxy, dyy


def _interior_valid(mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(torch.float64)[None, None]
    # an interior pixel counts only if its whole 3x3 neighbourhood is valid
    return (-F.max_pool2d(-m, 3, stride=1)[0, 0]) > 0.5


def smoothness_loss(depth: torch.Tensor, image: torch.Tensor, factor: int = 2, mask=None) -> torch.Tensor:
    """Edge-aware second-order depth smoothness on a downscaled grid.

    ``depth`` is (H, W), ``image`` is (H, W, 3). Both are average-pooled by
    ``factor``; each interior pixel contributes
    ``exp(-|lap I|) * (|d_xx| + |d_xy| + |d_yy|)`` with the image Laplacian
    magnitude averaged over channels. The image weight is treated as a
    constant (no gradient).
    """
    if factor < 1:
        raise DomainError("downscale factor must be >= 1")
    if depth.shape != image.shape[:2]:
        raise ValidationError(f"depth {tuple(depth.shape)} and image {tuple(image.shape)} are not aligned")
    d = depth[None, None]
    img = image.detach().permute(2, 0, 1)[None]
    if factor > 1:
        d = F.avg_pool2d(d, factor)
        img = F.avg_pool2d(img, factor)
    d = d[0, 0]
    img = img[0]
    if d.shape[0] < 3 or d.shape[1] < 3:
        raise DomainError(f"patch is {tuple(d.shape)} after downscaling; need at least 3x3")

    lap = (img[:, 1:-1, 2:] + img[:, 1:-1, :-2] + img[:, 2:, 1:-1] + img[:, :-2, 1:-1] - 4 * img[:, 1:-1, 1:-1])
    weight = torch.exp(-lap.abs().mean(0))
    dxx, dxy, dyy = _second_differences(d)
    term = weight * (dxx.abs() + dxy.abs() + dyy.abs())
    if mask is None:
        return term.mean()
    m = torch.as_tensor(mask, dtype=torch.float64)[None, None]
    if factor > 1:
        m = -F.max_pool2d(-m, factor)
    valid = _interior_valid(m[0, 0] > 0.5)
    if not valid.any():
        return term.sum() * 0.0
    return term[valid].mean()


def masked_l1(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor):
    """Mean absolute difference over ``mask``; ``(0, False)`` when the mask is empty."""
    if not mask.any():
        return (a.sum() * 0.0 + b.sum() * 0.0), False
    return (a[mask] - b[mask]).abs().mean(), True


@dataclass
class GeometryTerms:
    total: torch.Tensor
    l1_a: torch.Tensor
    l1_b: torch.Tensor
    smooth: torch.Tensor
    empty: tuple  # names of L1 terms whose mask was empty

    def as_dict(self):
        return {"geo": float(self.total), "geo_l1_a": float(self.l1_a), "geo_l1_b": float(self.l1_b),
                "smooth": float(self.smooth)}


def geometry_loss(depth_a: torch.Tensor, warped_to_a: DepthMap, depth_b: torch.Tensor, warped_to_b: DepthMap,
                  lambda_smooth: float, smooth_depth: torch.Tensor | None = None,
                  smooth_image: torch.Tensor | None = None, smooth_factor: int = 2,
                  mask_a=None, mask_b=None) -> GeometryTerms:
    """Two-way warped-depth consistency plus weighted smoothness.

    ``warped_to_a`` holds view-b depth warped into view a, aligned with
    ``depth_a`` (and symmetrically for b). Each L1 is a mean over the warp
    mask intersected with the optional footprint masks. The smoothness term
    applies to ``smooth_depth`` with image weights from ``smooth_image``.
    """
    if lambda_smooth < 0:
        raise DomainError("lambda_smooth must be non-negative")
    ma = warped_to_a.mask if mask_a is None else warped_to_a.mask & torch.as_tensor(mask_a, dtype=torch.bool)
    mb = warped_to_b.mask if mask_b is None else warped_to_b.mask & torch.as_tensor(mask_b, dtype=torch.bool)
    l1_a, ok_a = masked_l1(depth_a, warped_to_a.values, ma)
    l1_b, ok_b = masked_l1(depth_b, warped_to_b.values, mb)
    empty = tuple(name for name, ok in (("l1_a", ok_a), ("l1_b", ok_b)) if not ok)
    if empty:
        log.debug("geometry loss: empty warp intersection for %s", ", ".join(empty))
    if smooth_depth is not None and lambda_smooth > 0:
        smooth = smoothness_loss(smooth_depth, smooth_image, smooth_factor)
    else:
        smooth = l1_a * 0.0
    total = l1_a + l1_b + lambda_smooth * smooth
    return GeometryTerms(total, l1_a, l1_b, smooth, empty)
