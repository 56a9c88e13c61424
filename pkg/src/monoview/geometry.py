"""Pinhole cameras, rigid transforms, rays and strided pixel patches.

Conventions used throughout the package:

* Poses are camera-to-world. The camera frame has x to the right, y up and
  looks down -z (the Blender / OpenGL convention). Loaders convert other
  datasets into this frame at ingestion.
* Pixel ``(u, v)`` is column ``u``, row ``v``; its center sits at
  ``(u + 0.5, v + 0.5)`` in continuous image coordinates.
* Depth maps store z-depth (distance along the optical axis), not ray length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ValidationError

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def size(self) -> tuple[int, int]:
        """(height, width)."""
        return (self.height, self.width)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the image resampled by ``factor`` (0.5 halves the resolution)."""
        w = int(round(self.width * factor))
        h = int(round(self.height * factor))
        return CameraIntrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor, w, h)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


def _check_rotation(rotation: np.ndarray) -> None:
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise ValidationError(f"rotation must be a finite 3x3 matrix, got shape {rotation.shape}")
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if err > ORTHONORMAL_TOL:
        raise ValidationError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
    if np.linalg.det(rotation) < 0:
        raise ValidationError("rotation has determinant -1 (reflection)")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(r)
        if not np.all(np.isfinite(t)):
            raise ValidationError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return type(self)(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: ``(a @ b)(x) == a(b(x))``. The result keeps the left operand's type."""
        return type(self)(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def allclose(self, other: "RigidTransform", atol: float = 1e-6) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


class CameraPose(RigidTransform):
    """Camera-to-world transform (camera looks down its local -z axis)."""

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def to_list(self) -> list:
        return self.matrix.tolist()

    @classmethod
    def from_list(cls, m) -> "CameraPose":
        return cls.from_matrix(np.asarray(m, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValidationError("ray direction must have unit norm")
        if not (0 <= self.t_near < self.t_far):
            raise DomainError(f"need 0 <= t_near < t_far, got ({self.t_near}, {self.t_far})")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True, eq=False)
class PixelPatch:
    """A strided grid of pixel coordinates, stored row-major as ``(u, v)`` pairs."""

    u: int
    v: int
    stride: int
    rows: int
    cols: int
    coords: np.ndarray  # (rows * cols, 2) int64, columns (u, v)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def footprint(self) -> tuple[int, int, int, int]:
        """Inclusive pixel bounds ``(u0, v0, u1, v1)`` spanned by the patch."""
        return (self.u, self.v, self.u + self.stride * (self.cols - 1), self.v + self.stride * (self.rows - 1))


def _patch_dims(size) -> tuple[int, int]:
    if isinstance(size, (int, np.integer)):
        return int(size), int(size)
    rows, cols = size
    return int(rows), int(cols)


def strided_patch(u: int, v: int, stride: int, size, image_size: Sequence[int]) -> PixelPatch:
    """Pixel coordinates ``{(u + s*x, v + s*y)}`` for ``x < cols``, ``y < rows``.

    ``size`` is either ``K`` (square) or ``(rows, cols)``; ``image_size`` is
    ``(height, width)``. Raises :class:`DomainError` when the footprint does
    not fit, in which case the caller should draw a new anchor.
    """
    rows, cols = _patch_dims(size)
    if stride < 1 or rows < 1 or cols < 1:
        raise DomainError(f"stride and patch size must be >= 1, got s={stride}, size={rows}x{cols}")
    height, width = image_size
    u_max = u + stride * (cols - 1)
    v_max = v + stride * (rows - 1)
    if u < 0 or v < 0 or u_max >= width or v_max >= height:
        raise DomainError(
            f"patch footprint {u_max - u + 1}x{v_max - v + 1} at ({u}, {v}) exceeds {height}x{width} image"
        )
    xs = u + stride * np.arange(cols)
    ys = v + stride * np.arange(rows)
    uu, vv = np.meshgrid(xs, ys)
    coords = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.int64)
    return PixelPatch(int(u), int(v), int(stride), rows, cols, coords)


def random_patch(rng: np.random.Generator, stride: int, size, image_size: Sequence[int]) -> PixelPatch:
    """Strided patch with a uniformly drawn anchor among all anchors that fit."""
    rows, cols = _patch_dims(size)
    height, width = image_size
    span_u = width - stride * (cols - 1)
    span_v = height - stride * (rows - 1)
    if span_u < 1 or span_v < 1:
        raise DomainError(f"a {rows}x{cols} patch at stride {stride} cannot fit a {height}x{width} image")
    u = int(rng.integers(0, span_u))
    v = int(rng.integers(0, span_v))
    return strided_patch(u, v, stride, (rows, cols), image_size)


def camera_directions(intr: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Unnormalized camera-frame directions through pixel centers, z component -1."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    x = (pixels[:, 0] + 0.5 - intr.cx) / intr.fx
    y = -(pixels[:, 1] + 0.5 - intr.cy) / intr.fy
    return np.stack([x, y, -np.ones_like(x)], axis=-1)


def generate_rays(intr: CameraIntrinsics, pose: CameraPose, pixels: np.ndarray):
    """Vectorized ray generation.

    Returns ``(origins, directions, cos_to_axis)``, each with one row per pixel.
    ``cos_to_axis`` converts ray length to z-depth: ``z = t * cos_to_axis``.
    """
    pixels = np.asarray(pixels).reshape(-1, 2)
    if np.any(pixels[:, 0] < 0) or np.any(pixels[:, 0] >= intr.width) or np.any(pixels[:, 1] < 0) or np.any(
        pixels[:, 1] >= intr.height
    ):
        raise DomainError("pixel outside image bounds")
    d_cam = camera_directions(intr, pixels)
    norm = np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_cam = d_cam / norm
    dirs = d_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.center, dirs.shape).copy()
    return origins, dirs, 1.0 / norm[:, 0]


def generate_ray(intr: CameraIntrinsics, pose: CameraPose, pixel, bounds) -> Ray:
    t_near, t_far = bounds
    if not t_near < t_far:
        raise DomainError(f"t_near must be below t_far, got {bounds}")
    u, v = pixel
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise DomainError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    origins, dirs, _ = generate_rays(intr, pose, np.array([[u, v]]))
    return Ray(origins[0], dirs[0], float(t_near), float(t_far))


def project_points(intr: CameraIntrinsics, pose: CameraPose, points: np.ndarray):
    """World points to continuous pixel coordinates and z-depth.

    Inverse of unprojecting pixel centers: a pixel ``(u, v)`` maps back to
    ``(u + 0.5, v + 0.5)``.
    """
    cam = pose.inverse().apply(points)
    z = -cam[..., 2]
    u = intr.fx * cam[..., 0] / z + intr.cx
    v = -intr.fy * cam[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1), z


def relative_transform(src: CameraPose, dst: CameraPose) -> RigidTransform:
    """Transform taking points in the ``src`` camera frame into the ``dst`` camera frame."""
    m = np.linalg.inv(dst.matrix) @ src.matrix
    rot = m[:3, :3]
    # re-orthonormalize against round-off from the 4x4 inverse
    u, _, vt = np.linalg.svd(rot)
    return RigidTransform(u @ vt, m[:3, 3])


def axis_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown axis {axis!r}")


def euler_rotation(alpha: float, beta: float, phi: float) -> np.ndarray:
    """Rotate about x by alpha, then y by beta, then z by phi (fixed axes)."""
    return axis_rotation("z", phi) @ axis_rotation("y", beta) @ axis_rotation("x", alpha)


def rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance in radians between two rotation matrices."""
    cos = (np.trace(a.T @ b) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, cos))))


def offset_pose(ref: CameraPose, angles: Sequence[float], pivot=None) -> CameraPose:
    """Rotate ``ref`` by Euler offsets expressed about its own camera axes.

    The camera orientation becomes ``ref.rotation @ euler_rotation(*angles)``.
    With ``pivot=None`` the camera center stays fixed; otherwise the camera
    orbits rigidly about the world point ``pivot``.
    """
    alpha, beta, phi = (float(a) for a in angles)
    for a in (alpha, beta, phi):
        if not math.isfinite(a) or abs(a) > math.pi:
            raise DomainError(f"Euler offsets must be finite and within [-pi, pi], got {angles}")
    r_off = euler_rotation(alpha, beta, phi)
    rotation = ref.rotation @ r_off
    if pivot is None:
        center = ref.center
    else:
        pivot = np.asarray(pivot, dtype=np.float64)
        world_rot = ref.rotation @ r_off @ ref.rotation.T
        center = pivot + world_rot @ (ref.center - pivot)
    return CameraPose(rotation, center)


def sample_euler_offsets(omega: float, rng: np.random.Generator) -> np.ndarray:
    if omega < 0:
        raise DomainError(f"omega must be non-negative, got {omega}")
    angles = rng.normal(0.0, omega, size=3) if omega > 0 else np.zeros(3)
    # keep offsets inside the valid Euler range; only relevant for very wide omega
    return np.clip(angles, -math.pi, math.pi)


def sample_unseen_pose(ref: CameraPose, omega: float, rng: np.random.Generator, pivot=None) -> CameraPose:
    """Draw alpha, beta, phi ~ N(0, omega^2) and apply them to ``ref`` (see :func:`offset_pose`)."""
    angles = sample_euler_offsets(omega, rng)
    if omega == 0:
        return ref
    return offset_pose(ref, angles, pivot)


def sample_dataset_pose(strategy: str, ref: CameraPose, pool, rng: np.random.Generator, omega: float = 0.0, pivot=None):
    """Pick an unseen pose either by Gaussian perturbation or uniformly from ``pool``.

    ``pool`` items are returned as-is, so they may be bare poses or
    ``(intrinsics, pose)`` pairs.
    """
    if strategy == "gaussian":
        return sample_unseen_pose(ref, omega, rng, pivot)
    if strategy == "pool":
        if not pool:
            raise ConfigurationError("pool pose sampling needs a non-empty camera pool")
        return pool[int(rng.integers(0, len(pool)))]
    raise ConfigurationError(f"unknown pose sampling strategy {strategy!r}")


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """Camera-to-world pose at ``eye`` looking toward ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    return CameraPose(np.stack([right, true_up, back], axis=-1), eye)
