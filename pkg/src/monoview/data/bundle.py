"""The in-memory scene description consumed by the trainer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import IngestionError, ValidationError
from ..geometry import CameraIntrinsics, CameraPose
from ..warping import DepthMap


@dataclass(eq=False)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose

    def to_dict(self):
        return {"intrinsics": self.intrinsics.to_dict(), "pose": self.pose.to_list()}

    @classmethod
    def from_dict(cls, d):
        return cls(CameraIntrinsics.from_dict(d["intrinsics"]), CameraPose.from_list(d["pose"]))

    def allclose(self, other: "Camera", atol=1e-6):
        a, b = self.intrinsics, other.intrinsics
        same_k = np.allclose([a.fx, a.fy, a.cx, a.cy], [b.fx, b.fy, b.cx, b.cy], atol=atol)
        return same_k and a.size == b.size and self.pose.allclose(other.pose, atol)


@dataclass(eq=False)
class View:
    """A camera with optional ground truth (image (H, W, 3), z-depth (H, W) and its mask)."""

    name: str
    camera: Camera
    image: np.ndarray | None = None
    depth: np.ndarray | None = None
    depth_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class UnseenSource:
    """Where unseen training poses come from: Gaussian offsets or a camera pool."""

    strategy: str = "gaussian"
    pool: list = field(default_factory=list)  # list[Camera]
    pivot: np.ndarray | None = None

    def to_dict(self):
        return {"strategy": self.strategy, "pool": [c.to_dict() for c in self.pool],
                "pivot": None if self.pivot is None else np.asarray(self.pivot).tolist()}

    @classmethod
    def from_dict(cls, d):
        pivot = d.get("pivot")
        return cls(d["strategy"], [Camera.from_dict(c) for c in d.get("pool", [])],
                   None if pivot is None else np.asarray(pivot, dtype=np.float64))


@dataclass(eq=False)
class SceneBundle:
    name: str
    dataset: str
    image: np.ndarray
    depth: DepthMap
    camera: Camera
    test_views: list = field(default_factory=list)
    unseen: UnseenSource = field(default_factory=UnseenSource)
    near: float = 2.0
    far: float = 6.0
    white_background: bool = False
    patch_size: tuple = (64, 64)
    source_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        h, w = self.camera.intrinsics.size
        if self.image.shape != (h, w, 3):
            raise ValidationError(f"reference image {self.image.shape} does not match camera size {h}x{w}")
        if self.depth.shape != (h, w):
            raise ValidationError(f"reference depth {self.depth.shape} is not aligned with the {h}x{w} image")
        if not 0 <= self.near < self.far:
            raise ValidationError(f"scene bounds must satisfy 0 <= near < far, got ({self.near}, {self.far})")
        if self.unseen.strategy == "pool" and not self.unseen.pool:
            raise ValidationError("pool strategy requires unseen cameras")

    @property
    def intrinsics(self):
        return self.camera.intrinsics

    @property
    def pose(self):
        return self.camera.pose

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "camera": self.camera.to_dict(),
            "test_views": [{"name": v.name, "camera": v.camera.to_dict(), "meta": v.meta} for v in self.test_views],
            "unseen": self.unseen.to_dict(),
            "near": self.near,
            "far": self.far,
            "white_background": self.white_background,
            "patch_size": list(self.patch_size),
            "source_path": self.source_path,
        }

    def save_metadata(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2)


def load_metadata(path) -> dict:
    """Reload cameras written by :meth:`SceneBundle.save_metadata`."""
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read scene metadata {path}: {exc}") from exc
    meta["camera"] = Camera.from_dict(meta["camera"])
    meta["test_views"] = [dict(v, camera=Camera.from_dict(v["camera"])) for v in meta["test_views"]]
    meta["unseen"] = UnseenSource.from_dict(meta["unseen"])
    return meta


def bounds_from_depth(depth: DepthMap, margin_near: float = 0.8, margin_far: float = 1.25):
    values, mask = depth.numpy()
    if not mask.any():
        raise IngestionError("reference depth has no valid pixels; cannot derive scene bounds")
    valid = values[mask]
    return float(valid.min() * margin_near), float(valid.max() * margin_far)


def nearest_cameras(ref: Camera, cameras, k: int):
    """Indices of the ``k`` cameras whose centers are closest to ``ref``'s."""
    d = [float(np.linalg.norm(c.pose.center - ref.pose.center)) for c in cameras]
    return [int(i) for i in np.argsort(d, kind="stable")[:k]]
