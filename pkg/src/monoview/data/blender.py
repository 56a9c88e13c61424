"""Blender-synthetic scenes (``transforms_*.json``)."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..errors import IngestionError
from ..geometry import CameraIntrinsics, CameraPose, offset_pose
from ..warping import DepthMap
from .bundle import Camera, SceneBundle, UnseenSource, View
from .io import load_depth_map, read_image, read_pfm, resize_depth, resize_image

ORBIT_SPAN_DEG = 30.0
ORBIT_VIEWS = 60


def focal_from_angle(camera_angle_x: float, width: int) -> float:
    return 0.5 * width / math.tan(0.5 * camera_angle_x)


def orbit_angles(n_views: int = ORBIT_VIEWS, span_deg: float = ORBIT_SPAN_DEG) -> np.ndarray:
    """Evenly spaced yaw angles (degrees) covering ``[-span, span]`` inclusive."""
    return np.linspace(-span_deg, span_deg, n_views)


def orbit_view_name(i: int) -> str:
    return f"orbit_{i:03d}"


def orbit_cameras(ref: Camera, angles_deg, pivot=(0.0, 0.0, 0.0)):
    """Cameras orbiting ``pivot`` about the reference camera's up (y) axis."""
    return [Camera(ref.intrinsics, offset_pose(ref.pose, (0.0, math.radians(a), 0.0), pivot)) for a in angles_deg]


def _image_path(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix:
        return p
    return p.with_suffix(".png")


def _find_depth(root: Path, image_path: Path, explicit):
    if explicit is not None:
        return Path(explicit)
    candidates = [root / "depth" / f"{image_path.stem}.pfm", image_path.with_name(image_path.stem + "_depth.pfm")]
    for c in candidates:
        if c.exists():
            return c
    raise IngestionError("reference depth not found; looked for " + ", ".join(str(c) for c in candidates))


def read_blender_cameras(path, split: str = "train"):
    """``(image_path, Camera)`` for every frame; image sizes are read from the files."""
    root = Path(path)
    tf_path = root / f"transforms_{split}.json"
    try:
        with open(tf_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read transforms file {tf_path}: {exc}") from exc
    out = []
    for frame in meta.get("frames", []):
        img_path = _image_path(root, frame["file_path"])
        if not img_path.exists():
            raise IngestionError(f"missing image {img_path}")
        h, w = read_image(img_path).shape[:2]
        f = focal_from_angle(float(meta["camera_angle_x"]), w)
        pose = CameraPose.from_matrix(np.asarray(frame["transform_matrix"], dtype=np.float64))
        out.append((img_path, Camera(CameraIntrinsics(f, f, w / 2.0, h / 2.0, w, h), pose)))
    return out


def load_blender_scene(path, ref_view_id: int = 0, split: str = "train", depth_path=None, downscale: int = 1,
                       near: float = 2.0, far: float = 6.0, n_test: int = ORBIT_VIEWS,
                       test_span_deg: float = ORBIT_SPAN_DEG, orbit_dir: str = "orbit",
                       patch_size=(64, 64)) -> SceneBundle:
    """Load one reference view and set up the orbit test protocol.

    Test cameras orbit the world origin about the reference camera's y axis
    in ``[-test_span_deg, test_span_deg]``. Ground-truth images for them are
    read from ``<path>/<orbit_dir>/orbit_###.png`` when present.
    """
    root = Path(path)
    tf_path = root / f"transforms_{split}.json"
    try:
        with open(tf_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IngestionError(f"missing transforms file {tf_path}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{tf_path}: invalid JSON ({exc})") from exc
    frames = meta.get("frames", [])
    if "camera_angle_x" not in meta:
        raise IngestionError(f"{tf_path}: missing camera_angle_x")
    if not 0 <= ref_view_id < len(frames):
        raise IngestionError(f"{tf_path}: reference view {ref_view_id} out of range (0..{len(frames) - 1})")
    frame = frames[ref_view_id]
    img_path = _image_path(root, frame["file_path"])
    if not img_path.exists():
        raise IngestionError(f"missing image {img_path}")
    image = read_image(img_path, white_background=True)
    h0, w0 = image.shape[:2]
    fx = focal_from_angle(float(meta["camera_angle_x"]), w0)
    intr = CameraIntrinsics(fx, fx, w0 / 2.0, h0 / 2.0, w0, h0)

    depth_file = _find_depth(root, img_path, depth_path)
    depth = load_depth_map(depth_file, expected_size=(h0, w0))
    if downscale > 1:
        size = (h0 // downscale, w0 // downscale)
        image = resize_image(image, size)
        values, mask = depth.numpy()
        values, mask = resize_depth(values, mask, size)
        depth = DepthMap(values, mask)
        intr = intr.scaled(1.0 / downscale)

    pose = CameraPose.from_matrix(np.asarray(frame["transform_matrix"], dtype=np.float64))
    ref = Camera(intr, pose)
    angles = orbit_angles(n_test, test_span_deg)
    views = []
    for i, (a, cam) in enumerate(zip(angles, orbit_cameras(ref, angles))):
        gt = root / orbit_dir / f"{orbit_view_name(i)}.png"
        img = resize_image(read_image(gt, white_background=True), intr.size) if gt.exists() else None
        gt_depth = root / orbit_dir / f"{orbit_view_name(i)}.pfm"
        d = m = None
        if gt_depth.exists():
            d = read_pfm(gt_depth)
            m = np.isfinite(d) & (d > 0)
            if d.shape != intr.size:
                d, m = resize_depth(d, m, intr.size)
        views.append(View(orbit_view_name(i), cam, img, d, m, {"yaw_deg": float(a)}))

    return SceneBundle(
        name=root.name,
        dataset="blender",
        image=image,
        depth=depth,
        camera=ref,
        test_views=views,
        unseen=UnseenSource("gaussian", [], np.zeros(3)),
        near=near,
        far=far,
        white_background=True,
        patch_size=tuple(patch_size),
        source_path=str(root),
    )
