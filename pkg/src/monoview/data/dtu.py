"""DTU scenes with per-camera 3x4 projection matrices (``pos_###.txt``)."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import scipy.linalg

from ..errors import IngestionError
from ..geometry import CameraIntrinsics, CameraPose
from .bundle import Camera, SceneBundle, UnseenSource, View, bounds_from_depth, nearest_cameras
from .io import load_depth_map, read_image

DEFAULT_REF_VIEW = 2
POOL_SIZE = 10
# OpenCV camera axes (x right, y down, z forward) to the internal (x right, y up, z back)
_CV_TO_GL = np.diag([1.0, -1.0, -1.0])


def decompose_projection(P: np.ndarray):
    """Split ``P ~ K [R | t]`` into K (with K[2, 2] = 1), a proper rotation R and t.

    ``P`` is only defined up to scale; the returned factors reproduce
    ``P / s`` where ``s`` is the positive or negative scale removed.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 4):
        raise IngestionError(f"projection matrix must be 3x4, got {P.shape}")
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = -M
    K, R = scipy.linalg.rq(M)
    signs = np.diag(np.sign(np.diag(K)))
    K = K @ signs
    R = signs @ R
    scale = K[2, 2]
    K = K / scale
    t = np.linalg.solve(K, P[:, 3] / scale)
    return K, R, t


def recompose_projection(K, R, t) -> np.ndarray:
    return K @ np.concatenate([R, np.asarray(t).reshape(3, 1)], axis=1)


def camera_from_projection(P, width: int, height: int) -> Camera:
    K, R, t = decompose_projection(P)
    intr = CameraIntrinsics(K[0, 0], K[1, 1], K[0, 2], K[1, 2], width, height)
    c2w_rot = R.T @ _CV_TO_GL
    center = -R.T @ t
    return Camera(intr, CameraPose(c2w_rot, center))


def read_projection(path) -> np.ndarray:
    try:
        values = np.loadtxt(path, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read projection matrix {path}: {exc}") from exc
    if values.size != 12:
        raise IngestionError(f"{path}: expected 12 numbers, found {values.size}")
    return values.reshape(3, 4)


def _camera_files(root: Path):
    for sub in ("cameras", "Calibration/cal18", "."):
        d = root / sub
        files = sorted(d.glob("pos_*.txt")) if d.is_dir() else []
        if files:
            return files
    return []


def load_dtu_scene(path, ref_view_id: int = DEFAULT_REF_VIEW, depth_path=None, pool_size: int = POOL_SIZE,
                   near: float | None = None, far: float | None = None, patch_size=(56, 70)) -> SceneBundle:
    """Reference camera plus its ``pool_size`` nearest cameras as unseen pool and eval set.

    Cameras are indexed in the sorted order of their ``pos_###.txt`` files.
    Bounds default to a margin around the reference depth range.
    """
    root = Path(path)
    cam_files = _camera_files(root)
    if not cam_files:
        raise IngestionError(f"no pos_###.txt camera files under {root}")
    image_dir = root / "images"
    images = sorted(p for p in image_dir.glob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg")) \
        if image_dir.is_dir() else []
    if len(images) != len(cam_files):
        raise IngestionError(f"{len(images)} images in {image_dir} but {len(cam_files)} camera files")
    if not 0 <= ref_view_id < len(cam_files):
        raise IngestionError(f"reference camera {ref_view_id} out of range (0..{len(cam_files) - 1})")

    ref_img = read_image(images[ref_view_id])
    H, W = ref_img.shape[:2]
    cams = [camera_from_projection(read_projection(f), W, H) for f in cam_files]
    ref = cams[ref_view_id]

    others = [i for i in range(len(cams)) if i != ref_view_id]
    order = nearest_cameras(ref, [cams[i] for i in others], pool_size)
    chosen = [others[j] for j in order]
    views = []
    for i in chosen:
        img = read_image(images[i])
        if img.shape[:2] != (H, W):
            raise IngestionError(f"{images[i]}: size {img.shape[:2]} differs from reference {(H, W)}")
        num = re.findall(r"\d+", cam_files[i].stem)
        views.append(View(f"cam_{num[-1] if num else i}", cams[i], img, meta={"index": i}))

    depth_file = Path(depth_path) if depth_path else root / "depth" / f"{images[ref_view_id].stem}.pfm"
    depth = load_depth_map(depth_file, expected_size=(H, W))
    if near is None or far is None:
        d_near, d_far = bounds_from_depth(depth)
        near = d_near if near is None else near
        far = d_far if far is None else far

    return SceneBundle(
        name=root.name, dataset="dtu", image=ref_img, depth=depth, camera=ref, test_views=views,
        unseen=UnseenSource("pool", [cams[i] for i in chosen]), near=float(near), far=float(far),
        white_background=False, patch_size=tuple(patch_size), source_path=str(root),
    )
