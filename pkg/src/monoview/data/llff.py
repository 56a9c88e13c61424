"""LLFF forward-facing scenes (``poses_bounds.npy``)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import IngestionError
from ..geometry import CameraIntrinsics, CameraPose
from .bundle import Camera, SceneBundle, UnseenSource, View, nearest_cameras
from .io import load_depth_map, read_image

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG")


def llff_to_internal(pose_3x4: np.ndarray) -> np.ndarray:
    """LLFF camera axes (down, right, back) to (right, up, back); returns a 3x4 camera-to-world."""
    p = np.asarray(pose_3x4, dtype=np.float64)
    return np.concatenate([p[:, 1:2], -p[:, 0:1], p[:, 2:3], p[:, 3:4]], axis=1)


def internal_to_llff(pose_3x4: np.ndarray) -> np.ndarray:
    p = np.asarray(pose_3x4, dtype=np.float64)
    return np.concatenate([-p[:, 1:2], p[:, 0:1], p[:, 2:3], p[:, 3:4]], axis=1)


def parse_poses_bounds(arr: np.ndarray):
    """Split an (N, 17) array into 3x5 pose+hwf blocks and (N, 2) near/far bounds."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 17:
        raise IngestionError(f"poses_bounds array must be (N, 17), got {arr.shape}")
    return arr[:, :15].reshape(-1, 3, 5), arr[:, 15:17]


def _list_images(root: Path, image_dir):
    candidates = [image_dir] if image_dir else ["images"]
    for name in candidates:
        d = root / name
        if d.is_dir():
            return sorted(p for p in d.iterdir() if p.suffix in IMAGE_EXTS)
    raise IngestionError(f"no image directory found under {root} (tried {candidates})")


def load_llff_scene(path, ref_view_id: int = 0, image_dir: str | None = None, depth_path=None,
                    pool_size: int | None = None, patch_size=(63, 84)) -> SceneBundle:
    """Load a reference view, its camera pool and held-out test views.

    ``pool_size`` limits the unseen pool to the nearest cameras (all other
    views when None). Every non-reference view with an image is a test view.
    Bounds span the global near/far range of the file.
    """
    root = Path(path)
    pb_path = root / "poses_bounds.npy"
    try:
        arr = np.load(pb_path)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read {pb_path}: {exc}") from exc
    blocks, bounds = parse_poses_bounds(arr)
    images = _list_images(root, image_dir)
    if len(images) != len(blocks):
        raise IngestionError(f"{len(images)} images but {len(blocks)} poses in {pb_path}")
    if not 0 <= ref_view_id < len(blocks):
        raise IngestionError(f"reference view {ref_view_id} out of range (0..{len(blocks) - 1})")

    ref_img = read_image(images[ref_view_id])
    H, W = ref_img.shape[:2]
    # hwf is stored at the original capture resolution
    scale = W / blocks[ref_view_id][1, 4]
    cams = []
    for i, block in enumerate(blocks):
        f = block[2, 4]
        if f <= 0:
            raise IngestionError(f"view {i}: non-positive focal length {f}")
        intr = CameraIntrinsics(f * scale, f * scale, W / 2.0, H / 2.0, W, H)
        cams.append(Camera(intr, CameraPose.from_matrix(llff_to_internal(block[:, :4]))))
    ref = cams[ref_view_id]
    others = [i for i in range(len(cams)) if i != ref_view_id]
    depth_file = Path(depth_path) if depth_path else root / "depth" / f"{images[ref_view_id].stem}.pfm"
    depth = load_depth_map(depth_file, expected_size=(H, W))

    order = nearest_cameras(ref, [cams[i] for i in others], pool_size or len(others))
    pool = [cams[others[j]] for j in order]
    views = []
    for i in others:
        img = read_image(images[i])
        if img.shape[:2] != (H, W):
            raise IngestionError(f"{images[i]}: size {img.shape[:2]} differs from reference {(H, W)}")
        views.append(View(images[i].stem, cams[i], img, meta={"index": i}))

    return SceneBundle(
        name=root.name, dataset="llff", image=ref_img, depth=depth, camera=ref, test_views=views,
        unseen=UnseenSource("pool", pool), near=float(bounds[:, 0].min() * 0.9), far=float(bounds[:, 1].max() * 1.1),
        white_background=False, patch_size=tuple(patch_size), source_path=str(root),
    )
