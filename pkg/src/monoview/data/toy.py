"""Procedural textured-cube scene with analytic color and depth.

A cube rests on a round textured floor; both are ray traced exactly so any
camera gets ground-truth RGB and z-depth. Used for desk-scale experiments and
as a fixture writer for the Blender-format loader.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..geometry import CameraIntrinsics, CameraPose, euler_rotation, generate_rays, look_at
from ..warping import DepthMap
from .blender import orbit_angles, orbit_cameras, orbit_view_name
from .bundle import Camera, SceneBundle, UnseenSource, View
from .io import write_image, write_pfm

CUBE_HALF = 0.55
CUBE_ROTATION = euler_rotation(0.0, math.radians(30.0), 0.0)
FLOOR_Y = -CUBE_HALF
FLOOR_RADIUS = 1.9
FACE_COLORS = np.array([
    [0.85, 0.25, 0.20],  # +x
    [0.20, 0.55, 0.85],  # -x
    [0.95, 0.80, 0.25],  # +y
    [0.35, 0.75, 0.35],  # -y
    [0.70, 0.35, 0.80],  # +z
    [0.95, 0.55, 0.20],  # -z
])


def _cube_hit(origins, dirs):
    """Slab test in the cube frame; returns (t, face index) with t=inf on a miss."""
    rot = CUBE_ROTATION
    o = origins @ rot  # world -> cube frame (rot is orthonormal)
    d = dirs @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (-CUBE_HALF - o) * inv
        t1 = (CUBE_HALF - o) * inv
    t_min = np.minimum(t0, t1)
    t_max = np.maximum(t0, t1)
    t_enter = np.nanmax(t_min, axis=-1)
    t_exit = np.nanmin(t_max, axis=-1)
    hit = (t_enter <= t_exit) & (t_enter > 0)
    axis = np.nanargmax(t_min, axis=-1)
    p = o + t_enter[:, None] * d
    sign = np.sign(np.take_along_axis(p, axis[:, None], axis=1)[:, 0])
    face = axis * 2 + (sign < 0)
    return np.where(hit, t_enter, np.inf), face, p


_FACE_AXES = np.array([(1, 2), (1, 2), (0, 2), (0, 2), (0, 1), (0, 1)])


def _cube_texture(face, p_local):
    rows = np.arange(len(face))
    a = p_local[rows, _FACE_AXES[face, 0]]
    b = p_local[rows, _FACE_AXES[face, 1]]
    pattern = 0.5 + 0.5 * np.sin(2.0 * math.pi * 1.6 * a) * np.cos(2.0 * math.pi * 1.6 * b)
    return FACE_COLORS[face] * (0.55 + 0.45 * pattern[:, None])


def _floor_hit(origins, dirs):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (FLOOR_Y - origins[:, 1]) / dirs[:, 1]
    p = origins + t[:, None] * dirs
    ok = (t > 0) & (p[:, 0] ** 2 + p[:, 2] ** 2 <= FLOOR_RADIUS**2)
    return np.where(ok, t, np.inf), p


def _floor_texture(p):
    s = np.sin(2.0 * math.pi * 0.9 * p[:, 0]) * np.sin(2.0 * math.pi * 0.9 * p[:, 2])
    light = 0.6 + 0.3 * (0.5 + 0.5 * np.tanh(3.0 * s))
    return np.stack([light * 0.9, light * 0.85, light * 0.75], axis=-1)


def trace(origins: np.ndarray, dirs: np.ndarray):
    """Ray-trace the scene; returns (rgb on white, hit distance t, hit mask)."""
    t_cube, face, p_local = _cube_hit(origins, dirs)
    t_floor, p_floor = _floor_hit(origins, dirs)
    t = np.minimum(t_cube, t_floor)
    hit = np.isfinite(t)
    rgb = np.ones((origins.shape[0], 3))
    cube = hit & (t_cube <= t_floor)
    floor = hit & ~cube
    if cube.any():
        rgb[cube] = _cube_texture(face[cube], p_local[cube])
    if floor.any():
        rgb[floor] = _floor_texture(p_floor[floor])
    return rgb, t, hit


def render_toy(intr: CameraIntrinsics, pose: CameraPose):
    """Ground-truth image (H, W, 3), z-depth (H, W) and depth mask for any camera."""
    vv, uu = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    origins, dirs, cos = generate_rays(intr, pose, pixels)
    rgb, t, hit = trace(origins, dirs)
    z = np.where(hit, t * cos, 0.0)
    shape = (intr.height, intr.width)
    return rgb.reshape(*shape, 3).astype(np.float32), z.reshape(shape), hit.reshape(shape)


def toy_reference_camera(resolution: int = 64, fov_deg: float = 40.0) -> Camera:
    f = 0.5 * resolution / math.tan(0.5 * math.radians(fov_deg))
    intr = CameraIntrinsics(f, f, resolution / 2.0, resolution / 2.0, resolution, resolution)
    pose = look_at(eye=(0.0, 1.3, 3.2), target=(0.0, -0.15, 0.0))
    return Camera(intr, pose)


def make_toy_scene(resolution: int = 64, n_test: int = 60, test_span_deg: float = 30.0,
                   patch_size=(16, 16), near: float = 1.5, far: float = 5.5) -> SceneBundle:
    """Reference view, analytic depth and orbit test views with ground truth."""
    ref = toy_reference_camera(resolution)
    image, depth, mask = render_toy(ref.intrinsics, ref.pose)
    views = []
    angles = orbit_angles(n_test, test_span_deg)
    for i, (a, cam) in enumerate(zip(angles, orbit_cameras(ref, angles))):
        img, d, m = render_toy(cam.intrinsics, cam.pose)
        views.append(View(orbit_view_name(i), cam, img, d, m, {"yaw_deg": float(a)}))
    return SceneBundle(
        name="toy-cube", dataset="toy", image=image, depth=DepthMap(depth, mask), camera=ref, test_views=views,
        unseen=UnseenSource("gaussian", [], np.zeros(3)), near=near, far=far, white_background=True,
        patch_size=tuple(patch_size), source_path=None,
    )


def write_toy_blender(out_dir, resolution: int = 64, n_test: int = 60, test_span_deg: float = 30.0,
                      extra_frames: int = 0) -> Path:
    """Write the toy scene in Blender layout (transforms JSON, PNGs, PFM depth, orbit ground truth)."""
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    (out / "orbit").mkdir(exist_ok=True)
    ref = toy_reference_camera(resolution)
    cams = [ref] + orbit_cameras(ref, np.linspace(-20.0, 20.0, extra_frames)) if extra_frames else [ref]
    frames = []
    for i, cam in enumerate(cams):
        img, depth, mask = render_toy(cam.intrinsics, cam.pose)
        write_image(out / "train" / f"r_{i}.png", img)
        write_pfm(out / "depth" / f"r_{i}.pfm", np.where(mask, depth, 0.0))
        frames.append({"file_path": f"./train/r_{i}", "transform_matrix": cam.pose.matrix.tolist()})
    angle_x = 2.0 * math.atan(0.5 * resolution / ref.intrinsics.fx)
    with open(out / "transforms_train.json", "w") as fh:
        json.dump({"camera_angle_x": angle_x, "frames": frames}, fh, indent=2)
    for i, cam in enumerate(orbit_cameras(ref, orbit_angles(n_test, test_span_deg))):
        img, depth, mask = render_toy(cam.intrinsics, cam.pose)
        write_image(out / "orbit" / f"{orbit_view_name(i)}.png", img)
        write_pfm(out / "orbit" / f"{orbit_view_name(i)}.pfm", np.where(mask, depth, 0.0))
    return out
