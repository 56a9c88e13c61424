"""Per-point scalar reimplementation of forward depth warping with a brute-force z-buffer."""

import math

import numpy as np
import torch

from monoview.geometry import (CameraIntrinsics, RigidTransform, euler_rotation, generate_rays, look_at,
                               offset_pose)
from monoview.warping import DepthMap

TIE_EPS = 1e-6


def project_point(u, v, z, ks, kd, rot, trans):
    """Source pixel (u, v) at z-depth z -> (col, row, target depth) or None if behind the target camera."""
    x_s = (u + 0.5 - ks.cx) / ks.fx * z
    y_s = -(v + 0.5 - ks.cy) / ks.fy * z
    z_s = -z
    x_d = rot[0][0] * x_s + rot[0][1] * y_s + rot[0][2] * z_s + trans[0]
    y_d = rot[1][0] * x_s + rot[1][1] * y_s + rot[1][2] * z_s + trans[1]
    z_d = rot[2][0] * x_s + rot[2][1] * y_s + rot[2][2] * z_s + trans[2]
    depth = -z_d
    if not depth > 0:
        return None
    u_d = kd.fx * x_d / depth + kd.cx
    v_d = -kd.fy * y_d / depth + kd.cy
    if not (math.isfinite(u_d) and math.isfinite(v_d)):
        return None
    return math.floor(u_d), math.floor(v_d), depth


def oracle_warp(depth, mask, ks, kd, transform, size):
    """Returns (depth dict {(row, col): value}, winner dict {(row, col): source index}, collision count)."""
    height, width = size
    rot = [[float(transform.rotation[i, j]) for j in range(3)] for i in range(3)]
    trans = [float(transform.translation[i]) for i in range(3)]
    groups = {}
    src_h, src_w = len(depth), len(depth[0])
    for v in range(src_h):
        for u in range(src_w):
            if not mask[v][u]:
                continue
            hit = project_point(u, v, float(depth[v][u]), ks, kd, rot, trans)
            if hit is None:
                continue
            col, row, z = hit
            if 0 <= col < width and 0 <= row < height:
                groups.setdefault((row, col), []).append((z, v * src_w + u))
    values, winners = {}, {}
    collisions = 0
    for key, entries in groups.items():
        collisions += len(entries) > 1
        zmin = min(z for z, _ in entries)
        idx = min(i for z, i in entries if z <= zmin + TIE_EPS)
        winners[key] = idx
        values[key] = next(z for z, i in entries if i == idx)
    return values, winners, collisions


def synthetic_scene(rng, size=16):
    """Piecewise depth (slanted background plus boxes), random holes, random cameras."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    depth = rng.uniform(2, 6) + rng.uniform(-0.1, 0.1) * xx + rng.uniform(-0.1, 0.1) * yy
    for _ in range(rng.integers(1, 4)):
        r0, c0 = rng.integers(0, h - 3, 2)
        depth[r0:r0 + rng.integers(2, 8), c0:c0 + rng.integers(2, 8)] = rng.uniform(1, 3)
    if rng.random() < 0.3:
        depth += rng.normal(0, 0.05, depth.shape)
    mask = rng.random((h, w)) > 0.1
    f_src = rng.uniform(8, 30)
    ks = CameraIntrinsics(f_src, f_src * rng.uniform(0.9, 1.1), w / 2, h / 2, w, h)
    # some targets zoom out so several sources share one pixel
    f_dst = f_src * rng.choice([0.3, 0.6, 1.0, 1.4])
    kd = CameraIntrinsics(f_dst, f_dst, rng.uniform(4, 12), rng.uniform(4, 12), w, h)
    rot = euler_rotation(*rng.uniform(-0.4, 0.4, 3))
    trans = rng.normal(0, 0.6, 3)
    return DepthMap(torch.tensor(depth), torch.tensor(mask)), ks, kd, RigidTransform(rot, trans)


def narrow_pair(rng):
    # long focal length keeps nearest-pixel rounding error (about 0.18 / f relative at 15 deg) under 1e-3
    size, f = 16, 256.0
    k = CameraIntrinsics(f, f, size / 2, size / 2, size, size)
    ref = look_at((0.0, 0.0, 5.0), (0.0, 0.0, 0.0))
    angles = rng.uniform(-1, 1, 3)
    angles *= math.radians(15) * rng.uniform(0.2, 1.0) / np.linalg.norm(angles)
    other = offset_pose(ref, angles, pivot=np.zeros(3))
    # known geometry: a tilted plane through the pivot, ray traced exactly
    normal = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 1.0])
    normal /= np.linalg.norm(normal)
    vv, uu = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    o, d, cos = generate_rays(k, ref, np.stack([uu.ravel(), vv.ravel()], -1))
    t = -(o @ normal) / (d @ normal)
    depth = (t * cos).reshape(size, size)
    return DepthMap(torch.tensor(depth), torch.ones(size, size, dtype=torch.bool)), k, ref, other
