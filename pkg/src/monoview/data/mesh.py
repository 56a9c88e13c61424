"""Rasterize reference depth from a triangle mesh (for synthetic scenes)."""

from __future__ import annotations

import numpy as np

from ..errors import IngestionError
from ..geometry import CameraIntrinsics, CameraPose

NEAR_EPS = 1e-6


def read_obj(path):
    """Vertices (V, 3) and triangle indices (F, 3) from a Wavefront OBJ; polygons are fanned."""
    verts, faces = [], []
    try:
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot parse OBJ mesh {path}: {exc}") from exc
    if not verts or not faces:
        raise IngestionError(f"{path}: mesh has no vertices or faces")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def rasterize_depth(vertices, faces, intr: CameraIntrinsics, pose: CameraPose):
    """Z-buffered z-depth of the mesh sampled at pixel centers.

    Depth is interpolated perspective-correctly (linear in 1/z). Triangles
    crossing the image plane are skipped. Returns ``(depth, mask)``.
    """
    cam = pose.inverse().apply(vertices)
    z = -cam[:, 2]
    safe = np.where(z > NEAR_EPS, z, 1.0)
    u = intr.fx * cam[:, 0] / safe + intr.cx
    v = -intr.fy * cam[:, 1] / safe + intr.cy
    depth = np.full((intr.height, intr.width), np.inf)
    for tri in faces:
        if np.any(z[tri] <= NEAR_EPS):
            continue
        (u0, u1, u2), (v0, v1, v2) = u[tri], v[tri]
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area) < 1e-12:
            continue
        c0 = max(int(np.floor(min(u0, u1, u2) - 0.5)), 0)
        c1 = min(int(np.ceil(max(u0, u1, u2) - 0.5)), intr.width - 1)
        r0 = max(int(np.floor(min(v0, v1, v2) - 0.5)), 0)
        r1 = min(int(np.ceil(max(v0, v1, v2) - 0.5)), intr.height - 1)
        if c0 > c1 or r0 > r1:
            continue
        pu, pv = np.meshgrid(np.arange(c0, c1 + 1) + 0.5, np.arange(r0, r1 + 1) + 0.5)
        w0 = ((u1 - pu) * (v2 - pv) - (u2 - pu) * (v1 - pv)) / area
        w1 = ((u2 - pu) * (v0 - pv) - (u0 - pu) * (v2 - pv)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        inv_z = w0 / z[tri[0]] + w1 / z[tri[1]] + w2 / z[tri[2]]
        zz = np.where(inside, 1.0 / inv_z, np.inf)
        block = depth[r0:r1 + 1, c0:c1 + 1]
        np.minimum(block, zz, out=block)
    mask = np.isfinite(depth)
    return np.where(mask, depth, 0.0), mask
