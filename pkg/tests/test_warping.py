import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from warp_oracle import narrow_pair, oracle_warp, synthetic_scene

from monoview.errors import DomainError, ValidationError
from monoview.geometry import CameraIntrinsics, CameraPose, RigidTransform, euler_rotation, relative_transform
from monoview.warping import DepthMap, geometry_loss, masked_l1, smoothness_loss, warp_depth

D64 = torch.float64


def compare_with_oracle(src, ks, kd, transform):
    result = warp_depth(src, ks, kd, transform)
    values, winners, collisions = oracle_warp(src.values.tolist(), src.mask.tolist(), ks, kd, transform, kd.size)
    got_mask = result.mask.numpy()
    want_mask = np.zeros(kd.size, dtype=bool)
    for (r, c) in values:
        want_mask[r, c] = True
    assert np.array_equal(got_mask, want_mask)
    got = result.depth.values.numpy()
    for (r, c), z in values.items():
        assert got[r, c] == z  # bit-equal
        assert int(result.source_index[r, c]) == winners[(r, c)]
    return collisions


def test_warp_matches_scalar_oracle_on_random_scenes():
    rng = np.random.default_rng(2024)
    total_collisions = 0
    for _ in range(50):
        total_collisions += compare_with_oracle(*synthetic_scene(rng))
    assert total_collisions > 100  # the z-buffer was exercised


def test_warp_exact_ties_use_scan_order():
    # fronto-parallel plane, target focal halved: 2x2 source blocks share a pixel at equal depth
    ks = CameraIntrinsics(16, 16, 8, 8, 16, 16)
    kd = CameraIntrinsics(8, 8, 8, 8, 16, 16)
    src = DepthMap.full(3.0, (16, 16))
    res = warp_depth(src, ks, kd, RigidTransform.identity())
    values, winners, collisions = oracle_warp(src.values.tolist(), src.mask.tolist(), ks, kd,
                                              RigidTransform.identity(), (16, 16))
    assert collisions > 0
    for (r, c), idx in winners.items():
        assert int(res.source_index[r, c]) == idx
    compare_with_oracle(src, ks, kd, RigidTransform.identity())


def test_identity_warp_is_exact():
    rng = np.random.default_rng(0)
    depth = rng.uniform(1, 5, (16, 16))
    mask = rng.random((16, 16)) > 0.2
    k = CameraIntrinsics(20, 20, 8, 8, 16, 16)
    res = warp_depth(DepthMap(torch.tensor(depth), torch.tensor(mask)), k, k, RigidTransform.identity())
    assert torch.equal(res.mask, torch.tensor(mask))
    assert np.array_equal(res.depth.values.numpy()[mask], depth[mask])


def test_translated_camera_example():
    # point at pixel (50, 50), Z = 2; the target camera sits 0.5 to the right
    k = CameraIntrinsics(100, 100, 50, 50, 101, 101)
    depth = torch.zeros(101, 101, dtype=D64)
    mask = torch.zeros(101, 101, dtype=torch.bool)
    depth[50, 50], mask[50, 50] = 2.0, True
    src_pose = CameraPose.identity()
    dst_pose = CameraPose(np.eye(3), np.array([0.5, 0.0, 0.0]))
    res = warp_depth(DepthMap(depth, mask), k, k, relative_transform(src_pose, dst_pose))
    rows, cols = np.nonzero(res.mask.numpy())
    assert (int(cols[0]), int(rows[0])) == (25, 50) and len(rows) == 1
    assert float(res.depth.values[50, 25]) == 2.0


def test_collision_keeps_nearest():
    ks = CameraIntrinsics(10, 10, 1.0, 0.5, 2, 1)
    kd = CameraIntrinsics(0.01, 0.01, 0.5, 0.5, 1, 1)
    src = DepthMap(torch.tensor([[3.0, 1.0]], dtype=D64), torch.ones(1, 2, dtype=torch.bool))
    res = warp_depth(src, ks, kd, RigidTransform.identity())
    assert bool(res.mask[0, 0]) and float(res.depth.values[0, 0]) == 1.0
    assert int(res.source_index[0, 0]) == 1


def test_points_behind_or_outside_are_dropped():
    k = CameraIntrinsics(10, 10, 4, 4, 8, 8)
    src = DepthMap.full(2.0, (8, 8))
    # turn the target camera around: everything is behind it
    behind = RigidTransform(euler_rotation(0, math.pi, 0), np.zeros(3))
    assert not warp_depth(src, k, k, behind).mask.any()
    far_left = RigidTransform(np.eye(3), np.array([100.0, 0, 0]))
    assert not warp_depth(src, k, k, far_left).mask.any()


def test_warp_rejects_bad_intrinsics():
    with pytest.raises(ValidationError):
        warp_depth(DepthMap.full(1.0, (4, 4)), "K", CameraIntrinsics(4, 4, 2, 2, 4, 4), RigidTransform.identity())
    with pytest.raises(ValidationError):
        DepthMap(torch.tensor([[1.0, -1.0]]), torch.tensor([[True, True]]))


def test_warp_keeps_depth_gradients():
    k = CameraIntrinsics(10, 10, 4, 4, 8, 8)
    vals = torch.full((8, 8), 2.0, dtype=D64, requires_grad=True)
    res = warp_depth(DepthMap(vals, torch.ones(8, 8, dtype=torch.bool)), k, k,
                     RigidTransform(np.eye(3), np.array([0.0, 0.0, -0.5])))
    res.depth.values.sum().backward()
    assert vals.grad is not None and vals.grad.abs().sum() > 0


def test_round_trip_recovers_reference_depth():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(30):
        src, k, ref, other = narrow_pair(rng)
        fwd = warp_depth(src, k, k, relative_transform(ref, other))
        back = warp_depth(fwd.depth, k, k, relative_transform(other, ref))
        # pixels whose round trip returns to themselves: unoccluded and in bounds both ways
        fwd_src = fwd.source_index.reshape(-1)
        back_src = back.source_index.reshape(-1)
        for p in range(16 * 16):
            q = int(back_src[p])
            if q < 0 or int(fwd_src[q]) != p:
                continue
            z0 = float(src.values.reshape(-1)[p])
            z1 = float(back.depth.values.reshape(-1)[p])
            assert abs(z1 - z0) / z0 < 1e-3
            checked += 1
    assert checked > 30 * 256 * 0.5


def test_smoothness_examples():
    img = torch.full((12, 12, 3), 0.4, dtype=D64)
    yy, xx = torch.meshgrid(torch.arange(12, dtype=D64), torch.arange(12, dtype=D64), indexing="ij")
    assert float(smoothness_loss(torch.full((12, 12), 3.0, dtype=D64), img)) == 0.0
    assert float(smoothness_loss(xx.clone(), img)) == pytest.approx(0.0, abs=1e-12)
    assert float(smoothness_loss(2 * xx - yy + 1, img, factor=1)) == pytest.approx(0.0, abs=1e-12)
    # d = x^2: d_xx = 2 everywhere at full resolution
    assert float(smoothness_loss(xx**2, img, factor=1)) == pytest.approx(2.0, abs=1e-12)
    # after 2x average pooling the pooled values are 4 i^2 + 2 i + 0.5, so d_xx = 8
    assert float(smoothness_loss(xx**2, img, factor=2)) == pytest.approx(8.0, abs=1e-12)
    # d = x y: the cross term alone
    assert float(smoothness_loss(xx * yy, img, factor=1)) == pytest.approx(1.0, abs=1e-12)


def test_smoothness_edge_weight():
    yy, xx = torch.meshgrid(torch.arange(8, dtype=D64), torch.arange(8, dtype=D64), indexing="ij")
    img = torch.zeros(8, 8, 3, dtype=D64)
    img[:, :, :] = (xx**2)[..., None] * 0.1  # image Laplacian 0.2 everywhere
    val = float(smoothness_loss(xx**2, img, factor=1))
    assert val == pytest.approx(2.0 * math.exp(-0.2), abs=1e-12)


def test_smoothness_too_small():
    with pytest.raises(DomainError):
        smoothness_loss(torch.zeros(5, 5), torch.zeros(5, 5, 3), factor=2)
    smoothness_loss(torch.zeros(6, 6), torch.zeros(6, 6, 3), factor=2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_smoothness_nonnegative_and_zero_iff_affine(seed, affine):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:8, 0:8].astype(np.float64)
    d = rng.normal() * xx + rng.normal() * yy + rng.normal()
    if not affine:
        d = d + rng.normal(0, 1, d.shape)
    img = torch.tensor(rng.random((8, 8, 3)))
    val = float(smoothness_loss(torch.tensor(d), img, factor=1))
    assert val >= 0
    assert (val < 1e-9) == affine


def test_smoothness_gradient_finite_differences():
    rng = np.random.default_rng(1)
    d = torch.tensor(rng.uniform(1, 3, (8, 8)), requires_grad=True)
    img = torch.tensor(rng.random((8, 8, 3)), requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: smoothness_loss(x, img, factor=2), (d,), eps=1e-6, atol=1e-8,
                                    rtol=1e-4)
    smoothness_loss(d, img).backward()
    assert img.grad is None  # the image weight is a constant


def test_masked_l1_empty():
    val, ok = masked_l1(torch.ones(3), torch.zeros(3), torch.zeros(3, dtype=torch.bool))
    assert float(val) == 0.0 and not ok


def full_map(values):
    return DepthMap(values, torch.ones(values.shape, dtype=torch.bool))


def test_geometry_loss_examples():
    d = torch.full((8, 8), 2.0, dtype=D64)
    img = torch.rand(8, 8, 3, dtype=D64)
    terms = geometry_loss(d, full_map(d.clone()), d, full_map(d.clone()), 0.1, d, img)
    assert float(terms.total) == 0.0
    delta = 0.25
    terms = geometry_loss(d, full_map(d + delta), d, full_map(d + delta), 0.1, d, img)
    assert float(terms.total) == pytest.approx(2 * delta, abs=1e-12)
    yy, xx = torch.meshgrid(torch.arange(8, dtype=D64), torch.arange(8, dtype=D64), indexing="ij")
    quad = xx**2 + 1
    flat = torch.full((8, 8, 3), 0.5, dtype=D64)
    terms = geometry_loss(quad, full_map(quad.clone()), quad, full_map(quad.clone()), 0.1, quad, flat,
                          smooth_factor=1)
    assert float(terms.smooth) == pytest.approx(2.0, abs=1e-12)
    assert float(terms.total) == pytest.approx(0.2, abs=1e-12)


def test_geometry_loss_swaps_terms():
    rng = np.random.default_rng(3)
    a, b = torch.tensor(rng.uniform(1, 2, (6, 6))), torch.tensor(rng.uniform(1, 2, (6, 6)))
    wa, wb = torch.tensor(rng.uniform(1, 2, (6, 6))), torch.tensor(rng.uniform(1, 2, (6, 6)))
    ma, mb = torch.tensor(rng.random((6, 6)) > 0.3), torch.tensor(rng.random((6, 6)) > 0.3)
    t1 = geometry_loss(a, DepthMap(wa, ma), b, DepthMap(wb, mb), 0.0)
    t2 = geometry_loss(b, DepthMap(wb, mb), a, DepthMap(wa, ma), 0.0)
    assert float(t1.l1_a) == float(t2.l1_b) and float(t1.l1_b) == float(t2.l1_a)
    assert float(t1.total) == pytest.approx(float(t2.total), abs=1e-15)


def test_geometry_loss_empty_intersection_reported():
    d = torch.ones(6, 6, dtype=D64)
    empty = DepthMap(torch.zeros(6, 6, dtype=D64), torch.zeros(6, 6, dtype=torch.bool))
    terms = geometry_loss(d, empty, d, full_map(d + 1), 0.0)
    assert terms.empty == ("l1_a",)
    assert float(terms.total) == pytest.approx(1.0)
