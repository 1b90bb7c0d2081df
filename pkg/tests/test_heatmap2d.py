import numpy as np
import pytest

from oracles import brute_force_bone_maps, brute_force_joint_maps, fd_gradient, max_relative_error
from poselift.errors import InputError
from poselift.heatmap2d import (
    HeatmapStack,
    loss_l2d,
    render_bone_heatmaps,
    render_joint_heatmaps,
    sigma_schedule,
)
from poselift.skeleton import Pose2D, default_skeleton


def single_joint_pose(u, v):
    return Pose2D(coords=np.array([[u, v]], dtype=float))


def test_joint_peak_is_one():
    maps = render_joint_heatmaps(single_joint_pose(10.0, 10.0), 32, 32, 2.0)
    assert maps.data[0, 10, 10] == 1.0


def test_joint_gaussian_two_pixels_away():
    maps = render_joint_heatmaps(single_joint_pose(10.0, 10.0), 32, 32, 2.0)
    # distance 2 at sigma 2: exp(-4/8)
    assert maps.data[0, 12, 10] == np.exp(-0.5)
    assert maps.data[0, 12, 10] == pytest.approx(0.60653, abs=1e-5)


def test_far_offgrid_joint_is_effectively_zero():
    maps = render_joint_heatmaps(single_joint_pose(-50.0, -50.0), 64, 64, 2.0)
    assert maps.data.max() < 1e-100


def test_invisible_joint_renders_zero_map():
    pose = Pose2D(coords=np.array([[10.0, 10.0], [20.0, 20.0]]), visibility=np.array([False, True]))
    maps = render_joint_heatmaps(pose, 32, 32, 2.0)
    assert not maps.data[0].any()
    assert maps.data[1].any()


def test_joint_maps_match_brute_force_bitwise():
    rng = np.random.default_rng(10)
    for _ in range(5):
        coords = rng.uniform(-4.0, 36.0, size=(5, 2))
        vis = rng.random(5) > 0.2
        pose = Pose2D(coords=coords, visibility=vis)
        maps = render_joint_heatmaps(pose, 32, 24, 2.0)
        oracle = brute_force_joint_maps(coords, vis, 32, 24, 2.0)
        assert np.array_equal(maps.data, oracle)


def test_bone_segment_midpoint_is_one():
    skel = default_skeleton()
    coords = np.tile(np.array([[100.0, 100.0]]), (17, 1))
    coords[0] = (8.0, 10.0)
    coords[1] = (12.0, 10.0)  # bone (0, 1) spans x 8..12 at y 10
    maps = render_bone_heatmaps(Pose2D(coords=coords), skel, 32, 32, 2.0)
    assert maps.data[0, 10, 10] == 1.0
    assert maps.data[0, 10, 8] == 1.0
    assert maps.data[0, 10, 12] == 1.0


def test_bone_perpendicular_distance_two():
    skel = default_skeleton()
    coords = np.tile(np.array([[100.0, 100.0]]), (17, 1))
    coords[0] = (8.0, 10.0)
    coords[1] = (12.0, 10.0)
    maps = render_bone_heatmaps(Pose2D(coords=coords), skel, 32, 32, 2.0)
    assert maps.data[0, 12, 10] == np.exp(-0.5)


def test_degenerate_bone_equals_joint_gaussian_bitwise():
    skel = default_skeleton()
    coords = np.tile(np.array([[100.0, 100.0]]), (17, 1))
    coords[0] = (13.25, 9.5)
    coords[1] = (13.25, 9.5)
    bone = render_bone_heatmaps(Pose2D(coords=coords), skel, 32, 32, 2.0)
    joint = render_joint_heatmaps(Pose2D(coords=coords), 32, 32, 2.0)
    assert np.array_equal(bone.data[0], joint.data[0])


def test_bone_with_invisible_endpoint_is_zero():
    skel = default_skeleton()
    coords = np.tile(np.array([[10.0, 10.0]]), (17, 1))
    vis = np.ones(17, dtype=bool)
    vis[1] = False
    maps = render_bone_heatmaps(Pose2D(coords=coords, visibility=vis), skel, 32, 32, 2.0)
    assert not maps.data[0].any()  # bone (0, 1)
    assert not maps.data[1].any()  # bone (1, 2)
    assert maps.data[10].any()  # bone (0, 11) untouched


def test_bone_maps_match_brute_force_bitwise():
    skel = default_skeleton()
    rng = np.random.default_rng(11)
    for _ in range(3):
        coords = rng.uniform(0.0, 31.0, size=(17, 2))
        vis = np.ones(17, dtype=bool)
        pose = Pose2D(coords=coords, visibility=vis)
        maps = render_bone_heatmaps(pose, skel, 32, 24, 2.0)
        oracle = brute_force_bone_maps(coords, vis, skel.bones, 32, 24, 2.0)
        assert np.array_equal(maps.data, oracle)


def test_bone_lower_bound_against_endpoint_gaussians():
    # inside the perpendicular band of the segment the bone value dominates
    # the weaker endpoint Gaussian
    skel = default_skeleton()
    rng = np.random.default_rng(12)
    coords = rng.uniform(4.0, 28.0, size=(17, 2))
    pose = Pose2D(coords=coords)
    bones = render_bone_heatmaps(pose, skel, 32, 32, 2.0)
    joints = render_joint_heatmaps(pose, 32, 32, 2.0)
    xs, ys = np.meshgrid(np.arange(32.0), np.arange(32.0))
    for k, (a, b) in enumerate(skel.bones):
        ab = coords[b] - coords[a]
        denom = float(ab @ ab)
        if denom == 0.0:
            continue
        t = ((xs - coords[a, 0]) * ab[0] + (ys - coords[a, 1]) * ab[1]) / denom
        band = (t >= 0.0) & (t <= 1.0)
        floor = np.minimum(joints.data[a], joints.data[b])
        assert np.all(bones.data[k][band] >= floor[band] - 1e-15)


def test_max_lands_on_pixel_nearest_the_joint():
    rng = np.random.default_rng(13)
    for _ in range(10):
        u, v = rng.uniform(2.0, 29.0, size=2)
        maps = render_joint_heatmaps(single_joint_pose(u, v), 32, 32, 2.0)
        py, px = np.unravel_index(np.argmax(maps.data[0]), maps.data[0].shape)
        assert px == int(round(u)) and py == int(round(v))
        assert 0.0 < maps.data[0].max() <= 1.0


def test_kernel_shrink_monotonicity():
    pose = single_joint_pose(10.0, 10.0)
    wide = render_joint_heatmaps(pose, 32, 32, 3.0).data[0]
    narrow = render_joint_heatmaps(pose, 32, 32, 1.5).data[0]
    off_joint = np.ones((32, 32), dtype=bool)
    off_joint[10, 10] = False
    assert np.all(wide[off_joint] > narrow[off_joint])


def test_sigma_schedule_endpoints_and_midpoint():
    assert sigma_schedule(0, 20, 3.0, 1.0) == 3.0
    assert sigma_schedule(19, 20, 3.0, 1.0) == 1.0
    assert sigma_schedule(9, 20, 3.0, 1.0) == pytest.approx(3.0 - 2.0 * (9 / 19))
    assert sigma_schedule(9, 20, 3.0, 1.0) == pytest.approx(2.0526, abs=1e-4)


def test_sigma_schedule_rejects_bad_ranges():
    with pytest.raises(InputError):
        sigma_schedule(20, 20, 3.0, 1.0)
    with pytest.raises(InputError):
        sigma_schedule(-1, 20, 3.0, 1.0)
    with pytest.raises(InputError):
        sigma_schedule(0, 20, 1.0, 3.0)
    with pytest.raises(InputError):
        sigma_schedule(0, 20, 3.0, 0.0)


def test_loss_l2d_zero_at_identity():
    rng = np.random.default_rng(14)
    x = rng.random((4, 8, 8))
    value, grad = loss_l2d(x, x)
    assert value == 0.0
    assert not grad.any()


def test_loss_l2d_single_pixel():
    value, grad = loss_l2d(np.array([[[0.5]]]), np.array([[[1.0]]]))
    assert value == pytest.approx(0.25)
    assert grad[0, 0, 0] == pytest.approx(-1.0)


def test_loss_l2d_matches_brute_force_and_fd():
    rng = np.random.default_rng(15)
    pred = rng.random((17, 8, 8))
    gt = rng.random((17, 8, 8))
    value, grad = loss_l2d(pred, gt)
    brute = sum(
        (gt[n, y, x] - pred[n, y, x]) ** 2
        for n in range(17) for y in range(8) for x in range(8)
    )
    assert value == pytest.approx(brute, rel=1e-12)
    small_pred = rng.random((2, 4, 3))
    small_gt = rng.random((2, 4, 3))
    _, analytic = loss_l2d(small_pred, small_gt)
    numeric = fd_gradient(lambda p: loss_l2d(p, small_gt)[0], small_pred)
    assert max_relative_error(analytic, numeric) <= 1e-6


def test_loss_l2d_symmetric_scalar_and_shape_check():
    rng = np.random.default_rng(16)
    a = rng.random((3, 5, 5))
    b = rng.random((3, 5, 5))
    assert loss_l2d(a, b)[0] == pytest.approx(loss_l2d(b, a)[0], rel=1e-12)
    with pytest.raises(InputError):
        loss_l2d(a, rng.random((3, 5, 4)))


def test_stack_invariants_enforced():
    with pytest.raises(InputError):
        HeatmapStack(data=np.full((1, 4, 4), 1.5), width=4, height=4, sigma=2.0)
    with pytest.raises(InputError):
        HeatmapStack(data=np.zeros((1, 4, 4)), width=4, height=4, sigma=0.0)
    with pytest.raises(InputError):
        render_joint_heatmaps(single_joint_pose(1.0, 1.0), 0, 4, 2.0)
