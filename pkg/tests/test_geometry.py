import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthlab import autodiff as ad
from depthlab.geometry import (
    Intrinsics,
    PoseParams,
    axis_angle_to_matrix,
    bilinear_sample,
    inverse_warp,
    matrix_to_axis_angle,
    project,
    relative_pose,
)

K = Intrinsics(40.0, 40.0, 15.5, 9.5)


def test_zero_rotation_is_identity():
    assert np.array_equal(axis_angle_to_matrix(np.zeros(3)), np.eye(3))


def test_quarter_turn_about_z():
    R = axis_angle_to_matrix(np.array([0.0, 0.0, np.pi / 2]))
    assert np.allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_rotation_orthonormal_and_log_inverts(r):
    R = axis_angle_to_matrix(np.array(r))
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(axis_angle_to_matrix(matrix_to_axis_angle(R)), R, atol=1e-10)


def test_pose_compose_inverse_identity(rng):
    p = PoseParams(rng.normal(0, 0.3, 3), rng.normal(0, 1, 3))
    q = p.compose(p.inverse())
    assert np.allclose(q.matrix(), np.eye(4), atol=1e-12)
    assert np.allclose(relative_pose(p, p).matrix(), np.eye(4), atol=1e-12)


def test_identity_projection_is_pixel_grid(rng):
    depth = rng.uniform(1, 5, (20, 32))
    pf = project(depth, PoseParams.identity(), K)
    ys, xs = np.mgrid[0:20, 0:32]
    assert np.array_equal(pf.flow[..., 0], xs.astype(float))
    assert np.array_equal(pf.flow[..., 1], ys.astype(float))
    assert pf.valid.all()


def test_x_translation_shifts_by_fx_b_over_z():
    b, z = 0.25, 4.0
    pf = project(np.full((20, 32), z), PoseParams(np.zeros(3), [b, 0, 0]), K)
    ys, xs = np.mgrid[0:20, 0:32]
    assert np.allclose(pf.flow[..., 0] - xs, K.fx * b / z, atol=1e-12)


def test_points_behind_camera_invalid():
    pf = project(np.full((4, 4), 1.0), PoseParams(np.zeros(3), [0, 0, -2.0]), K)
    assert not pf.valid.any()


def test_bilinear_integer_and_midpoint():
    src = np.array([[[0.0], [1.0]]])
    out, valid = bilinear_sample(src, np.array([[[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]]]))
    assert out[0, :, 0].tolist() == [0.0, 1.0, 0.5]
    assert valid.all()


def test_bilinear_u_gradient_is_pixel_difference():
    src = np.array([[[0.2], [0.9], [0.4]]])
    flow = ad.Variable(np.array([[[0.5, 0.0]]]))
    out, _ = bilinear_sample(src, flow)
    (g,) = ad.grad(ad.sum_(out), [flow])
    assert g[0, 0, 0] == pytest.approx(0.9 - 0.2, abs=1e-15)
    eps = 1e-6
    fd = (bilinear_sample(src, flow.value + [eps, 0])[0] - bilinear_sample(src, flow.value - [eps, 0])[0]) / (2 * eps)
    assert g[0, 0, 0] == pytest.approx(float(fd[0, 0, 0]), rel=1e-8)


def test_out_of_bounds_clamps_and_invalidates():
    src = np.arange(6.0).reshape(2, 3, 1)
    out, valid = bilinear_sample(src, np.array([[[-3.0, 0.0], [7.0, 1.0]]]))
    assert out[0, :, 0].tolist() == [0.0, 5.0]
    assert not valid.any()


def test_identity_pose_warp_returns_source(rng):
    src = rng.random((20, 32, 3))
    out, valid = inverse_warp(src, rng.uniform(1, 5, (20, 32)), PoseParams.identity(), K)
    assert np.array_equal(out, src)
    assert valid.all()


def test_constant_shift_on_checkerboard_matches_brute_force():
    h, w = 8, 12
    board = ((np.add.outer(np.arange(h), np.arange(w)) % 2).astype(float))[..., None]
    shift = 2.0  # integer pixels -> exact resample
    z = 5.0
    b = shift * z / K.fx
    out, valid = inverse_warp(board, np.full((h, w), z), PoseParams(np.zeros(3), [b, 0, 0]), K)
    expected = np.empty_like(board)
    for y in range(h):
        for x in range(w):
            expected[y, x] = board[y, min(int(round(x + shift)), w - 1)]
    assert np.allclose(out, expected, atol=1e-12)
    assert valid[:, : w - 2].all() and not valid[:, w - 2 :].any()


def test_gt_warp_reconstructs_rendered_triplet():
    from depthlab.synth import generate_dataset

    for seed in range(3):
        rec = generate_dataset("ground_and_walls", seed, 1, 128, 192)[0]
        for src, pose in zip(rec.sources, rec.relative_poses):
            out, valid = inverse_warp(src, rec.target_depth, pose, rec.K)
            err = np.abs(out - rec.target)[valid].mean()
            assert err < 2 / 255, (seed, err)


def test_warp_gradients_match_finite_differences(rng):
    src = rng.random((10, 16, 3))
    depth = ad.Variable(rng.uniform(2, 4, (10, 16)))
    pose = ad.Variable(np.r_[rng.normal(0, 0.02, 3), rng.normal(0, 0.1, 3)])
    kk = Intrinsics(20.0, 20.0, 7.5, 4.5)
    weights = rng.random((10, 16, 3))

    routing = ad.Routing()
    with ad.recording(routing):
        out, _ = inverse_warp(src, depth, pose, kk)
        loss = ad.sum_(out * weights)
    gd, gp = ad.grad(loss, [depth, pose])

    def f():
        routing.start_replay()
        with ad.recording(routing):
            return float(np.sum(ad.value_of(inverse_warp(src, depth, pose, kk)[0]) * weights))

    eps = 1e-6
    for var, g in ((pose, gp), (depth, gd)):
        flat = var.value.reshape(-1)
        for c in range(min(flat.size, 6)):
            flat[c] += eps
            fp = f()
            flat[c] -= 2 * eps
            fm = f()
            flat[c] += eps
            assert g.reshape(-1)[c] == pytest.approx((fp - fm) / (2 * eps), rel=1e-6, abs=1e-7)  # FD roundoff ~ 1e-16 * |loss| / eps
