import json
import os

import numpy as np
import pytest

from depthlab import synth
from depthlab.geometry import PoseParams
from depthlab.losses import D_MAX, D_MIN


def _front_plane_scene(z=5.0):
    rng = np.random.default_rng(0)
    return synth.PlaneScene("custom", 0, [synth._axis_plane("front", 2, z, rng, 0.05)])


def test_generation_is_deterministic():
    a = synth.generate_dataset("boxes", 4, 1, 16, 24)[0]
    b = synth.generate_dataset("boxes", 4, 1, 16, 24)[0]
    for fa, fb in zip(a.frames + a.depths, b.frames + b.depths):
        assert np.array_equal(fa, fb)


def test_different_seeds_differ():
    a = synth.generate_dataset("corridor", 0, 1, 16, 24)[0]
    b = synth.generate_dataset("corridor", 1, 1, 16, 24)[0]
    assert not np.array_equal(a.target, b.target)


@pytest.mark.parametrize("preset,planes", [("ground_and_walls", [4]), ("corridor", [5]), ("boxes", [8, 11])])
def test_plane_counts(preset, planes):
    assert len(synth.build_scene(preset, 2).planes) in planes


@pytest.mark.parametrize("preset", synth.PRESETS)
def test_depth_in_supported_range(preset):
    rec = synth.generate_dataset(preset, 1, 1, 16, 24)[0]
    for d in rec.depths:
        assert d.min() >= D_MIN and d.max() <= D_MAX
    for f in rec.frames:
        assert f.min() >= 0.0 and f.max() <= 1.0


def test_unknown_preset():
    with pytest.raises(ValueError):
        synth.build_scene("forest", 0)


def test_fronto_parallel_plane_depth():
    K = synth.default_intrinsics(16, 24)
    _, depth = synth.render_frame(_front_plane_scene(5.0), PoseParams(np.zeros(3), np.zeros(3)), K, 16, 24)
    np.testing.assert_allclose(depth, 5.0, rtol=0, atol=1e-12)


def test_centre_ray_hits_plane_point():
    scene = _front_plane_scene(5.0)
    dist, idx = synth._intersect(scene, np.zeros(3), np.array([[0.0, 0.0, 1.0]]))
    assert idx[0] == 0
    np.testing.assert_allclose(np.zeros(3) + dist[0] * np.array([0.0, 0.0, 1.0]), [0.0, 0.0, 5.0])


def test_lateral_translation_shifts_image():
    # camera moved by b along +x sees the plane shifted left by fx*b/z pixels
    h, w, z, shift = 16, 48, 5.0, 2
    K = synth.default_intrinsics(h, w)
    scene = _front_plane_scene(z)
    b = shift * z / K.fx
    img0, _ = synth.render_frame(scene, PoseParams(np.zeros(3), np.zeros(3)), K, h, w)
    img1, _ = synth.render_frame(scene, PoseParams(np.zeros(3), np.array([b, 0.0, 0.0])), K, h, w)
    np.testing.assert_allclose(img1[:, :-shift], img0[:, shift:], atol=1e-9)


def test_relative_pose_of_target_is_identity(small_record):
    from depthlab.geometry import relative_pose

    p = relative_pose(small_record.world_poses[1], small_record.world_poses[1])
    np.testing.assert_allclose(p.rotation, 0.0, atol=1e-12)
    np.testing.assert_allclose(p.translation, 0.0, atol=1e-12)


def test_camera_moves_between_frames(small_record):
    t = [p.translation for p in small_record.world_poses]
    assert np.linalg.norm(t[2] - t[0]) > 0.05


def test_dataset_roundtrip(tmp_path, small_record):
    manifest = synth.write_dataset([small_record], tmp_path, "ground_and_walls", 3)
    assert sorted(os.listdir(tmp_path)) == sorted(
        [f"frame_{k}.ppm" for k in range(3)] + [f"depth_{k}.pfm" for k in range(3)] + ["scene.json"])
    with open(tmp_path / "scene.json") as fh:
        assert json.load(fh) == manifest
    back = synth.read_dataset(tmp_path)[0]
    for a, b in zip(back.frames, small_record.frames):
        assert np.abs(a - b).max() <= 0.5 / 255 + 1e-12
    for a, b in zip(back.depths, small_record.depths):
        np.testing.assert_allclose(a, b, rtol=1e-7)
    for a, b in zip(back.relative_poses, small_record.relative_poses):
        np.testing.assert_allclose(a.as_vector(), b.as_vector(), atol=1e-12)
    assert back.K == small_record.K


def test_read_dataset_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        synth.read_dataset(tmp_path)
