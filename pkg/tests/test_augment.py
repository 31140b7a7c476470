import numpy as np
import pytest
from sklearn.base import clone

from depthlab import augment as A
from depthlab.augment import AugmentationPlan, AugmentationSpec, Augmenter


def _image(rng, h=24, w=32):
    return rng.uniform(0.05, 0.95, (h, w, 3))


def _depth(rng, h=24, w=32):
    return rng.uniform(1.0, 20.0, (h, w))


# -- positional kinds ---------------------------------------------------------------


def test_vertical_crop_rows():
    img = np.arange(10, dtype=float)[:, None, None] * np.ones((1, 4, 3))
    out = A.vertical_crop(img, 0.2)
    assert out[:, 0, 0].tolist() == [2, 3, 4, 5, 6, 7, 8, 9, 0, 1]


@pytest.mark.parametrize("tau", A.CROP_TAUS)
def test_vertical_crop_inverse_and_multiset(rng, tau):
    img = _image(rng, 17, 11)
    out = A.vertical_crop(img, tau)
    assert np.array_equal(A.invert_vertical_crop(out, tau), img)
    assert np.array_equal(np.sort(out, axis=None), np.sort(img, axis=None))


def test_vertical_crop_rejects_other_tau(rng):
    with pytest.raises(ValueError):
        A.vertical_crop(_image(rng), 0.3)


def test_tile_shuffle_swap_2x2():
    img = np.zeros((4, 4, 1))
    img[:2, :2], img[:2, 2:], img[2:, :2], img[2:, 2:] = 0, 1, 2, 3
    out, perm = A.tile_shuffle(img, 2, 2, permutation=[1, 0, 3, 2])
    assert out[0, 0, 0] == 1 and out[0, 2, 0] == 0 and out[2, 0, 0] == 3 and out[2, 2, 0] == 2
    assert perm.tolist() == [1, 0, 3, 2]


@pytest.mark.parametrize("grid", [(2, 2), (2, 3), (4, 2), (4, 3)])
def test_tile_shuffle_inverse(rng, grid):
    img = _image(rng, 24, 32)
    out, perm = A.tile_shuffle(img, *grid, seed=7)
    assert np.array_equal(A.invert_tile_shuffle(out, *grid, perm), img)


def test_tile_shuffle_identity_permutation(rng):
    img = _image(rng, 24, 32)
    out, _ = A.tile_shuffle(img, 4, 3, permutation=np.arange(12))
    assert np.array_equal(out, img)


def test_tile_shuffle_rejects_bad_permutation(rng):
    with pytest.raises(ValueError):
        A.tile_shuffle(_image(rng), 2, 2, permutation=[0, 0, 1, 2])


def test_tile_shuffle_centre_crops_indivisible(rng):
    out, _ = A.tile_shuffle(_image(rng, 25, 33), 4, 3, seed=1)
    assert out.shape == (24, 32, 3)


# -- photometric kinds --------------------------------------------------------------


def test_fog_zero_beta_is_identity(rng):
    img, d = _image(rng), _depth(rng)
    assert np.array_equal(A.apply(AugmentationSpec("fog", {"beta": 0.0}), img, d), img)


def test_fog_far_depth_reaches_airlight(rng):
    img = _image(rng)
    out = A.apply(AugmentationSpec("fog", {"beta": 1.0}), img, np.full(img.shape[:2], 1e3))
    np.testing.assert_allclose(out, A.AIRLIGHT, atol=1e-12)


def test_fog_closed_form(rng):
    img, d = _image(rng), _depth(rng)
    out = A.fog(img, d, 0.3)
    tr = np.exp(-0.3 * d)[..., None]
    np.testing.assert_allclose(out, img * tr + 0.8 * (1 - tr), atol=1e-15)


def test_fog_needs_depth(rng):
    with pytest.raises(ValueError):
        A.apply(AugmentationSpec("fog"), _image(rng))


def test_gaussian_noise_sigma_table(rng):
    assert A.SEVERITY_TABLES["gaussian_noise"] == (0.04, 0.06, 0.08, 0.09, 0.10)
    img = np.full((256, 256, 3), 0.5)
    for sev, sigma in enumerate(A.SEVERITY_TABLES["gaussian_noise"], start=1):
        out = A.corruption("gaussian_noise", img, sev, seed=sev)
        assert abs((out - img).std() - sigma) < 0.02 * sigma


def test_pixelate_constant_is_identity():
    img = np.full((13, 17, 3), 0.37)
    for sev in range(1, 6):
        assert np.array_equal(A.corruption("pixelate", img, sev, seed=0), img)


def test_jpeg_unit_table_near_identity(rng):
    img = _image(rng, 16, 24)
    out = A.apply(AugmentationSpec("jpeg", {"table": 1.0}, severity=1), img)
    assert np.abs(out - img).max() < 2.0 / 255.0


@pytest.mark.parametrize("kind", [k for k in A.KINDS if k != "composite"])
def test_every_kind_is_bit_reproducible(rng, kind):
    img, d = _image(rng), _depth(rng)
    spec = A.resolve(AugmentationSpec(kind, seed=12345))
    a = A.apply(spec, img, d)
    b = A.apply(AugmentationSpec.from_dict(spec.to_dict()), img.copy(), d.copy())
    assert a.shape == img.shape and a.dtype == np.float64
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


@pytest.mark.parametrize("kind", A.CORRUPTION_KINDS)
def test_corruptions_change_textured_images(rng, kind):
    img = _image(rng)
    assert not np.array_equal(A.corruption(kind, img, 3, seed=5), img)


def test_composite_applies_children_in_order(rng):
    img, d = _image(rng), _depth(rng)
    fog = AugmentationSpec("fog", {"beta": 0.2})
    bright = AugmentationSpec("brightness", severity=1)
    comp = AugmentationSpec("composite", children=(fog, bright))
    np.testing.assert_array_equal(A.apply(comp, img, d), A.apply(bright, A.apply(fog, img, d)))


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentationSpec("sepia")
    with pytest.raises(ValueError):
        AugmentationSpec("gaussian_noise", severity=6)
    with pytest.raises(ValueError):
        AugmentationSpec("composite")
    with pytest.raises(ValueError):
        AugmentationSpec.from_dict({"kind": "fog", "strength": 1})


# -- plans --------------------------------------------------------------------------


def _pool():
    return [AugmentationSpec(k) for k in ("fog", "night", "gaussian_noise", "brightness", "vertical_crop")]


def test_sample_plan_each_spec_once_per_cycle():
    pool = _pool()
    n = len(pool)
    idx = [A.sample_plan(pool, 9, i).pool_index for i in range(10 * n)]
    assert np.bincount(idx, minlength=n).tolist() == [10] * n
    for c in range(10):
        assert sorted(idx[c * n : (c + 1) * n]) == list(range(n))


def test_sample_plan_deterministic_and_roundtrip():
    a = A.sample_plan(_pool(), 3, 4)
    b = A.sample_plan(_pool(), 3, 4)
    assert a == b
    assert AugmentationPlan.from_dict(a.to_dict()) == a


def test_consistency_modes():
    pool = [AugmentationSpec("fog")]
    same = A.frame_parameters(A.sample_plan(pool, 1, 0, "scene_consistent"))
    diff = A.frame_parameters(A.sample_plan(pool, 1, 0, "frame_inconsistent"))
    assert same[0] == same[1] == same[2]
    assert len({str(p) for p in diff}) == 3


def test_scene_consistent_shares_severity_but_not_noise(rng):
    plan = A.sample_plan([AugmentationSpec("gaussian_noise")], 2, 0, "scene_consistent")
    assert len({s.severity for s in plan.frames}) == 1
    img = np.full((16, 16, 3), 0.5)
    outs = plan.apply([img] * 3)
    assert not np.array_equal(outs[0], outs[1])


def test_sample_plan_rejects_bad_input():
    with pytest.raises(ValueError):
        A.sample_plan([], 0, 0)
    with pytest.raises(ValueError):
        A.sample_plan(_pool(), 0, 0, "sometimes")


def test_augmenter_estimator(small_record):
    aug = Augmenter([A.photometric_fog_noise(3)], "frame_inconsistent", 5)
    assert clone(aug).get_params() == aug.get_params()
    out = aug.fit().transform([small_record])
    again = clone(aug).fit_transform([small_record])
    assert len(out) == 1 and len(out[0]) == 3
    for a, b, f in zip(out[0], again[0], small_record.frames):
        assert np.array_equal(a, b)
        assert a.shape == f.shape
    assert aug.plans_[0].pool_index == 0


def test_augmenter_default_pool_is_identity(small_record):
    out = Augmenter().fit_transform([small_record])
    for a, f in zip(out[0], small_record.frames):
        assert np.array_equal(a, f)
