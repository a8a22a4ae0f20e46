import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symmpose import geometry as geo
from symmpose import synthetic as syn
from symmpose.errors import GenerationError, InvalidInputError
from symmpose.evaluation import min_coset_separation
from symmpose.so3 import random_rotations

from conftest import rotations

QUIET = syn.SceneConfig(sigma_obs=0.0)


def test_trivial_group():
    g = syn.make_group("cyclic", 1)
    assert g.order == 1
    np.testing.assert_array_equal(g.elements[0], np.eye(3))
    assert syn.make_group("trivial", 5).order == 1


def test_c4_about_z_is_exact():
    g = syn.make_group("cyclic", 4)
    expected = np.array([[[1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
                         [[-1, 0, 0], [0, -1, 0], [0, 0, 1]], [[0, 1, 0], [-1, 0, 0], [0, 0, 1]]], float)
    np.testing.assert_array_equal(g.elements, expected)


@pytest.mark.parametrize("n", [2, 3, 5, 6, 12])
def test_closure(n):
    axis = np.array([1.0, 2.0, 2.0]) / 3.0
    g = syn.make_group("cyclic", n, axis).elements
    flat = g.reshape(n, 9)
    for a in g:
        for b in g:
            assert np.abs(flat - (a @ b).ravel()).max(axis=1).min() <= 1e-9
        assert np.abs(flat - a.T.ravel()).max(axis=1).min() <= 1e-9


def test_group_validation():
    with pytest.raises(InvalidInputError):
        syn.make_group("cyclic", 3, (0, 0, 2))
    with pytest.raises(InvalidInputError):
        syn.make_group("dihedral", 3)
    with pytest.raises(InvalidInputError):
        syn.make_group("cyclic", 0)
    with pytest.raises(InvalidInputError):
        syn.check_group(np.stack([np.eye(3), geo.rot_z(0.3)]))


@given(rotations())
def test_canonical_trivial(r):
    np.testing.assert_array_equal(syn.canonical_representative(r, syn.make_group("trivial")), r)


@given(rotations(), st.sampled_from([2, 3, 4, 6]))
def test_canonical_coset_invariance(r, n):
    g = syn.make_group("cyclic", n)
    c = syn.canonical_representative(r, g)
    for e in g.elements:
        np.testing.assert_allclose(syn.canonical_representative(r @ e, g), c, atol=1e-12)
    np.testing.assert_array_equal(syn.canonical_representative(c, g), c)


@given(st.integers(0, 2**31), st.sampled_from([2, 4, 7]))
def test_observation_invariant_under_group(seed, n):
    obj = syn.make_object(syn.ObjectSpec(symmetry="cyclic", order=n))
    rng = np.random.default_rng(seed)
    base = syn.sample_scene(obj, QUIET, rng)
    for g in obj.symmetry.elements:
        s = syn.build_sample(obj, QUIET, base.true_pose.rotation @ g, base.true_pose.translation, base.detection)
        assert np.array_equal(s.observation, base.observation)


def test_trivial_object_distinguishes_poses(rng):
    obj = syn.make_object(syn.ObjectSpec())
    base = syn.sample_scene(obj, QUIET, rng)
    other = syn.build_sample(obj, QUIET, base.true_pose.rotation @ geo.rot_z(np.pi / 2),
                             base.true_pose.translation, base.detection)
    assert np.abs(other.observation - base.observation).max() > 1e-3


def test_scene_consistency(rng):
    obj = syn.make_object(syn.ObjectSpec(symmetry="cyclic", order=4))
    for _ in range(200):
        s = syn.sample_scene(obj, syn.SceneConfig(), rng)
        t = s.true_pose.translation
        assert syn.SceneConfig().z_min <= t[2] <= syn.SceneConfig().z_max
        np.testing.assert_allclose(geo.recover_translation(s.targets, s.crop), t, rtol=1e-9)
        r_c = geo.ray_rotation(geo.crop_point(s.targets, s.crop), s.crop.k_b)
        np.testing.assert_allclose(geo.allo_to_ego(s.r_allo, r_c), s.true_pose.rotation, atol=1e-12)
        # projected origin stays inside the padded crop, whose centre is 0
        assert abs(s.targets.dx) < 0.5 and abs(s.targets.dy) < 0.5
        b = s.detection
        assert 0 <= b.bx < 640 and 0 <= b.by < 480


def test_detection_noise_bounds(rng):
    obj = syn.make_object(syn.ObjectSpec())
    cfg = syn.SceneConfig()
    k = cfg.intrinsics
    for _ in range(200):
        s = syn.sample_scene(obj, cfg, rng)
        t = s.true_pose.translation
        nominal = 2 * k.fx * obj.radius / t[2]
        assert abs(s.detection.bw / nominal - 1) <= cfg.scale_noise + 1e-12
        u = k.fx * t[0] / t[2] + k.cx
        assert abs(s.detection.bx - u) <= cfg.center_noise * s.detection.bw + 1e-9


def test_scene_determinism():
    obj = syn.make_object(syn.ObjectSpec())
    a = syn.sample_scene(obj, syn.SceneConfig(), np.random.default_rng(11))
    b = syn.sample_scene(obj, syn.SceneConfig(), np.random.default_rng(11))
    assert np.array_equal(a.observation, b.observation)
    assert np.array_equal(a.true_pose.translation, b.true_pose.translation)


def test_observation_noise_level(rng):
    obj = syn.make_object(syn.ObjectSpec())
    s = syn.sample_scene(obj, syn.SceneConfig(sigma_obs=0.01), rng)
    clean = obj.features(s.r_allo, s.targets.dx, s.targets.dy, s.targets.dz, syn.SceneConfig())
    assert 0.005 < np.std(s.observation - clean) < 0.02


def test_generation_error_when_object_cannot_fit(rng):
    obj = syn.make_object(syn.ObjectSpec(radius=1.0))
    with pytest.raises(GenerationError):
        syn.sample_scene(obj, syn.SceneConfig(max_retries=5), rng)


def test_depth_range_validated():
    with pytest.raises(InvalidInputError):
        syn.SceneConfig(z_min=1.0, z_max=0.5)


def test_dataset_bounds_and_streams():
    obj = syn.make_object(syn.ObjectSpec())
    ds = syn.generate_dataset(obj, 300, syn.SceneConfig(), seed=4)
    assert np.all((ds.dz > ds.d_l) & (ds.dz < ds.d_u))
    span = ds.dz.max() - ds.dz.min()
    assert ds.d_l == pytest.approx(ds.dz.min() - 0.05 * span)
    one = syn.generate_dataset(obj, 1, syn.SceneConfig(), seed=4)
    assert one.d_l < one.dz[0] < one.d_u
    # scene i depends only on (seed, i)
    assert np.array_equal(one.observations[0], ds.observations[0])
    with pytest.raises(InvalidInputError):
        syn.generate_dataset(obj, 0, syn.SceneConfig())


def test_dz_distribution_follows_depth_over_zoom():
    obj = syn.make_object(syn.ObjectSpec())
    cfg = syn.SceneConfig()
    ds = syn.generate_dataset(obj, 2000, cfg, seed=9)
    # dz = t_z / r with r = s_zoom / (f_p 2 f rho / t_z / scale), so dz ~ nominal * scale, independent of t_z
    lo, hi = cfg.appearance_dz_range(obj.radius)
    assert np.all((ds.dz >= lo - 1e-12) & (ds.dz <= hi + 1e-12))
    hist, _ = np.histogram(ds.dz, bins=10, range=(lo, hi))
    assert hist.min() > 0.6 * hist.mean()


@pytest.mark.parametrize("n", [2, 3, 4, 8])
def test_coset_separation_positive(n):
    g = syn.make_group("cyclic", n, (0.0, 0.6, 0.8))
    sep = min_coset_separation(g)
    assert sep > 0
    assert sep == pytest.approx(2 * np.pi / n)
    r = random_rotations(np.random.default_rng(n), 50)
    d = [geo.geodesic_distance(x @ a, x @ b) for x in r for i, a in enumerate(g.elements)
         for b in g.elements[i + 1:]]
    assert min(d) >= sep - 1e-6  # arccos loses precision near pi


def test_feature_map_shape():
    obj = syn.make_object(syn.ObjectSpec(obs_dim=16))
    assert obj.feature_map.widths == (syn.FEATURE_INPUTS, 16)
    assert syn.make_object(syn.ObjectSpec(seed=3)).feature_map.weights[0][0, 0] != \
        syn.make_object(syn.ObjectSpec(seed=4)).feature_map.weights[0][0, 0]
