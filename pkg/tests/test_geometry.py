import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symmpose import geometry as geo
from symmpose.errors import DegenerateError, InvalidInputError
from symmpose.so3 import random_rotations

from conftest import front_rays, intrinsics, rotations

K600 = geo.CameraIntrinsics(600.0, 600.0, 320.0, 240.0)
KB = np.array([[1200.0, 0, 40], [0, 1200.0, 20], [0, 0, 1]])


def crop_r2():
    # bbox centred at (300, 230), s_b = 120, s_zoom = 240 -> r = 2
    return geo.crop_geometry(geo.BBoxDetection(300.0, 230.0, 80.0, 40.0), K600, s_zoom=240, f_p=1.5)


def test_padded_side_uses_longer_box_edge():
    cg = geo.crop_geometry(geo.BBoxDetection(0, 0, 40, 80), K600, s_zoom=240, f_p=1.5)
    assert cg.s_b == 120
    assert cg.r == 2.0


def test_calibrated_intrinsics_arithmetic():
    cg = crop_r2()
    np.testing.assert_allclose(cg.k_b, KB)
    np.testing.assert_allclose(cg.t_bx, [[2, 0, -600], [0, 2, -460], [0, 0, 1]])


@pytest.mark.parametrize("box", [(0, 0, 0, 10), (0, 0, 10, -1)])
def test_bad_boxes_rejected(box):
    with pytest.raises(InvalidInputError):
        geo.BBoxDetection(*box)


def test_crop_parameters_validated():
    box = geo.BBoxDetection(0, 0, 10, 10)
    with pytest.raises(InvalidInputError):
        geo.crop_geometry(box, K600, s_zoom=0)
    with pytest.raises(InvalidInputError):
        geo.crop_geometry(box, K600, f_p=0.9)


def test_pe_map_known_pixels():
    cg = crop_r2()
    grid = geo.pe_map(cg)
    assert grid.shape == (240, 240, 3)
    np.testing.assert_allclose(grid[20, 40], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(geo.back_project(KB, [1240, 20, 1]), [1, 0, 1])


def test_pe_map_reprojects_every_pixel():
    cg = crop_r2()
    grid = geo.pe_map(cg)
    v, u = np.mgrid[0:240, 0:240]
    pix = np.einsum("ij,vuj->vui", cg.k_b, grid)
    np.testing.assert_allclose(pix[..., 0], u, atol=1e-9)
    np.testing.assert_allclose(pix[..., 1], v, atol=1e-9)
    np.testing.assert_allclose(pix[..., 2], 1.0, atol=1e-9)


def test_singular_intrinsics():
    with pytest.raises(DegenerateError):
        geo.back_project(np.zeros((3, 3)), [0, 0, 1])


def test_site_targets_arithmetic_and_inverse():
    cg = crop_r2()
    st_ = geo.site_targets(geo.Pose(np.eye(3), np.array([0.0, 0.0, 1.0])), cg)
    assert st_.dx == pytest.approx(40 / 240)
    assert st_.dy == pytest.approx(20 / 240)
    assert st_.dz == pytest.approx(0.5)
    np.testing.assert_allclose(geo.recover_translation(st_, cg), [0, 0, 1], atol=1e-15)


def test_box_centre_maps_to_crop_origin():
    cg = crop_r2()
    np.testing.assert_allclose(cg.t_bx @ [300.0, 230.0, 1.0], [0, 0, 1])


def test_behind_camera_rejected():
    with pytest.raises(InvalidInputError):
        geo.Pose(np.eye(3), np.array([0.0, 0.0, -1.0]))
    with pytest.raises(InvalidInputError):
        geo.recover_translation(geo.SiteTargets(0.1, 0.1, 0.0), crop_r2())


@given(st.floats(0.1, 10.0))
def test_translation_linear_in_dz(c):
    cg = crop_r2()
    base = geo.SiteTargets(0.1, -0.05, 0.4)
    scaled = geo.SiteTargets(0.1, -0.05, 0.4 * c)
    np.testing.assert_allclose(geo.recover_translation(scaled, cg), c * geo.recover_translation(base, cg),
                               rtol=1e-12)


def test_principal_ray_projects_to_principal_point():
    cg = crop_r2()
    t = 2.7 * geo.back_project(cg.k_b, [cg.k_b[0, 2], cg.k_b[1, 2], 1.0])
    p = geo.crop_point(geo.site_targets(geo.Pose(np.eye(3), t), cg), cg)
    np.testing.assert_allclose(p[:2], cg.k_b[:2, 2], atol=1e-12)


@given(intrinsics(), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.2, 5.0),
       st.floats(5, 400), st.floats(5, 400), st.floats(-50, 50), st.floats(-50, 50))
def test_translation_roundtrip(k, x, y, z, bw, bh, ox, oy):
    t = np.array([x, y, z])
    box = geo.BBoxDetection(k.fx * x / z + k.cx + ox, k.fy * y / z + k.cy + oy, bw, bh)
    cg = geo.crop_geometry(box, k)
    back = geo.recover_translation(geo.site_targets(geo.Pose(np.eye(3), t), cg), cg)
    assert np.linalg.norm(back - t) <= 1e-9 * np.linalg.norm(t)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1, 500), st.floats(1, 500))
def test_crop_transform_structure(px, py, bw, bh):
    box = geo.BBoxDetection(px / 2, py / 3, bw, bh)
    cg = geo.crop_geometry(box, K600)
    p = np.array([px, py, 1.0])
    np.testing.assert_allclose(cg.t_bx @ p, [cg.r * (px - box.bx), cg.r * (py - box.by), 1.0], rtol=1e-12,
                               atol=1e-9)
    inv = np.linalg.inv(cg.t_bx)
    np.testing.assert_allclose(inv @ cg.t_bx, np.eye(3), atol=1e-12)


def test_ray_rotation_identity_at_principal_point():
    assert np.array_equal(geo.ray_rotation(np.array([40.0, 20.0, 1.0]), KB), np.eye(3))


def test_ray_rotation_45_degrees_about_y():
    k = np.eye(3)
    r = geo.ray_rotation(np.array([1.0, 0.0, 1.0]), k)
    np.testing.assert_allclose(r, geo.axis_angle([0, 1, 0], np.pi / 4), atol=1e-15)
    np.testing.assert_allclose(r @ [0, 0, 1], np.array([1, 0, 1]) / np.sqrt(2), atol=1e-15)


@given(front_rays())
def test_ray_rotation_contract(o):
    r = geo.ray_rotation(o, np.eye(3))
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1) < 1e-12
    np.testing.assert_allclose(r @ [0, 0, 1], o / np.linalg.norm(o), atol=1e-12)


def test_ray_rotation_is_identity_only_on_axis(rng):
    o = rng.normal(size=(200, 3))
    o[:, 2] = np.abs(o[:, 2]) + 0.01
    r = geo.axis_to_ray_rotations(o)
    assert not np.any(np.all(np.abs(r - np.eye(3)) < 1e-12, axis=(1, 2)))


def test_antiparallel_ray_guard():
    with pytest.raises(DegenerateError):
        geo.axis_to_ray_rotations([0.0, 0.0, -1.0])
    with pytest.raises(InvalidInputError):
        geo.ray_rotation(np.array([0.0, 0.0, -1.0]), np.eye(3))


@given(rotations(), front_rays())
def test_allo_ego_roundtrip(r_allo, o):
    r_c = geo.axis_to_ray_rotations(o)
    r = geo.allo_to_ego(r_allo, r_c)
    np.testing.assert_allclose(geo.ego_to_allo(r, r_c), r_allo, atol=1e-12)
    np.testing.assert_allclose(geo.allo_to_ego(geo.ego_to_allo(r, r_c), r_c), r, atol=1e-12)


@given(rotations())
def test_allo_ego_identity_cases(r):
    np.testing.assert_array_equal(geo.allo_to_ego(r, np.eye(3)), r)
    np.testing.assert_array_equal(geo.allo_to_ego(np.eye(3), r), r)


def test_full_pose_roundtrip(rng):
    rots = random_rotations(rng, 200)
    for rot in rots:
        t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.3, 2)])
        k = K600
        box = geo.BBoxDetection(k.fx * t[0] / t[2] + k.cx + 3, k.fy * t[1] / t[2] + k.cy - 2, 60, 50)
        cg = geo.crop_geometry(box, k)
        st_ = geo.site_targets(geo.Pose(rot, t), cg)
        r_c = geo.ray_rotation(geo.crop_point(st_, cg), cg.k_b)
        np.testing.assert_allclose(geo.allo_to_ego(geo.ego_to_allo(rot, r_c), r_c), rot, atol=1e-12)


def test_geodesic_known_values():
    assert geo.geodesic_distance(np.eye(3), np.eye(3)) == 0.0
    assert geo.geodesic_distance(np.eye(3), geo.rot_z(np.pi / 2)) == pytest.approx(np.pi / 2)


@given(rotations(), rotations(), rotations())
def test_geodesic_metric_properties(a, b, c):
    dab, dba = geo.geodesic_distance(a, b), geo.geodesic_distance(b, a)
    assert dab == pytest.approx(dba, abs=1e-12)
    assert 0 <= dab <= np.pi
    assert dab <= geo.geodesic_distance(a, c) + geo.geodesic_distance(c, b) + 1e-7


def test_triangle_inequality_many(rng):
    r = random_rotations(rng, 3000).reshape(1000, 3, 3, 3)
    for a, b, c in r:
        assert geo.geodesic_distance(a, b) <= geo.geodesic_distance(a, c) + geo.geodesic_distance(c, b) + 1e-7


@given(rotations())
def test_rotations_satisfy_invariants(r):
    assert geo.is_rotation(r)
