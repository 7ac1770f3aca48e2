import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ulft.errors import BehindCameraError, InputError, PixelOutOfBoundsError
from ulft.geometry import (Camera, Intrinsics, Pose, elevate_camera, generate_ray,
                           generate_rays, project_point, project_points, reproject,
                           reproject_pixels, unproject)

from conftest import random_camera


def _matrix_reproject(pix, depth, cam_f, cam_o):
    """Homogeneous-matrix warp: x_o ~ K_o [R_o | t_o] T_f^{-1} (d K_f^{-1} [u v 1])."""
    Kf, Ko = cam_f.intrinsics.K, cam_o.intrinsics.K
    Tf, To = cam_f.pose.matrix(), cam_o.pose.matrix()
    ray = np.linalg.inv(Kf) @ np.array([pix[0], pix[1], 1.0])
    Xc = np.append(depth * ray, 1.0)
    Xo = To @ np.linalg.inv(Tf) @ Xc
    x = Ko @ Xo[:3]
    return x[:2] / x[2], Xo[2]


def test_reprojection_matches_matrix_oracle():
    rng = np.random.default_rng(7)
    n_pairs = 10_000
    worst = 0.0
    cams = [random_camera(rng, 32, 24) for _ in range(200)]
    for k in range(n_pairs):
        cf = cams[rng.integers(len(cams))]
        co = cams[rng.integers(len(cams))]
        pix = rng.uniform(0, 1, 2) * [cf.width, cf.height]
        d = rng.uniform(0.2, 3.0)
        uv_ref, z_ref = _matrix_reproject(pix, d, cf, co)
        if z_ref <= 1e-3:
            continue
        uv, z = reproject_pixels(pix[None], np.array([d]), cf, co)
        worst = max(worst, float(np.abs(uv[0] - uv_ref).max()))
        assert abs(z[0] - z_ref) < 1e-9
    assert worst < 1e-6, worst


def test_identity_reprojection_is_exact(rng):
    cam = random_camera(rng)
    pix = cam.pixel_centers()
    d = rng.uniform(0.1, 2, len(pix))
    uv, z = reproject_pixels(pix, d, cam, cam)
    assert np.array_equal(uv, pix) and np.array_equal(z, d)
    twin = Camera(cam.intrinsics, Pose(cam.pose.rotation, cam.pose.translation), cam.near,
                  cam.far)
    uv, z = reproject_pixels(pix, d, cam, twin)
    np.testing.assert_allclose(uv, pix, atol=1e-9)


@given(st.integers(0, 10_000))
def test_unproject_project_round_trip(seed):
    rng = np.random.default_rng(seed)
    cam = random_camera(rng)
    pix = rng.uniform(0, 1, (20, 2)) * [cam.width, cam.height]
    d = rng.uniform(0.05, 5.0, 20)
    uv, z = project_points(cam, unproject(cam, pix, d))
    np.testing.assert_allclose(uv, pix, atol=1e-8)
    np.testing.assert_allclose(z, d, rtol=1e-12)


def test_rays_hit_unprojected_points(rng):
    cam = random_camera(rng)
    pix = cam.pixel_centers()[:30]
    d = rng.uniform(0.5, 2.0, 30)
    o, dirs, zf = generate_rays(cam, pix)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    pts = o + (d / zf)[:, None] * dirs
    np.testing.assert_allclose(pts, unproject(cam, pix, d), atol=1e-12)


def test_axis_conventions():
    intr = Intrinsics(10.0, 10.0, 8.0, 6.0, 16, 12)
    cam = Camera(intr, Pose(np.eye(3), np.zeros(3)))
    uv, z = project_point(cam, [1.0, 0.5, 2.0])
    # +x right, +y down, +z forward
    assert uv[0] > 8 and uv[1] > 6 and z == 2.0
    assert np.array_equal(cam.pixel_centers()[1], [1.5, 0.5])


def test_errors():
    intr = Intrinsics(10.0, 10.0, 8.0, 6.0, 16, 12)
    cam = Camera(intr, Pose(np.eye(3), np.zeros(3)))
    with pytest.raises(BehindCameraError):
        project_point(cam, [0, 0, -1.0])
    with pytest.raises(PixelOutOfBoundsError):
        generate_ray(cam, (16.0, 0.0))
    with pytest.raises(InputError):
        reproject((1.0, 1.0), 0.0, cam, cam)
    with pytest.raises(InputError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(InputError):
        Intrinsics(-1.0, 1.0, 0.0, 0.0, 4, 4)
    with pytest.raises(InputError):
        elevate_camera(cam, -0.1)


def test_elevate_camera_moves_back_along_axis(rng):
    cam = random_camera(rng)
    far = elevate_camera(cam, 0.3)
    np.testing.assert_allclose(far.center, cam.center - 0.3 * cam.pose.forward, atol=1e-12)
    np.testing.assert_allclose(far.pose.rotation, cam.pose.rotation)
    assert elevate_camera(cam, 0.0) is cam
    # a point on the axis keeps its pixel and gains the offset in depth
    p = cam.center + 1.0 * cam.pose.forward
    uv0, z0 = project_point(cam, p)
    uv1, z1 = project_point(far, p)
    np.testing.assert_allclose(uv0, uv1, atol=1e-9)
    assert abs(z1 - z0 - 0.3) < 1e-12


def test_camera_dict_round_trip(rng):
    cam = random_camera(rng)
    back = Camera.from_dict(cam.to_dict())
    assert np.array_equal(back.pose.rotation, cam.pose.rotation)
    assert back.intrinsics == cam.intrinsics
