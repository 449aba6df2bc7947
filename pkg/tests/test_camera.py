import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stringsgs.camera import (
    CameraIntrinsics,
    CameraPose,
    PINHOLE,
    project,
    project_points,
    quat_to_rotmat,
    rotmat_to_quat,
    unproject,
    world_to_camera,
)

from conftest import quat_matrix

finite = st.floats(-5, 5, allow_nan=False)


def cam100():
    return CameraIntrinsics(1, PINHOLE, 100, 100, 100.0, 100.0, 50.0, 50.0)


def ident():
    return CameraPose(1, np.array([1.0, 0, 0, 0]), np.zeros(3))


def test_identity_transform():
    assert np.array_equal(world_to_camera(ident(), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_half_turn_about_z():
    pose = CameraPose(1, np.array([0.0, 0, 0, 1]), np.zeros(3))
    assert np.allclose(world_to_camera(pose, [1.0, 0, 0]), [-1.0, 0, 0], atol=1e-12)


def test_world_to_camera_matches_matrix_oracle(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        t = rng.normal(size=3)
        p = rng.normal(size=3)
        pose = CameraPose(1, q, t)
        assert np.allclose(world_to_camera(pose, p), quat_matrix(q) @ p + t, atol=1e-12)


def test_principal_ray_and_offset():
    pc = project(cam100(), ident(), [0.0, 0.0, 1.0])
    assert (pc.u, pc.v, pc.depth) == (50.0, 50.0, 1.0)
    pc = project(cam100(), ident(), [0.1, 0.0, 1.0])
    assert pc.u == pytest.approx(60.0, abs=1e-12) and pc.v == 50.0


def test_behind_camera_and_out_of_bounds():
    assert project(cam100(), ident(), [0.0, 0.0, -1.0]) is None
    assert project(cam100(), ident(), [0.0, 0.0, 1e-9]) is None
    assert project(cam100(), ident(), [0.6, 0.0, 1.0]) is None  # u = 110
    uv, depth, valid = project_points(cam100(), ident(), np.array([[0.6, 0.0, 1.0], [0, 0, -2.0]]))
    assert not valid.any()
    assert np.array_equal(depth, [1.0, -2.0])  # depth kept for invalid projections


def test_left_edge_inclusive_right_edge_exclusive():
    assert project(cam100(), ident(), [-0.5, 0.0, 1.0]) is not None  # u = 0
    assert project(cam100(), ident(), [0.5, 0.0, 1.0]) is None  # u = 100


def test_quaternion_matrix_round_trip(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        q2 = rotmat_to_quat(quat_to_rotmat(q))
        assert np.allclose(quat_to_rotmat(q2), quat_to_rotmat(q), atol=1e-12)


def test_pose_quaternion_normalized_on_load():
    pose = CameraPose(1, np.array([2.0, 0, 0, 0]), np.zeros(3))
    assert abs(np.linalg.norm(pose.qvec) - 1) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=3, max_size=3), st.floats(0.01, 99.99), st.floats(0.01, 99.99), st.floats(0.1, 50))
def test_unproject_inverts_project(q, t, u, v, depth):
    if np.linalg.norm(q) < 1e-3:
        q = [1.0, 0, 0, 0]
    pose = CameraPose(1, np.array(q), np.array(t))
    p = unproject(cam100(), pose, u, v, depth)
    pc = project(cam100(), pose, p)
    assert pc is not None
    scale = max(1.0, float(np.abs(p).max()))
    assert abs(pc.u - u) < 1e-9 * scale * 100 and abs(pc.v - v) < 1e-9 * scale * 100
    assert np.allclose(unproject(cam100(), pose, pc.u, pc.v, pc.depth), p, atol=1e-9 * scale)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0.5, 20), st.floats(1.01, 10))
def test_projection_is_scale_consistent(x, y, z, k):
    a = project(cam100(), ident(), [x * z, y * z, z])
    b = project(cam100(), ident(), [k * x * z, k * y * z, k * z])
    assert a is not None and b is not None
    assert math.isclose(a.u, b.u, abs_tol=1e-9) and math.isclose(a.v, b.v, abs_tol=1e-9)
