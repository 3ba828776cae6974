import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hams.errors import DegenerateConfiguration, InsufficientData, NotARotation
from hams.geometry import (Camera, Pointmap, Sim3, axis_angle_to_quat, estimate_focal,
                           image_center, matrix_to_quat, pointmap_to_depth, quat_multiply,
                           quat_to_axis_angle, quat_to_matrix, rotation_geodesic_deg, so3_exp,
                           so3_log, umeyama_sim3)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


def random_sim3(rng):
    return Sim3(float(np.exp(rng.uniform(-1, 1))), so3_exp(rng.normal(size=3)), rng.normal(size=3) * 3)


def quat_angle_deg(R1, R2):
    # independent route: quaternion of the relative rotation
    q = matrix_to_quat(R1.T @ R2)
    return np.degrees(2 * np.arccos(np.clip(abs(q[0]), 0, 1)))


# umeyama --------------------------------------------------------------------

def test_umeyama_identity():
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    T = umeyama_sim3(P, P)
    assert T.is_close(Sim3(), atol=1e-12)


def test_umeyama_pure_scale():
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    T = umeyama_sim3(P, 2 * P)
    assert T.scale == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(T.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(T.translation, 0, atol=1e-12)


def test_umeyama_recovers_random_transform(rng):
    for _ in range(20):
        T = random_sim3(rng)
        P = rng.normal(size=(50, 3))
        E = umeyama_sim3(P, T.apply(P))
        assert abs(E.scale - T.scale) < 1e-9
        assert np.abs(E.rotation - T.rotation).max() < 1e-9
        assert np.abs(E.translation - T.translation).max() < 1e-9


def test_umeyama_rigid_mode_keeps_unit_scale(rng):
    T = random_sim3(rng)
    P = rng.normal(size=(30, 3))
    E = umeyama_sim3(P, T.apply(P), allow_scale=False)
    assert E.scale == 1.0
    assert np.abs(E.rotation - T.rotation).max() < 1e-9


def test_umeyama_weights_ignore_outliers(rng):
    T = random_sim3(rng)
    P = rng.normal(size=(40, 3))
    Q = T.apply(P)
    Q[:5] += 10.0
    w = np.ones(40)
    w[:5] = 0
    assert umeyama_sim3(P, Q, w).is_close(T, atol=1e-9)


def test_umeyama_no_reflection(rng):
    P = rng.normal(size=(20, 3))
    Q = P * np.array([1, 1, -1])
    E = umeyama_sim3(P, Q)
    assert np.linalg.det(E.rotation) == pytest.approx(1.0)


@pytest.mark.parametrize("pts", [
    np.zeros((5, 3)),
    np.outer(np.arange(5.0), [1, 2, 3]),
    np.eye(3)[:2],
])
def test_umeyama_degenerate(pts):
    with pytest.raises(DegenerateConfiguration):
        umeyama_sim3(pts, pts)


def test_umeyama_zero_weight():
    P = np.eye(3)
    with pytest.raises(DegenerateConfiguration):
        umeyama_sim3(np.vstack([P, [[1, 1, 1]]]), np.vstack([P, [[1, 1, 1]]]), np.zeros(4))


def test_umeyama_permutation_invariant(rng):
    P = rng.normal(size=(25, 3))
    Q = random_sim3(rng).apply(P) + rng.normal(scale=0.05, size=P.shape)
    w = rng.uniform(0.1, 2, 25)
    perm = rng.permutation(25)
    A = umeyama_sim3(P, Q, w)
    B = umeyama_sim3(P[perm], Q[perm], w[perm])
    assert A.is_close(B, atol=1e-12)


# rotations ------------------------------------------------------------------

def test_geodesic_basic():
    assert rotation_geodesic_deg(np.eye(3), np.eye(3)) == 0.0
    Rz = so3_exp([0, 0, np.pi / 2])
    assert rotation_geodesic_deg(np.eye(3), Rz) == pytest.approx(90.0, abs=1e-12)


def test_geodesic_matches_quaternion_oracle(rng):
    for _ in range(200):
        R1, R2 = so3_exp(rng.normal(size=3)), so3_exp(rng.normal(size=3))
        assert rotation_geodesic_deg(R1, R2) == pytest.approx(quat_angle_deg(R1, R2), abs=1e-9)


def test_geodesic_near_pi():
    R = so3_exp([np.pi - 1e-7, 0, 0])
    assert rotation_geodesic_deg(np.eye(3), R) == pytest.approx(180 - np.degrees(1e-7), abs=1e-6)


def test_geodesic_rejects_non_rotation():
    with pytest.raises(NotARotation):
        rotation_geodesic_deg(np.eye(3), np.diag([1, 1, -1.0]))
    with pytest.raises(NotARotation):
        rotation_geodesic_deg(np.eye(3) * 1.01, np.eye(3))


@given(vec3, vec3, vec3)
def test_geodesic_symmetric_and_triangle(a, b, c):
    A, B, C = so3_exp(a), so3_exp(b), so3_exp(c)
    assert rotation_geodesic_deg(A, B) == pytest.approx(rotation_geodesic_deg(B, A), abs=1e-9)
    assert rotation_geodesic_deg(A, C) <= rotation_geodesic_deg(A, B) + rotation_geodesic_deg(B, C) + 1e-6


@given(arrays(np.float64, 3, elements=st.floats(-3.1, 3.1)))
def test_axis_angle_round_trip(aa):
    if np.linalg.norm(aa) >= np.pi - 1e-6:
        return
    back = quat_to_axis_angle(axis_angle_to_quat(aa))
    assert np.abs(back - aa).max() < 1e-12


@given(arrays(np.float64, 4, elements=st.floats(-1, 1)))
def test_quaternion_matrix_round_trip(q):
    if np.linalg.norm(q) < 1e-3:
        return
    q = q / np.linalg.norm(q)
    q = -q if q[0] < 0 else q
    R = quat_to_matrix(q)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    back = matrix_to_quat(R)
    if abs(q[0]) > 1e-9:
        assert np.abs(back - q).max() < 1e-12


def test_quat_multiply_matches_matrix_product(rng):
    for _ in range(20):
        a, b = rng.normal(size=4), rng.normal(size=4)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        assert np.allclose(quat_to_matrix(quat_multiply(a, b)), quat_to_matrix(a) @ quat_to_matrix(b),
                           atol=1e-12)


def test_so3_log_exp(rng):
    aa = rng.normal(size=(100, 3))
    aa *= (np.minimum(np.linalg.norm(aa, axis=1), 3.0) / np.linalg.norm(aa, axis=1))[:, None]
    assert np.abs(so3_log(so3_exp(aa)) - aa).max() < 1e-12


# Sim3 -----------------------------------------------------------------------

def test_sim3_inverse_and_compose(rng):
    for _ in range(20):
        A, B, C = random_sim3(rng), random_sim3(rng), random_sim3(rng)
        x = rng.normal(size=(10, 3))
        assert np.abs(A.inverse().apply(A.apply(x)) - x).max() < 1e-9 * np.abs(x).max() + 1e-12
        assert ((A @ B) @ C).is_close(A @ (B @ C), atol=1e-9)
        assert np.allclose((A @ B).apply(x), A.apply(B.apply(x)), atol=1e-9)
        assert np.allclose((A @ B).matrix(), A.matrix() @ B.matrix(), atol=1e-9)


def test_sim3_rejects_bad_scale():
    with pytest.raises(ValueError):
        Sim3(0.0)
    with pytest.raises(ValueError):
        Sim3(-1.0)


def test_sim3_matrix_round_trip(rng):
    T = random_sim3(rng)
    assert Sim3.from_matrix(T.matrix()).is_close(T, atol=1e-12)
    assert Sim3.from_quat(T.quaternion, T.translation, T.scale).is_close(T, atol=1e-12)


# camera / pointmap ----------------------------------------------------------

def _render_plane(f, W=64, H=48, noise=0.0, rng=None):
    cam = Camera(Sim3(), f, image_center(W, H), W, H)
    rays = cam.pixel_rays()
    depth = 2.0 + 0.3 * np.sin(np.arange(W) / 7.0)[None, :] + 0.1 * np.arange(H)[:, None] / H
    if noise:
        depth = depth * (1 + noise * rng.normal(size=depth.shape))
    return cam, rays * depth[..., None]


def test_estimate_focal_exact():
    cam, P = _render_plane(300.0)
    assert estimate_focal(P, cam.principal_point) == pytest.approx(300.0, abs=1e-6)


def test_estimate_focal_noisy(rng):
    cam, P = _render_plane(300.0, noise=0.01, rng=rng)
    assert abs(estimate_focal(P, cam.principal_point) - 300.0) < 0.02 * 300


def test_estimate_focal_rejects_behind_camera():
    _, P = _render_plane(300.0)
    P[..., 2] *= -1
    with pytest.raises(InsufficientData):
        estimate_focal(P, (31.5, 23.5))


def test_estimate_focal_ignores_scene_motion(rng):
    # rescaling the pointmap as given does not change the focal
    cam, P = _render_plane(250.0)
    assert estimate_focal(3.0 * P, cam.principal_point) == pytest.approx(250.0, abs=1e-6)


def test_pointmap_to_depth():
    P = np.zeros((4, 5, 3))
    P[..., 2] = 2.0
    assert np.array_equal(pointmap_to_depth(Pointmap(P)), np.full((4, 5), 2.0))
    assert pointmap_to_depth(Pointmap(np.zeros((0, 0, 3)))).shape == (0, 0)


def test_pointmap_rejects_nan():
    P = np.zeros((2, 2, 3))
    P[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Pointmap(P)


def test_camera_project_round_trip(rng):
    pose = Sim3(1.0, so3_exp(rng.normal(size=3)), rng.normal(size=3))
    cam = Camera(pose, 120.0, image_center(80, 60), 80, 60)
    rays = cam.pixel_rays()
    X = pose.apply(rays * 3.0)
    uv, z = cam.project(X.reshape(-1, 3))
    vv, uu = np.mgrid[0:60, 0:80]
    assert np.allclose(uv[:, 0], uu.ravel(), atol=1e-9)
    assert np.allclose(uv[:, 1], vv.ravel(), atol=1e-9)
    assert np.allclose(z, 3.0)


def test_camera_invariants():
    with pytest.raises(ValueError):
        Camera(Sim3(2.0), 100.0, (10, 10), 20, 20)
    with pytest.raises(ValueError):
        Camera(Sim3(), 100.0, (25, 10), 20, 20)
    with pytest.raises(ValueError):
        Camera(Sim3(), 0.0, (10, 10), 20, 20)
