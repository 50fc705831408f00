import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peginhole.errors import DegenerateKeypoints, GimbalLock, InvalidSigma
from peginhole.geom import (
    KeypointTriple,
    Pose,
    apply,
    axis_angle,
    compose,
    euler_to_rotation,
    gaussian_confidence,
    invert,
    is_rotation,
    normalize,
    pose_from_keypoints,
    rot_z,
    rotation_from_keypoints,
    rotation_to_euler,
)

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
angle = st.floats(-np.pi, np.pi, allow_nan=False)
euler = st.tuples(angle, st.floats(-1.5, 1.5), angle).map(np.array)


@st.composite
def poses(draw):
    return Pose(euler_to_rotation(draw(euler)), draw(vec3))


@st.composite
def triples(draw):
    k1 = draw(vec3)
    vx, vz = draw(vec3), draw(vec3)
    if np.linalg.norm(np.cross(vz, vx)) < 1e-6:
        vx = vx + np.array([0.3, -0.2, 0.1])
        vz = vz + np.array([0.1, 0.4, 0.5])
    return KeypointTriple(k1, k1 + vx, k1 + vz)


CANON = KeypointTriple((0, 0, 0), (0.025, 0, 0), (0, 0, 0.025))


def test_canonical_triple_gives_identity():
    assert np.allclose(rotation_from_keypoints(CANON), np.eye(3), atol=1e-15)


def test_marker_along_y_hand_evaluated():
    r = rotation_from_keypoints(KeypointTriple((0, 0, 0), (0, 0.025, 0), (0, 0, 0.025)))
    assert np.allclose(r[:, 0], [0, 1, 0], atol=1e-12)
    assert np.allclose(r[:, 1], [-1, 0, 0], atol=1e-12)
    assert np.allclose(r[:, 2], [0, 0, 1], atol=1e-12)


def test_tilted_x_marker_is_orthogonalised():
    r = rotation_from_keypoints(KeypointTriple((0, 0, 0), (0.02, 0, 0.01), (0, 0, 0.025)))
    assert np.allclose(r[:, 2], [0, 0, 1], atol=1e-12)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
    # Gram-Schmidt of v_x against z
    assert np.allclose(r[:, 0], [1, 0, 0], atol=1e-12)


def test_pose_from_keypoints_translation_and_rotation():
    shift = np.array([0.1, 0.2, 0.3])
    p = pose_from_keypoints(KeypointTriple(*(CANON.as_array() + shift)))
    assert p.allclose(Pose(np.eye(3), shift))
    rz = rot_z(np.pi / 2)
    rotated = KeypointTriple(*(CANON.as_array() @ rz.T))
    assert pose_from_keypoints(rotated).allclose(Pose(rz, np.zeros(3)))


@pytest.mark.parametrize(
    "k2,k3",
    [((0, 0, 0), (0, 0, 0.025)), ((0.025, 0, 0), (0, 0, 0)), ((0, 0, 0.01), (0, 0, 0.025))],
)
def test_degenerate_triples_raise(k2, k3):
    with pytest.raises(DegenerateKeypoints):
        rotation_from_keypoints(KeypointTriple((0, 0, 0), k2, k3))


@given(triples())
def test_keypoint_rotation_is_so3_with_z_from_k3(k):
    r = rotation_from_keypoints(k)
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(r) - 1) < 1e-9
    assert np.allclose(r[:, 2], normalize(k.k3 - k.k1), atol=1e-9)


@given(triples(), st.floats(0.1, 10), st.floats(0.1, 10))
def test_keypoint_rotation_ignores_marker_distances(k, a, b):
    scaled = KeypointTriple(k.k1, k.k1 + a * (k.k2 - k.k1), k.k1 + b * (k.k3 - k.k1))
    assert np.allclose(rotation_from_keypoints(scaled), rotation_from_keypoints(k), atol=1e-9)


def test_compose_invert_apply_examples():
    p = Pose(rot_z(0.3), (1, 2, 3))
    assert compose(Pose.identity(), p).allclose(p)
    assert invert(invert(p)).allclose(p)
    assert np.allclose(apply(Pose(rot_z(np.pi / 2), np.zeros(3)), (1, 0, 0)), (0, 1, 0), atol=1e-15)


@given(poses(), poses(), poses())
def test_composition_is_associative(a, b, c):
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)))


@given(poses(), vec3, vec3)
def test_inverse_and_rigidity(p, u, v):
    assert compose(invert(p), p).allclose(Pose.identity())
    d0 = np.linalg.norm(u - v)
    assert abs(np.linalg.norm(apply(p, u) - apply(p, v)) - d0) < 1e-12


def test_euler_examples():
    assert np.allclose(euler_to_rotation((0, 0, 0)), np.eye(3))
    assert np.allclose(euler_to_rotation((0, 0, np.pi / 2)), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_euler_is_extrinsic_xyz():
    e = (0.1, -0.2, 0.3)
    expected = axis_angle((0, 0, 1), 0.3) @ axis_angle((0, 1, 0), -0.2) @ axis_angle((1, 0, 0), 0.1)
    assert np.allclose(euler_to_rotation(e), expected, atol=1e-14)


def test_euler_round_trip_1000_random():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        r = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        worst = max(worst, np.max(np.abs(euler_to_rotation(rotation_to_euler(r)) - r)))
    assert worst < 1e-9


@given(euler)
def test_euler_angles_in_half_open_range(e):
    out = rotation_to_euler(euler_to_rotation(e))
    assert np.all(out > -np.pi) and np.all(out <= np.pi)


def test_gimbal_lock_rejected():
    with pytest.raises(GimbalLock):
        rotation_to_euler(euler_to_rotation((0.2, np.pi / 2, 0.1)))


def test_gaussian_confidence_values():
    s = 0.025
    p = np.array([0.1, 0.2, 0.3])
    assert gaussian_confidence(p, p, s) == 1.0
    assert abs(gaussian_confidence(p + (s, 0, 0), p, s) - np.exp(-0.5)) < 1e-15
    assert abs(gaussian_confidence(p + (0, 2 * s, 0), p, s) - np.exp(-2)) < 1e-15
    for bad in (0.0, -1.0):
        with pytest.raises(InvalidSigma):
            gaussian_confidence(p, p, bad)


@settings(max_examples=50)
@given(vec3, poses(), st.floats(0.001, 1.0))
def test_gaussian_confidence_depends_on_distance_only(x, q, sigma):
    p = np.array([0.05, -0.02, 0.01])
    moved = Pose(q.rotation, p - q.rotation @ p)  # rotation about p
    assert abs(gaussian_confidence(apply(moved, x), p, sigma) - gaussian_confidence(x, p, sigma)) < 1e-12


def test_is_rotation_flags_reflections():
    assert is_rotation(np.eye(3))
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))
