import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from holoidet.errors import InvalidArgumentError
from holoidet.geometry import (
    E1,
    E2,
    E3,
    SurfaceLayout,
    SurfacePose,
    check_feasible,
    element_coords,
    element_positions,
    fibonacci_sphere,
    radial_rotation,
    rodrigues,
    rotation_between,
    skew,
)

from conftest import random_unit

unit_vectors = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.array(v) / np.linalg.norm(v))
angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def test_skew_matches_cross(rng):
    for _ in range(20):
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-14)


def test_rodrigues_examples():
    np.testing.assert_allclose(rodrigues(E3, 0.0), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(rodrigues(E1, np.pi), np.diag([1.0, -1.0, -1.0]), atol=1e-15)
    np.testing.assert_allclose(rodrigues(E3, np.pi / 2) @ E1, E2, atol=1e-15)


def test_rodrigues_rejects_non_unit_axis():
    with pytest.raises(InvalidArgumentError):
        rodrigues(np.array([1.0, 1.0, 0.0]), 0.3)


@given(unit_vectors, angles)
def test_rodrigues_is_proper_rotation(axis, angle):
    rot = rodrigues(axis, angle)
    np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(rot) - 1.0) < 1e-9
    np.testing.assert_allclose(rot @ axis, axis, atol=1e-9)


@given(unit_vectors, unit_vectors)
def test_rotation_between_aligns(u, w):
    rot = rotation_between(u, w)
    np.testing.assert_allclose(rot @ u, w, atol=1e-8)
    np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-9)


def test_rotation_between_parallel_and_antiparallel():
    np.testing.assert_array_equal(rotation_between(E3, E3), np.eye(3))
    rot = rotation_between(E3, -E3)
    np.testing.assert_allclose(rot @ E3, -E3, atol=1e-12)
    # half-turn about e1, the orthogonal axis closest to e1
    np.testing.assert_allclose(rot, np.diag([1.0, -1.0, -1.0]), atol=1e-12)
    rot = rotation_between(E1, -E1)
    np.testing.assert_allclose(rot @ E1, -E1, atol=1e-12)
    np.testing.assert_allclose(rot @ E2, E2, atol=1e-12)


def test_rotation_between_example_to_x():
    rot = rotation_between(E3, E1)
    np.testing.assert_allclose(rot @ E3, E1, atol=1e-12)


def test_radial_rotation_points_normal_outward(rng):
    for q in rng.standard_normal((10, 3)):
        pose = SurfacePose(radial_rotation(q), q)
        np.testing.assert_allclose(pose.normal, q / np.linalg.norm(q), atol=1e-12)


def test_element_coords_examples():
    layout = SurfaceLayout(4, 4, 0.005)
    pose = SurfacePose(np.eye(3), np.zeros(3))
    np.testing.assert_allclose(element_coords(pose, layout, 2, 3), [0.010, 0.015, 0.0], atol=1e-15)
    q = np.array([0.3, -0.2, 0.9])
    turned = SurfacePose(rodrigues(E3, 0.7), q)
    np.testing.assert_array_equal(element_coords(turned, layout, 0, 0), q)
    quarter = SurfacePose(rodrigues(E3, np.pi / 2), np.zeros(3))
    np.testing.assert_allclose(element_coords(quarter, SurfaceLayout(2, 2, 1.0), 1, 0), [0.0, 1.0, 0.0], atol=1e-15)
    with pytest.raises(InvalidArgumentError):
        element_coords(pose, layout, 4, 0)


def test_element_coords_axis_decomposition(rng):
    layout = SurfaceLayout(5, 3, 0.01)
    rot = rotation_between(E3, random_unit(rng))
    pose = SurfacePose(rot, rng.standard_normal(3))
    for mx, my in [(0, 0), (4, 2), (2, 1)]:
        expect = pose.position + mx * layout.spacing * rot @ E1 + my * layout.spacing * rot @ E2
        np.testing.assert_allclose(element_coords(pose, layout, mx, my), expect, atol=1e-14)


def test_element_positions_identity_reproduces_local_grid():
    layout = SurfaceLayout(3, 4, 0.5)
    got = element_positions(SurfacePose(np.eye(3), np.zeros(3)), layout)
    np.testing.assert_array_equal(got, layout.local_coords())
    # flat index mx * My + my
    np.testing.assert_array_equal(got[1 * 4 + 2], [0.5, 1.0, 0.0])


def test_layout_validation():
    with pytest.raises(InvalidArgumentError):
        SurfaceLayout(0, 3, 0.1)
    with pytest.raises(InvalidArgumentError):
        SurfaceLayout(3, 3, 0.0)
    layout = SurfaceLayout(4, 4, 0.1, np.array([[0.0, 0.0, 0.0], [0.3, 0.4, 0.0]]))
    assert layout.min_feed_distance() == pytest.approx(0.5)


def test_check_feasible_examples():
    same = [SurfacePose(np.eye(3), np.ones(3)), SurfacePose(np.eye(3), np.ones(3))]
    assert check_feasible(same, d_min=0.1).collision == ((0, 1),)
    q = np.array([0.2, 0.5, -0.3])
    assert check_feasible([SurfacePose(radial_rotation(q), q)]).ok
    # surface facing away from the origin side it sits on is blocked
    assert check_feasible([SurfacePose(rotation_between(E3, -E1), E1)]).blockage == (0,)
    # surface 1 looks straight at surface 0
    facing = [SurfacePose(np.eye(3), np.array([0.0, 0.0, 1.0])),
              SurfacePose(np.eye(3), np.array([0.0, 0.0, 0.5]))]
    assert (0, 1) in check_feasible(facing).reflection


def test_sphere_with_radial_normals_is_feasible():
    pts = fibonacci_sphere(20, 1.0)
    poses = [SurfacePose(radial_rotation(q), q) for q in pts]
    assert check_feasible(poses, d_min=0.25).ok


@given(st.permutations(range(4)), st.integers(0, 10_000))
def test_check_feasible_verdict_is_order_free(perm, seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((4, 3))
    normals = random_unit(rng, 4)
    poses = [SurfacePose(rotation_between(E3, n), q) for n, q in zip(normals, pts)]
    base = check_feasible(poses, d_min=0.5)
    shuffled = check_feasible([poses[i] for i in perm], d_min=0.5)
    assert base.ok == shuffled.ok
    assert len(base.reflection) == len(shuffled.reflection)
    assert len(base.collision) == len(shuffled.collision)


def test_fibonacci_sphere_radius_and_spread():
    pts = fibonacci_sphere(50, 2.0)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 2.0, atol=1e-12)
    assert np.linalg.norm(pts.mean(axis=0)) < 0.1
    with pytest.raises(InvalidArgumentError):
        fibonacci_sphere(0)


def test_pose_roundtrip():
    pose = SurfacePose(rodrigues(E2, 0.4), np.array([0.1, 0.2, 0.3]), 7)
    back = SurfacePose.from_dict(pose.to_dict())
    np.testing.assert_array_equal(back.rotation, pose.rotation)
    np.testing.assert_array_equal(back.position, pose.position)
    assert back.slot_index == 7
