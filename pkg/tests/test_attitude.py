import numpy as np
import pytest
from hypothesis import given

from agile_mpc.attitude import (
    IDENTITY,
    error_angle,
    quat_conjugate,
    quat_error,
    quat_from_axis_angle,
    quat_from_triad,
    quat_mul,
    rotate,
    shortest_arc,
    skew,
)

from strategies import unit_quaternions, vec3


def hamilton_by_hand(a, b):
    # (a0 + a) (b0 + b) = a0 b0 - a.b + a0 b + b0 a + a x b
    a0, av = a[0], np.asarray(a[1:])
    b0, bv = b[0], np.asarray(b[1:])
    return np.concatenate([[a0 * b0 - av @ bv], a0 * bv + b0 * av + np.cross(av, bv)])


def test_identity_is_neutral():
    q = quat_from_axis_angle([1, 2, 3], 0.7)
    np.testing.assert_allclose(quat_mul(IDENTITY, q), q)
    np.testing.assert_allclose(quat_mul(q, IDENTITY), q)


def test_i_times_j_is_k():
    np.testing.assert_array_equal(quat_mul([0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])


@given(unit_quaternions(), unit_quaternions())
def test_product_matches_vector_form(a, b):
    np.testing.assert_allclose(quat_mul(a, b), hamilton_by_hand(a, b), atol=1e-14)


@given(unit_quaternions(), unit_quaternions())
def test_product_keeps_unit_norm(a, b):
    assert abs(np.linalg.norm(quat_mul(a, b)) - 1.0) < 1e-9


@given(unit_quaternions())
def test_inverse_property(q):
    np.testing.assert_allclose(quat_mul(q, quat_conjugate(q)), IDENTITY, atol=1e-14)


def test_conjugate_examples():
    np.testing.assert_array_equal(quat_conjugate(IDENTITY), IDENTITY)
    np.testing.assert_array_equal(quat_conjugate([0, 0, 0, 1]), [0, 0, 0, -1])


@given(unit_quaternions())
def test_conjugate_is_an_involution(q):
    np.testing.assert_array_equal(quat_conjugate(quat_conjugate(q)), q)


@given(unit_quaternions())
def test_error_of_equal_attitudes_is_identity(q):
    e = quat_error(q, q)
    assert e[0] > 0
    assert np.abs(e[1:]).max() < 1e-12


def test_error_half_turn_sign_convention():
    # scalar part zero: first nonzero component made positive
    np.testing.assert_array_equal(quat_error([0, 0, 0, 1], IDENTITY), [0, 0, 0, 1])
    np.testing.assert_array_equal(quat_error([0, 0, 0, -1], IDENTITY), [0, 0, 0, 1])


def test_small_rotation_about_x():
    q_t = quat_from_axis_angle([0.3, -0.2, 0.9], 1.1)
    d = np.radians(0.5)
    q = quat_mul(q_t, quat_from_axis_angle([1, 0, 0], d))
    np.testing.assert_allclose(quat_error(q, q_t)[1:], [np.sin(d / 2), 0, 0], atol=1e-15)


@given(unit_quaternions(), unit_quaternions())
def test_error_is_canonical(q, q_t):
    assert quat_error(q, q_t)[0] >= 0


@given(unit_quaternions(), unit_quaternions())
def test_error_angle_ignores_sign_flips(q, q_t):
    base = error_angle(quat_error(q, q_t))
    assert abs(error_angle(quat_error(-q, q_t)) - base) < 1e-9
    assert abs(error_angle(quat_error(q, -q_t)) - base) < 1e-9


@given(unit_quaternions(), unit_quaternions())
def test_error_angle_is_the_relative_rotation_angle(q, q_t):
    # angle between the attitudes from the rotation matrices: cos = (tr(R_t' R) - 1) / 2
    def mat(p):
        return np.column_stack([rotate(p, e) for e in np.eye(3)])

    c = np.clip((np.trace(mat(q_t).T @ mat(q)) - 1.0) / 2.0, -1, 1)
    assert abs(error_angle(quat_error(q, q_t)) - np.degrees(np.arccos(c))) < 1e-5


def test_error_angle_examples():
    assert error_angle(IDENTITY) == 0.0
    assert error_angle(quat_from_axis_angle([0.2, 0.5, -1], np.pi)) == pytest.approx(180.0)
    assert abs(error_angle(quat_from_axis_angle([0, 0, 1], np.radians(10))) - 10.0) < 1e-9


def test_error_angle_at_zero_error_is_not_nan():
    assert error_angle(np.array([1.0 + 1e-16, 0, 0, 0])) == 0.0


def test_axis_angle_examples():
    np.testing.assert_array_equal(quat_from_axis_angle([3, -1, 2], 0.0), IDENTITY)
    np.testing.assert_allclose(quat_from_axis_angle([0, 0, 1], np.pi), [0, 0, 0, 1], atol=1e-16)
    with pytest.raises(ValueError):
        quat_from_axis_angle([0, 0, 0], 1.0)


@given(vec3, vec3)
def test_axis_angle_round_trip(axis, x):
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([1.0, 0, 0])
    angle = 3.1 * x[0]
    assert abs(error_angle(quat_from_axis_angle(axis, angle)) - abs(np.degrees(angle))) < 1e-6


def test_skew_examples():
    np.testing.assert_array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(skew([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])


@given(vec3, vec3)
def test_skew_is_the_cross_product(v, w):
    S = skew(v)
    np.testing.assert_allclose(S @ w, np.cross(v, w), atol=1e-15)
    np.testing.assert_array_equal(S + S.T, np.zeros((3, 3)))
    np.testing.assert_allclose(S @ v, 0.0, atol=1e-15)


@given(unit_quaternions(), vec3)
def test_rotate_matches_sandwich_product(q, v):
    full = quat_mul(quat_mul(q, np.concatenate([[0.0], v])), quat_conjugate(q))
    np.testing.assert_allclose(rotate(q, v), full[1:], atol=1e-14)


@given(unit_quaternions())
def test_triad_round_trip(q):
    axes = [rotate(q, e) for e in np.eye(3)]
    got = quat_from_triad(*axes)
    assert got[0] >= 0
    # same rotation up to the double cover
    assert min(np.abs(got - q).max(), np.abs(got + q).max()) < 1e-12


@given(vec3, vec3)
def test_shortest_arc_maps_u_onto_v(u, v):
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return
    q = shortest_arc(u, v)
    np.testing.assert_allclose(rotate(q, u / np.linalg.norm(u)), v / np.linalg.norm(v), atol=1e-9)


def test_shortest_arc_antiparallel():
    q = shortest_arc([0, 0, 1], [0, 0, -1])
    np.testing.assert_allclose(rotate(q, [0, 0, 1]), [0, 0, -1], atol=1e-15)
