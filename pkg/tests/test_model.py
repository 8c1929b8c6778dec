import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oetswarm.model import (
    ModelParams,
    PairState,
    SimplifiedState,
    SingularSeparation,
    Trajectory,
    dep_force,
    electrostatic_force,
    full_dynamics,
    pair_dynamics,
    pair_from_simplified,
    rk4_step,
    robot_position_from_simplified,
    rotation_to_link_frame,
    simplified_dynamics,
    simplified_from_pair,
    simplified_jacobian,
    vec2,
    wrap_angle,
)

P = ModelParams()

finite_coords = st.floats(min_value=-500.0, max_value=500.0,
                          allow_nan=False, allow_infinity=False)
angles = st.floats(min_value=-10.0, max_value=10.0,
                   allow_nan=False, allow_infinity=False)


def test_vec2_rejects_non_finite():
    with pytest.raises(ValueError):
        vec2(float("nan"), 0.0)
    with pytest.raises(ValueError):
        vec2(0.0, float("inf"))


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(k_d=0.0)
    with pytest.raises(ValueError):
        ModelParams(r_e=9.0, r_a=5.0)  # r_e must exceed 2*r_a
    with pytest.raises(ValueError):
        ModelParams(d=5.0, r_a=5.0)  # d < 2*r_a


def test_calibrated_ke_matches_equilibrium():
    p = ModelParams.calibrated(push_speed=15.0)
    assert p.k_e == pytest.approx(p.b_o * 15.0 * p.d**4)
    assert p.k_e == pytest.approx(P.k_e)  # default params are the calibrated set


def test_pair_state_rejects_coincident_centroids():
    with pytest.raises(SingularSeparation):
        PairState(vec2(1.0, 2.0), vec2(1.0, 2.0))


def test_simplified_state_wraps_theta():
    s = SimplifiedState(vec2(0, 0), 3 * math.pi)
    assert s.theta == pytest.approx(math.pi)
    assert SimplifiedState(vec2(0, 0), -math.pi).theta == pytest.approx(math.pi)


def test_trajectory_shape_invariant():
    with pytest.raises(ValueError):
        Trajectory(0.1, np.zeros((3, 4)), np.zeros((3, 2)))
    t = Trajectory(0.1, np.zeros((3, 4)), np.zeros((2, 2)))
    assert len(t) == 3


# --- trap force ---------------------------------------------------------


def test_dep_force_zero_displacement():
    assert np.allclose(dep_force(vec2(5, 5), vec2(5, 5), P), 0.0)


def test_dep_force_linearity():
    f1 = dep_force(vec2(3, -4), vec2(0, 0), P)
    f2 = dep_force(vec2(6, -8), vec2(0, 0), P)
    assert np.allclose(2.0 * f1, f2)


def test_dep_force_identity_stiffness():
    p = ModelParams(k_d=1.0)
    assert np.allclose(dep_force(vec2(3, -4), vec2(0, 0), p), [3.0, -4.0])


# --- repulsion ----------------------------------------------------------


def test_repulsion_inverse_fourth_power():
    f1 = np.linalg.norm(electrostatic_force(vec2(10, 0), vec2(0, 0), P))
    f2 = np.linalg.norm(electrostatic_force(vec2(20, 0), vec2(0, 0), P))
    assert f2 == pytest.approx(f1 / 16.0)


def test_repulsion_explicit_value():
    # k_e * (2, 0) / 2^5 = (1, 0); magnitude k_e / 2^4
    p = ModelParams(k_e=16.0)
    f = electrostatic_force(vec2(2, 0), vec2(0, 0), p)
    assert np.allclose(f, [1.0, 0.0])


@given(x=finite_coords, y=finite_coords)
def test_repulsion_is_repulsive(x, y):
    r = np.array([x, y])
    if np.linalg.norm(r) < P.eps_sing:
        return
    f = electrostatic_force(r, vec2(0, 0), P)
    # parallel to the centroid line with positive scalar
    assert np.dot(f, r) > 0.0
    assert abs(f[0] * r[1] - f[1] * r[0]) <= 1e-9 * np.linalg.norm(f) * np.linalg.norm(r)


@given(scale=st.floats(min_value=0.1, max_value=10.0))
def test_repulsion_scaling_ratio(scale):
    s0 = 10.0
    f1 = np.linalg.norm(electrostatic_force(vec2(s0, 0), vec2(0, 0), P))
    f2 = np.linalg.norm(electrostatic_force(vec2(scale * s0, 0), vec2(0, 0), P))
    assert f2 / f1 == pytest.approx(scale**-4, rel=1e-12)


def test_repulsion_singular_guard():
    with pytest.raises(SingularSeparation):
        electrostatic_force(vec2(0.2, 0), vec2(0, 0), P)  # below 0.1*r_a = 0.5


# --- full dynamics ------------------------------------------------------


def test_far_field_drift_is_negligible():
    # frozen from direct evaluation: k_e / (10*r_e)^4 = 759375 / 8.1e9
    s = PairState(vec2(300.0, 0.0), vec2(0.0, 0.0))
    dx_o, dx_r = full_dynamics(s, vec2(0, 0), P)
    expected = P.k_e / 300.0**4
    assert np.linalg.norm(dx_o) == pytest.approx(expected, rel=1e-12)
    assert expected < 1e-4
    # drift falls below 1e-6 um/s once separation exceeds (k_e/1e-6)^(1/4)
    far = (P.k_e / 1e-6) ** 0.25
    dx_o, _ = full_dynamics(PairState(vec2(far * 1.01, 0), vec2(0, 0)), vec2(0, 0), P)
    assert np.linalg.norm(dx_o) < 1e-6


def test_object_row_is_control_independent():
    s = PairState(vec2(12, 3), vec2(0, 0))
    d0, _ = full_dynamics(s, vec2(0, 0), P)
    d1, _ = full_dynamics(s, vec2(40, -40), P)
    assert np.allclose(d0, d1)


@given(ux=st.floats(-40, 40), uy=st.floats(-40, 40))
def test_momentum_balance(ux, uy):
    s = PairState(vec2(12, 3), vec2(0, 0))
    u = np.array([ux, uy])
    dx_o, dx_r = full_dynamics(s, u, P)
    assert np.allclose(P.b_o * dx_o + P.b_r * dx_r, P.k_d * u, atol=1e-9)


def test_repulsion_antisymmetry_before_damping():
    s = PairState(vec2(11, -2), vec2(0, 0))
    dx_o, dx_r = full_dynamics(s, vec2(0, 0), P)
    assert np.allclose(P.b_o * dx_o, -P.b_r * dx_r)


@given(phi=angles)
@settings(max_examples=50)
def test_rotation_equivariance(phi):
    rot = np.array([[math.cos(phi), -math.sin(phi)],
                    [math.sin(phi), math.cos(phi)]])
    x = np.array([20.0, 5.0, 3.0, -1.0])
    u = np.array([10.0, -4.0])
    dx = pair_dynamics(x, u, P)
    x_rot = np.concatenate((rot @ x[:2], rot @ x[2:]))
    dx_rot = pair_dynamics(x_rot, rot @ u, P)
    assert np.allclose(np.concatenate((rot @ dx[:2], rot @ dx[2:])), dx_rot,
                       atol=1e-10)


# --- simplified model ---------------------------------------------------


def test_simplified_jacobian_values():
    assert np.allclose(simplified_jacobian(0.0, 1.0),
                       [[1, 0], [0, 0], [0, -1]])
    j = simplified_jacobian(math.pi / 2, 2.0)
    assert np.allclose(j[:, 0], [0, 1, 0], atol=1e-15)


@given(theta=angles, d=st.floats(0.5, 50.0))
def test_simplified_jacobian_gram(theta, d):
    j = simplified_jacobian(theta, d)
    assert np.allclose(j.T @ j, np.diag([1.0, 1.0 / d**2]), atol=1e-12)


def test_simplified_dynamics_driftless():
    assert np.allclose(simplified_dynamics(np.array([3.0, 4.0, 1.0]), vec2(0, 0), P), 0.0)


def test_simplified_dynamics_pure_push():
    dx = simplified_dynamics(np.array([0.0, 0.0, 0.0]), vec2(1, 0), P)
    assert np.allclose(dx, [P.k_d / (P.b_o + P.b_r), 0.0, 0.0])


def test_simplified_dynamics_pure_reorientation():
    dx = simplified_dynamics(np.array([0.0, 0.0, 0.0]), vec2(0, 1), P)
    assert np.allclose(dx, [0.0, 0.0, -P.k_d / (P.b_r * P.d)])


def test_robot_position_from_simplified():
    assert np.allclose(robot_position_from_simplified(np.array([0, 0, 0.0]), 5.0),
                       [-5.0, 0.0])
    assert np.allclose(robot_position_from_simplified(np.array([0, 0, math.pi]), 5.0),
                       [5.0, 0.0], atol=1e-12)


@given(x=finite_coords, y=finite_coords, theta=angles)
def test_link_length_preserved(x, y, theta):
    pos = robot_position_from_simplified(np.array([x, y, theta]), P.d)
    assert np.linalg.norm(np.array([x, y]) - pos) == pytest.approx(P.d, rel=1e-12)


def test_pair_simplified_round_trip():
    s = PairState(vec2(10, 20), vec2(10 - P.d, 20))
    x_s = simplified_from_pair(s)
    assert x_s.theta == pytest.approx(0.0)
    back = pair_from_simplified(x_s.as_array(), P.d)
    assert np.allclose(back.x_r, s.x_r)


def test_rotation_to_link_frame_maps_link_to_x():
    theta = 0.7
    link_dir = np.array([math.cos(theta), math.sin(theta)])
    assert np.allclose(rotation_to_link_frame(theta) @ link_dir, [1.0, 0.0],
                       atol=1e-12)


# --- integrator ---------------------------------------------------------


def test_rk4_zero_field_is_identity():
    x = np.array([1.0, 2.0, 3.0])
    out = rk4_step(lambda x, u: np.zeros(3), x, None, 0.3)
    assert np.array_equal(out, x)


def test_rk4_exact_on_constants():
    a = np.array([2.0, -1.0])
    out = rk4_step(lambda x, u: a, np.zeros(2), None, 0.25)
    assert np.allclose(out, a * 0.25)


def test_rk4_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        rk4_step(lambda x, u: x, np.zeros(1), None, 0.0)


def test_rk4_step_halving_error_ratio():
    # Richardson check on the full model: local error of a dt step versus two
    # dt/2 steps shrinks ~2^4 when dt halves (one-step-pair comparison ~2^5
    # on the leading term; accept >= 20 to stay robust to higher-order terms).
    x0 = np.array([15.0, 0.0, 0.0, 0.0])
    u = np.array([30.0, 10.0])
    f = lambda x, _u: pair_dynamics(x, u, P)

    def pair_error(dt):
        one = rk4_step(f, x0, u, dt)
        two = rk4_step(f, rk4_step(f, x0, u, dt / 2), u, dt / 2)
        return np.linalg.norm(one - two)

    e1, e2 = pair_error(0.2), pair_error(0.1)
    assert e2 > 0
    assert e1 / e2 > 20.0  # measured ~32 at this state


def test_rk4_keeps_separation_positive_on_push():
    x = np.array([15.0, 0.0, 0.0, 0.0])
    u = np.array([30.0, 0.0])
    for _ in range(100):
        x = rk4_step(lambda x, _u: pair_dynamics(x, u, P), x, u, 0.1)
        assert np.linalg.norm(x[:2] - x[2:]) > 0


def test_wrap_angle_range_and_ties():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    arr = wrap_angle(np.array([0.0, 2 * math.pi, -3 * math.pi]))
    assert np.allclose(arr, [0.0, 0.0, math.pi])
