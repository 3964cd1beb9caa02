import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slamfilters.errors import DegenerateGeometryError
from slamfilters.geometry import (
    MotionInput,
    Pose,
    StateVector,
    inverse_observation,
    jacobian_f,
    jacobian_h,
    measure,
    motion_step,
    wrap_angle,
)

from conftest import fd_jacobian, random_slam_state


class TestWrapAngle:
    @pytest.mark.parametrize("angle, expected", [
        (0.0, 0.0),
        (3 * np.pi / 2, -np.pi / 2),
        (-np.pi, -np.pi),
        (np.pi, -np.pi),
        (2 * np.pi, 0.0),
        (-3 * np.pi, -np.pi),
    ])
    def test_values(self, angle, expected):
        assert wrap_angle(angle) == pytest.approx(expected, abs=1e-12)

    @given(st.floats(-1e6, 1e6))
    @settings(max_examples=300, deadline=None)
    def test_range_and_congruence(self, angle):
        wrapped = wrap_angle(angle)
        assert -np.pi <= wrapped < np.pi
        # congruent mod 2*pi
        assert math.isclose(math.cos(wrapped), math.cos(angle), abs_tol=1e-9)
        assert math.isclose(math.sin(wrapped), math.sin(angle), abs_tol=1e-9)

    @given(st.floats(1e-12, 1e-3))
    @settings(max_examples=100, deadline=None)
    def test_near_boundary(self, eps):
        assert wrap_angle(np.pi - eps) == pytest.approx(np.pi - eps)
        assert wrap_angle(np.pi + eps) == pytest.approx(-np.pi + eps)
        assert wrap_angle(-np.pi - eps) == pytest.approx(np.pi - eps)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            wrap_angle(bad)

    def test_array_input(self):
        out = wrap_angle(np.array([0.0, 3 * np.pi / 2, -np.pi]))
        np.testing.assert_allclose(out, [0.0, -np.pi / 2, -np.pi])


class TestTypes:
    def test_pose_wraps_theta(self):
        assert Pose(0.0, 0.0, 3 * np.pi / 2).theta == pytest.approx(-np.pi / 2)

    def test_state_vector_round_trip(self):
        state = StateVector(Pose(1.0, 2.0, 0.5), np.array([[3.0, 4.0], [5.0, 6.0]]))
        arr = state.as_array()
        assert arr.shape == (7,)
        back = StateVector.from_array(arr)
        np.testing.assert_allclose(back.as_array(), arr)

    def test_state_vector_needs_landmarks(self):
        with pytest.raises(ValueError):
            StateVector(Pose(0, 0, 0), np.empty((0, 2)))

    def test_motion_input_finite(self):
        with pytest.raises(ValueError):
            MotionInput(np.nan, 0.0)


class TestMotionStep:
    def test_straight_along_x(self):
        state = np.array([0.0, 0.0, 0.0, 10.0, 10.0])
        out = motion_step(state, MotionInput(5.0, 0.0))
        np.testing.assert_allclose(out[:3], [5.0, 0.0, 0.0])

    def test_straight_along_y(self):
        state = np.array([0.0, 0.0, np.pi / 2, 10.0, 10.0])
        out = motion_step(state, (5.0, 0.0))
        np.testing.assert_allclose(out[:3], [0.0, 5.0, np.pi / 2], atol=1e-12)

    def test_scalar_oracle(self):
        # independent scalar evaluation of the motion equations
        state = np.array([1.0, 2.0, 0.3, 7.0, -3.0])
        noise = np.array([0.01, -0.02, 0.005])
        out = motion_step(state, (1.0, 0.1), noise)
        assert out[0] == pytest.approx(1.0 + 1.0 * math.cos(0.3) + 0.01, abs=1e-15)
        assert out[1] == pytest.approx(2.0 + 1.0 * math.sin(0.3) - 0.02, abs=1e-15)
        assert out[2] == pytest.approx(0.3 + 0.1 + 0.005, abs=1e-15)

    def test_landmarks_unchanged(self):
        rng = np.random.default_rng(1)
        state = random_slam_state(rng)
        out = motion_step(state, (2.0, 0.7), rng.standard_normal(3))
        np.testing.assert_array_equal(out[3:], state[3:])

    def test_identity_when_still(self):
        rng = np.random.default_rng(2)
        state = random_slam_state(rng)
        out = motion_step(state, (0.0, 0.0), np.zeros(3))
        np.testing.assert_array_equal(out, state)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            motion_step(np.zeros(5), (1.0, 0.0), np.zeros(4))
        with pytest.raises(ValueError):
            motion_step(np.zeros(4), (1.0, 0.0))

    def test_batched(self):
        rng = np.random.default_rng(3)
        states = np.stack([random_slam_state(rng) for _ in range(4)])
        controls = np.column_stack([np.full(4, 2.0), rng.uniform(-1, 1, 4)])
        batched = motion_step(states, controls)
        for i in range(4):
            np.testing.assert_array_equal(batched[i], motion_step(states[i], controls[i]))


class TestMeasure:
    def test_three_four_five(self):
        out = measure(np.array([0.0, 0.0, 0.0, 3.0, 4.0]))
        np.testing.assert_allclose(out, [5.0, math.atan2(4, 3)])

    def test_heading_subtraction(self):
        out = measure(np.array([0.0, 0.0, np.pi, 3.0, 4.0]))
        assert out[0] == pytest.approx(5.0)
        assert out[1] == pytest.approx(wrap_angle(math.atan2(4, 3) - np.pi))

    def test_per_landmark_oracle(self):
        rng = np.random.default_rng(4)
        state = random_slam_state(rng, num_landmarks=5)
        out = measure(state)
        for m in range(5):
            dx = state[3 + 2 * m] - state[0]
            dy = state[4 + 2 * m] - state[1]
            assert out[2 * m] == pytest.approx(math.hypot(dx, dy), rel=1e-12)
            assert out[2 * m + 1] == pytest.approx(
                wrap_angle(math.atan2(dy, dx) - state[2]), abs=1e-12)

    def test_zero_range_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            measure(np.array([1.0, 2.0, 0.0, 1.0, 2.0]))

    def test_bearings_wrapped(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            out = measure(random_slam_state(rng))
            bearings = out[1::2]
            assert np.all(bearings >= -np.pi) and np.all(bearings < np.pi)


class TestJacobians:
    def test_jacobian_f_identity_at_zero_speed(self):
        rng = np.random.default_rng(6)
        state = random_slam_state(rng)
        np.testing.assert_array_equal(jacobian_f(state, (0.0, 0.3)), np.eye(len(state)))

    def test_jacobian_f_heading_column(self):
        state = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
        jac = jacobian_f(state, (5.0, 0.0))
        assert jac[0, 2] == 0.0
        assert jac[1, 2] == 5.0

    def test_jacobian_f_finite_difference(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            state = random_slam_state(rng)
            control = (rng.uniform(0, 5), rng.uniform(-np.pi, np.pi))
            jac = jacobian_f(state, control)
            fd = fd_jacobian(lambda x: motion_step(x, control), state,
                             wrap_rows=np.array([2]))
            assert np.linalg.norm(fd - jac) / np.linalg.norm(jac) < 1e-4

    def test_jacobian_h_unit_geometry(self):
        jac = jacobian_h(np.array([0.0, 0.0, 0.0, 1.0, 0.0]))
        np.testing.assert_allclose(jac[0], [-1.0, 0.0, 0.0, 1.0, 0.0])
        np.testing.assert_allclose(jac[1], [0.0, -1.0, -1.0, 0.0, 1.0])

    def test_jacobian_h_heading_entry(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            jac = jacobian_h(random_slam_state(rng))
            np.testing.assert_array_equal(jac[1::2, 2], -np.ones(5))

    def test_jacobian_h_finite_difference(self):
        rng = np.random.default_rng(9)
        wrap_rows = np.arange(1, 10, 2)
        for _ in range(200):
            state = random_slam_state(rng)
            jac = jacobian_h(state)
            fd = fd_jacobian(measure, state, wrap_rows=wrap_rows)
            assert np.linalg.norm(fd - jac) / np.linalg.norm(jac) < 1e-4

    def test_jacobian_h_zero_range_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            jacobian_h(np.array([1.0, 2.0, 0.0, 1.0, 2.0]))

    def test_jacobian_h_batched(self):
        rng = np.random.default_rng(10)
        states = np.stack([random_slam_state(rng) for _ in range(3)])
        batched = jacobian_h(states)
        for i in range(3):
            np.testing.assert_array_equal(batched[i], jacobian_h(states[i]))


class TestInverseObservation:
    def test_along_heading(self):
        np.testing.assert_allclose(inverse_observation(Pose(0, 0, 0), 5.0, 0.0), [5.0, 0.0])

    def test_heading_up(self):
        np.testing.assert_allclose(
            inverse_observation(Pose(2, 3, np.pi / 2), 1.0, 0.0), [2.0, 4.0], atol=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            state = random_slam_state(rng, num_landmarks=3)
            y = measure(state)
            for m in range(3):
                rec = inverse_observation(state[:3], y[2 * m], y[2 * m + 1])
                np.testing.assert_allclose(rec, state[3 + 2 * m:5 + 2 * m], atol=1e-9)

    @pytest.mark.parametrize("bad_range", [0.0, -1.0])
    def test_non_positive_range_rejected(self, bad_range):
        with pytest.raises(ValueError):
            inverse_observation(Pose(0, 0, 0), bad_range, 0.0)
