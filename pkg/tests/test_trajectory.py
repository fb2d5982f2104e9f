import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bimanual_mppi.trajectory import (
    DerivativeBounds,
    Pose,
    TrajectoryError,
    VelocitySequence,
    as_joint_vector,
    derivative_profile,
    finite_difference,
    integrate_velocities,
    quat_conjugate,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_geodesic,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
)

Z = np.array([0.0, 0.0, 1.0])


def random_quats(rng, n):
    return quat_normalize(rng.normal(size=(n, 4)))


class TestFiniteDifference:
    def test_constant_sequence_has_zero_difference(self):
        assert_array_equal(finite_difference(np.ones((5, 2)), 1, 0.1), np.zeros((4, 2)))

    def test_first_difference(self):
        assert_allclose(finite_difference(np.array([[0.0], [0.1], [0.3]]), 1, 0.1), [[1.0], [2.0]], atol=1e-12)

    def test_second_difference(self):
        assert_allclose(finite_difference(np.array([[0.0], [0.1], [0.3]]), 2, 0.1), [[10.0]], atol=1e-10)

    def test_accepts_velocity_sequence(self):
        seq = VelocitySequence(np.array([[0.0], [0.1], [0.3]]), 0.1)
        assert_allclose(finite_difference(seq, 1, 0.1), [[1.0], [2.0]], atol=1e-12)

    @pytest.mark.parametrize("order, dt", [(0, 0.1), (3, 0.1), (1, 0.0), (1, -1.0)])
    def test_rejects_bad_arguments(self, order, dt):
        with pytest.raises(TrajectoryError):
            finite_difference(np.zeros((4, 1)), order, dt)

    def test_rejects_short_horizon(self):
        with pytest.raises(TrajectoryError):
            finite_difference(np.zeros((2, 1)), 2, 0.1)

    def test_linear_in_sequence(self, rng):
        a, b = rng.normal(size=(2, 6, 3))
        assert_allclose(
            finite_difference(2.0 * a - 3.0 * b, 2, 0.1),
            2.0 * finite_difference(a, 2, 0.1) - 3.0 * finite_difference(b, 2, 0.1),
            atol=1e-9,
        )


class TestIntegrateVelocities:
    def test_zero_velocities_stay_at_start(self):
        out = integrate_velocities([0.3, -0.2], np.zeros((4, 2)), 0.1)
        assert_array_equal(out, np.tile([0.3, -0.2], (5, 1)))

    def test_euler_steps(self):
        assert_allclose(integrate_velocities([0.0], np.array([[1.0], [1.0]]), 0.1), [[0.0], [0.1], [0.2]], atol=1e-15)

    def test_single_step_from_pi(self):
        assert_allclose(integrate_velocities([np.pi], np.array([[-1.0]]), 0.5), [[np.pi], [np.pi - 0.5]])

    def test_differences_reproduce_sequence(self, rng):
        seq = rng.normal(size=(8, 4))
        positions = integrate_velocities(rng.normal(size=4), seq, 0.1)
        assert_allclose(finite_difference(positions, 1, 0.1), seq, atol=1e-12)

    def test_broadcasts_over_batch(self, rng):
        seqs = rng.normal(size=(3, 5, 2))
        theta0 = np.array([0.1, 0.2])
        batched = integrate_velocities(theta0, seqs, 0.1)
        assert batched.shape == (3, 6, 2)
        for i in range(3):
            assert_allclose(batched[i], integrate_velocities(theta0, seqs[i], 0.1))

    def test_dimension_mismatch(self):
        with pytest.raises(TrajectoryError):
            integrate_velocities([0.0, 0.0], np.zeros((3, 3)), 0.1)


def test_derivative_profile_orders():
    seq = np.array([[0.0], [1.0], [0.0], [1.0]])
    profile = derivative_profile([0.0], seq, 0.1)
    assert [profile[r].shape[0] for r in range(4)] == [5, 4, 3, 2]
    assert_allclose(profile[2][:, 0], [10.0, -10.0, 10.0])
    assert_allclose(profile[3][:, 0], [-200.0, 200.0])


class TestTypes:
    def test_velocity_sequence_is_frozen_copy(self):
        raw = np.zeros((3, 2))
        seq = VelocitySequence(raw, 0.1)
        raw[0, 0] = 5.0
        assert seq.values[0, 0] == 0.0
        with pytest.raises(ValueError):
            seq.values[0, 0] = 1.0
        assert (seq.horizon, seq.dof) == (3, 2)

    @pytest.mark.parametrize("values, dt", [(np.zeros((1, 2)), 0.1), (np.zeros(3), 0.1), (np.zeros((3, 2)), 0.0)])
    def test_velocity_sequence_rejects(self, values, dt):
        with pytest.raises(TrajectoryError):
            VelocitySequence(values, dt)

    def test_velocity_sequence_rejects_nan(self):
        values = np.zeros((3, 2))
        values[1, 1] = np.nan
        with pytest.raises(TrajectoryError):
            VelocitySequence(values, 0.1)

    def test_joint_vector_bimanual_shape(self):
        assert as_joint_vector([1.0, 2.0], bimanual=True).shape == (2,)
        with pytest.raises(TrajectoryError):
            as_joint_vector([1.0, 2.0, 3.0], bimanual=True)
        with pytest.raises(TrajectoryError):
            as_joint_vector([np.inf, 0.0])

    def test_bounds_order_and_symmetric(self):
        bounds = DerivativeBounds.symmetric(2, position=1.0, velocity=2.0, acceleration=3.0, jerk=4.0, position_center=0.5)
        lo, hi = bounds.order(0)
        assert_allclose(lo, [-0.5, -0.5])
        assert_allclose(hi, [1.5, 1.5])
        assert_allclose(bounds.order(3)[1], [4.0, 4.0])
        assert bounds.dof == 2
        with pytest.raises(TrajectoryError):
            bounds.order(4)

    def test_bounds_reject_inverted(self):
        lower = np.zeros((4, 1))
        upper = np.zeros((4, 1))
        upper[2, 0] = -1.0
        with pytest.raises(TrajectoryError, match="order 2"):
            DerivativeBounds(lower, upper)

    def test_equal_bounds_allowed(self):
        DerivativeBounds(np.zeros((4, 2)), np.zeros((4, 2)))

    def test_pose_requires_unit_quaternion(self):
        with pytest.raises(TrajectoryError):
            Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 1e-3]))
        pose = Pose.from_arrays(np.zeros(3), np.array([2.0, 0.0, 0.0, 0.0]))
        assert_allclose(pose.orientation, [1.0, 0.0, 0.0, 0.0])

    def test_pose_compose_and_inverse(self, rng):
        a = Pose.from_arrays(rng.normal(size=3), rng.normal(size=4))
        b = Pose.from_arrays(rng.normal(size=3), rng.normal(size=4))
        point = rng.normal(size=3)
        assert_allclose(a.compose(b).transform_point(point), a.transform_point(b.transform_point(point)), atol=1e-12)
        ident = a.compose(a.inverse())
        assert_allclose(ident.position, np.zeros(3), atol=1e-12)
        assert quat_geodesic(ident.orientation, Pose.identity().orientation) < 1e-6


class TestQuaternions:
    def test_geodesic_identical_and_double_cover(self, rng):
        q = random_quats(rng, 1)[0]
        assert quat_geodesic(q, q) == pytest.approx(0.0, abs=1e-7)
        assert quat_geodesic(q, -q) == pytest.approx(0.0, abs=1e-7)

    def test_geodesic_quarter_turn(self):
        q = quat_from_axis_angle(Z, np.pi / 2)
        assert quat_geodesic(np.array([1.0, 0.0, 0.0, 0.0]), q) == pytest.approx(np.pi / 2, abs=1e-12)

    def test_geodesic_matches_rotation_matrix_angle(self, rng):
        a, b = random_quats(rng, 2)
        relative = quat_to_matrix(a).T @ quat_to_matrix(b)
        angle = np.arccos(np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0))
        assert quat_geodesic(a, b) == pytest.approx(angle, abs=1e-7)

    def test_geodesic_symmetric_and_left_invariant(self, rng):
        a, b, c = random_quats(rng, 3)
        assert quat_geodesic(a, b) == pytest.approx(quat_geodesic(b, a), abs=1e-12)
        assert quat_geodesic(quat_multiply(c, a), quat_multiply(c, b)) == pytest.approx(quat_geodesic(a, b), abs=1e-7)

    def test_geodesic_broadcasts(self, rng):
        qs = random_quats(rng, 5)
        out = quat_geodesic(qs, qs[0])
        assert out.shape == (5,)
        assert np.all((out >= 0) & (out <= np.pi))

    def test_geodesic_rejects_non_unit(self):
        with pytest.raises(TrajectoryError):
            quat_geodesic(np.array([1.0, 0.1, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0]))

    def test_rotate_matches_matrix(self, rng):
        q = random_quats(rng, 1)[0]
        v = rng.normal(size=3)
        assert_allclose(quat_rotate(q, v), quat_to_matrix(q) @ v, atol=1e-12)

    def test_matrix_round_trip_keeps_w_non_negative(self, rng):
        qs = random_quats(rng, 20)
        back = quat_from_matrix(quat_to_matrix(qs))
        assert np.all(back[:, 0] >= 0)
        assert_allclose(np.abs(np.sum(back * qs, axis=-1)), np.ones(20), atol=1e-9)

    def test_conjugate_inverts(self, rng):
        q = random_quats(rng, 1)[0]
        assert_allclose(quat_multiply(q, quat_conjugate(q)), [1.0, 0.0, 0.0, 0.0], atol=1e-12)
