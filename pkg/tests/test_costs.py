import numpy as np
import pytest

from bimanual_mppi.costs import (
    CostError,
    axis_alignment_cost,
    collision_cost,
    ee_distance_cost,
    eef_obj_alignment_cost,
    joint_deviation_cost,
    obj_target_cost,
    orientation_target_cost,
    paired_orientation_cost,
    paired_position_cost,
    position_target_cost,
    relative_velocity_cost,
)
from bimanual_mppi.trajectory import quat_from_axis_angle

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
Z = np.array([0.0, 0.0, 1.0])


class TestCollisionCost:
    def test_large_non_decreasing_distances(self):
        assert collision_cost([[1.0, 2.0], [1.0, 2.5], [1.2, 3.0]], 0.1) == 0.0

    def test_barrier_step(self):
        assert collision_cost([[1.0], [0.85]], 0.1) == pytest.approx(0.05)

    def test_penetration_counts_per_step_and_pair(self):
        assert collision_cost([[-0.01], [-0.01]], 0.1) == pytest.approx(2.001)

    def test_zero_cost_implies_safe_decay(self, rng):
        d = np.cumsum(rng.uniform(0.0, 0.1, size=(6, 4)), axis=0) + 0.1
        assert collision_cost(d, 0.1) == 0.0

    def test_batched(self):
        d = np.array([[[1.0], [0.85]], [[-0.01], [-0.01]]])
        np.testing.assert_allclose(collision_cost(d, 0.1), [0.05, 2.001])

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5])
    def test_gamma_range(self, gamma):
        with pytest.raises(CostError):
            collision_cost([[1.0], [1.0]], gamma)

    def test_needs_matrix(self):
        with pytest.raises(CostError):
            collision_cost([1.0, 0.5], 0.1)


class TestJointDeviation:
    def test_at_home(self):
        home = np.array([0.1, -0.2])
        assert joint_deviation_cost(np.tile(home, (4, 1)), home) == 0.0

    def test_single_joint_offset(self):
        assert joint_deviation_cost([[0.3, 0.0]], [0.0, 0.0]) == pytest.approx(0.3)

    def test_three_four_five(self):
        assert joint_deviation_cost([[0.3, 0.4], [0.3, 0.4]], [0.0, 0.0]) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(CostError):
            joint_deviation_cost([[0.0, 0.0]], [0.0])


class TestAxisAlignment:
    def test_identical(self, rng):
        p = rng.normal(size=(5, 3))
        assert axis_alignment_cost(p, p, "xyz") == 0.0

    def test_constant_height_offset(self):
        p1 = np.zeros((5, 3))
        p2 = p1 + [0.0, 0.0, 0.1]
        assert axis_alignment_cost(p1, p2, "z") == pytest.approx(0.5)

    def test_offset_outside_axes(self):
        p1 = np.zeros((3, 3))
        assert axis_alignment_cost(p1, p1 + [0.4, 0, 0], ["y", "z"]) == 0.0

    def test_symmetric(self, rng):
        p1, p2 = rng.normal(size=(2, 4, 3))
        assert axis_alignment_cost(p1, p2, "yz") == pytest.approx(axis_alignment_cost(p2, p1, "yz"))

    @pytest.mark.parametrize("axes", ["", "w", ["x", "q"]])
    def test_bad_axes(self, axes):
        with pytest.raises(CostError):
            axis_alignment_cost(np.zeros((2, 3)), np.zeros((2, 3)), axes)

    def test_shape_mismatch(self):
        with pytest.raises(CostError):
            axis_alignment_cost(np.zeros((2, 3)), np.zeros((3, 3)), "z")


class TestRelativeVelocity:
    def test_equal_velocities(self, rng):
        p1, p2, v = rng.normal(size=(3, 4, 3))
        assert relative_velocity_cost(p1, p2, v, v) == 0.0

    def test_orthogonal_motion(self):
        p1 = np.array([[1.0, 0, 0], [1.0, 0, 0]])
        p2 = np.zeros((2, 3))
        v1 = np.array([[0, 0.2, 0], [0, 0, 0.3]])
        assert relative_velocity_cost(p1, p2, v1, np.zeros((2, 3))) == 0.0

    def test_single_step(self):
        cost = relative_velocity_cost([[1.0, 0, 0]], [[0.0, 0, 0]], [[0.2, 0, 0]], [[0.0, 0, 0]])
        assert cost == pytest.approx(0.2)

    def test_arm_relabeling(self, rng):
        p1, p2, v1, v2 = rng.normal(size=(4, 5, 3))
        assert relative_velocity_cost(p1, p2, v1, v2) == pytest.approx(relative_velocity_cost(p2, p1, v2, v1))


class TestPositionTarget:
    def test_at_target(self):
        assert position_target_cost(np.tile([0.1, 0.2, 0.3], (3, 1)), [0.1, 0.2, 0.3]) == 0.0

    def test_constant_distance(self):
        p = np.tile([0.0, 0.2, 0.0], (3, 1))
        assert position_target_cost(p, [0.0, 0.0, 0.0]) == pytest.approx(0.6)

    def test_x_only_ignores_other_axes(self):
        p = np.tile([0.3, 0.5, -0.2], (3, 1))
        assert position_target_cost(p, [0.3, 0.0, 0.0], "x-only") == 0.0
        assert position_target_cost(p, [0.1, 0.0, 0.0], "x-only") == pytest.approx(0.6)

    def test_rejects(self):
        with pytest.raises(CostError):
            position_target_cost(np.zeros((2, 3)), [np.nan, 0, 0])
        with pytest.raises(CostError):
            position_target_cost(np.zeros((2, 3)), [0, 0, 0], "manhattan")

    def test_paired_is_mean_of_arms(self):
        p1 = np.tile([0.2, 0, 0], (2, 1))
        p2 = np.zeros((2, 3))
        assert paired_position_cost(p1, p2, np.zeros(3), np.zeros(3)) == pytest.approx(0.2)


class TestOrientationTarget:
    def test_aligned(self):
        assert orientation_target_cost(np.tile(IDENTITY, (3, 1)), IDENTITY) == 0.0

    def test_quarter_turns(self):
        q = np.tile(quat_from_axis_angle(Z, np.pi / 2), (4, 1))
        assert orientation_target_cost(q, IDENTITY) == pytest.approx(2 * np.pi)

    def test_double_cover(self):
        q = quat_from_axis_angle(Z, 0.7)
        assert orientation_target_cost(np.tile(-q, (3, 1)), q) == pytest.approx(0.0, abs=1e-6)

    def test_non_unit_target(self):
        with pytest.raises(CostError):
            orientation_target_cost(np.tile(IDENTITY, (2, 1)), [2.0, 0, 0, 0])

    def test_paired_is_half_sum(self):
        q = np.tile(quat_from_axis_angle(Z, np.pi / 2), (2, 1))
        ident = np.tile(IDENTITY, (2, 1))
        assert paired_orientation_cost(q, ident, IDENTITY, IDENTITY) == pytest.approx(np.pi / 2)


class TestEeDistance:
    def test_exact_separation(self):
        p1 = np.zeros((3, 3))
        assert ee_distance_cost(p1, p1 + [0.28, 0, 0], 0.28) == pytest.approx(0.0, abs=1e-15)

    def test_squared_error(self):
        assert ee_distance_cost([[0.0, 0, 0]], [[0.38, 0, 0]], 0.28) == pytest.approx(0.01)

    def test_positive_target(self):
        with pytest.raises(CostError):
            ee_distance_cost(np.zeros((1, 3)), np.ones((1, 3)), 0.0)


class TestMidpointCosts:
    def test_eef_obj_at_offset_target(self):
        ball = np.array([0.0, 0.0, 0.1])
        p1 = np.tile([-0.05, 0, 0.05], (2, 1))
        p2 = np.tile([0.05, 0, 0.05], (2, 1))
        assert eef_obj_alignment_cost(p1, p2, ball, 0.05) == pytest.approx(0.0, abs=1e-15)
        assert eef_obj_alignment_cost(p1 + [0, 0, 0.05], p2 + [0, 0, 0.05], ball, 0.05) == pytest.approx(0.10)

    def test_obj_target(self):
        target = np.array([0.0, 0.0, 0.3])
        p1 = np.tile([-0.05, 0, 0.25], (3, 1))
        p2 = np.tile([0.05, 0, 0.25], (3, 1))
        assert obj_target_cost(p1, p2, target, 0.05) == pytest.approx(0.0, abs=1e-15)
        assert obj_target_cost(p1 - [0, 0, 0.2], p2 - [0, 0, 0.2], target, 0.05) == pytest.approx(0.6)

    def test_arm_relabeling(self, rng):
        p1, p2 = rng.normal(size=(2, 4, 3))
        target = rng.normal(size=3)
        assert obj_target_cost(p1, p2, target, 0.05) == pytest.approx(obj_target_cost(p2, p1, target, 0.05))
        assert eef_obj_alignment_cost(p1, p2, target, 0.05) == pytest.approx(
            eef_obj_alignment_cost(p2, p1, target, 0.05)
        )

    def test_epsilon_must_be_positive(self):
        with pytest.raises(CostError):
            obj_target_cost(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(3), 0.0)
        with pytest.raises(CostError):
            eef_obj_alignment_cost(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(3), -1.0)


def test_terms_are_non_negative(rng):
    p1, p2, v1, v2 = rng.normal(size=(4, 6, 3))
    d = rng.normal(size=(6, 5))
    values = [
        collision_cost(d, 0.1),
        axis_alignment_cost(p1, p2, "xyz"),
        relative_velocity_cost(p1, p2, v1, v2),
        position_target_cost(p1, p2[0]),
        ee_distance_cost(p1, p2, 0.3),
        obj_target_cost(p1, p2, v1[0], 0.05),
    ]
    assert all(v >= 0 for v in values)
