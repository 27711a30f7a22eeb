import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifvf.geometry import Pose
from ifvf.robot import (
    ForceLimitExceeded,
    RobotState,
    SafetyLimits,
    TwistCommand,
    apply_twist,
    check_workspace,
    clamp_twist,
    opening_for_width,
    set_gripper,
    step_gripper,
)

LIM = SafetyLimits()
vec = st.lists(st.floats(-10.0, 10.0), min_size=3, max_size=3)


def test_default_limits():
    assert LIM.max_linear == 0.05
    assert LIM.max_angular == pytest.approx(math.radians(60))
    assert LIM.max_force == 20.0
    assert LIM.workspace == ((0.0, 1.1), (-0.3, 0.3), (0.0, 1.0))


def test_clamp_examples():
    c = clamp_twist(TwistCommand([0.2, 0, 0]), LIM)
    np.testing.assert_array_equal(c.linear, [0.05, 0, 0])
    z = clamp_twist(TwistCommand(), LIM)
    assert not np.any(z.linear) and not np.any(z.angular)
    a = clamp_twist(TwistCommand(angular=[0, 0, -2.0]), LIM)
    assert a.angular[2] == pytest.approx(-1.0472, abs=5e-5)
    assert a.angular[2] == pytest.approx(-math.pi / 3)


@given(vec, vec)
def test_clamp_is_idempotent_and_bounded(lin, ang):
    c = clamp_twist(TwistCommand(lin, ang), LIM)
    cc = clamp_twist(c, LIM)
    np.testing.assert_array_equal(c.linear, cc.linear)
    np.testing.assert_array_equal(c.angular, cc.angular)
    assert np.all(np.abs(c.linear) <= LIM.max_linear)
    assert np.all(np.abs(c.angular) <= LIM.max_angular)


def test_non_finite_twist_rejected():
    with pytest.raises(ValueError):
        TwistCommand([math.nan, 0, 0])


def test_apply_twist_one_control_tick():
    s = RobotState(ee_pose=Pose.from_xyz(0.5, 0.0, 0.5))
    s2 = apply_twist(s, TwistCommand([0.05, 0, 0]), 0.025, LIM)
    assert s2.ee_pose.position[0] == pytest.approx(0.50125, abs=1e-15)


def test_apply_twist_saturates_at_workspace_bound():
    s = RobotState(ee_pose=Pose.from_xyz(1.1, 0.0, 0.5))
    s2 = apply_twist(s, TwistCommand([0.05, 0, 0]), 0.025, LIM)
    assert s2.ee_pose.position[0] == 1.1


def test_pure_rotation_leaves_position():
    s = RobotState(ee_pose=Pose.from_xyz(0.5, 0.0, 0.5))
    w = math.radians(45)
    for _ in range(80):  # 2 s at 45 deg/s
        s = apply_twist(s, TwistCommand(angular=[0, 0, w]), 0.025, LIM)
    np.testing.assert_array_equal(s.ee_pose.position, [0.5, 0.0, 0.5])
    h = math.sqrt(2) / 2
    np.testing.assert_allclose(s.ee_pose.orientation, [h, 0, 0, h], atol=1e-9)


@settings(max_examples=50)
@given(st.lists(st.floats(-0.05, 0.05), min_size=3, max_size=3), st.integers(1, 20))
def test_translation_integration_is_step_independent(v, n):
    s = RobotState(ee_pose=Pose.from_xyz(0.5, 0.0, 0.5))
    a, b = s, s
    t = 0.2
    for _ in range(n):
        a = apply_twist(a, TwistCommand(v), t / n, LIM)
    for _ in range(2 * n):
        b = apply_twist(b, TwistCommand(v), t / (2 * n), LIM)
    np.testing.assert_allclose(a.ee_pose.position, b.ee_pose.position, atol=1e-12)


@settings(max_examples=200)
@given(st.lists(st.tuples(vec, vec), min_size=1, max_size=30),
       st.lists(st.floats(-0.2, 1.3), min_size=3, max_size=3))
def test_any_command_sequence_stays_in_box(cmds, start):
    s = RobotState(ee_pose=Pose(np.clip(start, LIM.lower, LIM.upper)))
    for lin, ang in cmds:
        s = apply_twist(s, TwistCommand(lin, ang), 0.025, LIM)
        assert check_workspace(s.ee_pose, LIM)
        assert np.linalg.norm(s.commanded_twist.linear, np.inf) <= LIM.max_linear
        assert np.linalg.norm(s.commanded_twist.angular, np.inf) <= LIM.max_angular


def test_check_workspace_examples():
    assert check_workspace(Pose.from_xyz(0.5, 0.0, 0.5), LIM)
    assert not check_workspace(Pose.from_xyz(1.2, 0.0, 0.5), LIM)
    assert check_workspace(Pose.from_xyz(1.1, 0.3, 1.0), LIM)


def test_gripper_closes_in_fifty_ticks():
    s = set_gripper(RobotState(), 0.0, 10.0, 1.0, LIM)
    for i in range(49):
        s = step_gripper(s)
    assert s.gripper_opening > 0.0
    s = step_gripper(s)
    assert s.gripper_opening == 0.0


def test_gripper_halts_on_handle_width():
    contact = opening_for_width(0.06)
    s = set_gripper(RobotState(), 0.0, 10.0, 1.0, LIM)
    for _ in range(60):
        s = step_gripper(s, contact_opening=contact)
    assert s.gripper_opening == pytest.approx(contact)
    assert s.gripper_force == 10.0


def test_gripper_force_limit():
    with pytest.raises(ForceLimitExceeded):
        set_gripper(RobotState(), 0.0, 25.0, 1.0, LIM)
    with pytest.raises(ValueError):
        set_gripper(RobotState(), 1.5, 5.0, 1.0, LIM)
