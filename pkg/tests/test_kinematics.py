import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbf_taskstack.errors import BehindCamera, DimensionMismatch
from cbf_taskstack.kinematics import (
    DEMO_7DOF_DH,
    EE_POSITION,
    IMAGE_FEATURE,
    JOINT_IDENTITY,
    CameraModel,
    RobotState,
    TaskMap,
    demo_7dof,
    forward_kinematics,
    geometric_jacobian,
    numeric_jacobian,
    planar_arm,
    task_jacobian,
    task_output,
    transform,
)

Q0 = np.array([0.0, 0.5, 0.0, -1.2, 0.0, 0.8, 0.0])


def dh_matrix(a, alpha, d, theta):
    ct, st_, ca, sa = np.cos(theta), np.sin(theta), np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st_ * ca, st_ * sa, a * ct],
            [st_, ct * ca, -ct * sa, a * st_],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def scratch_fk(q):
    T = np.eye(4)
    for (a, alpha, d, offset), qi in zip(DEMO_7DOF_DH, q):
        T = T @ dh_matrix(a, alpha, d, qi + offset)
    return T


def demo_camera(target=(0.95, 0.15, -0.1)):
    return CameraModel([500.0, 500.0], [320.0, 240.0], np.eye(4), target)


def test_planar_arm_stretched_and_rotated():
    arm = planar_arm([1.0, 1.0])
    np.testing.assert_allclose(forward_kinematics(arm, [0.0, 0.0])[:3, 3], [2.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(forward_kinematics(arm, [np.pi / 2, 0.0])[:3, 3], [0.0, 2.0, 0.0], atol=1e-15)


def test_planar_arm_position_jacobian_at_zero():
    arm = planar_arm([1.0, 1.0])
    J = task_jacobian(TaskMap(EE_POSITION, arm), RobotState(np.zeros(2)))
    np.testing.assert_allclose(J, [[0, 0], [2, 1], [0, 0]], atol=1e-15)


def test_demo_fk_matches_scratch_dh_composition():
    model = demo_7dof()
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.uniform(model.limits_lower, model.limits_upper)
        np.testing.assert_allclose(forward_kinematics(model, q), scratch_fk(q), atol=1e-10)


@given(st.floats(-np.pi, np.pi), st.floats(-3, 3), st.floats(-3, 3))
def test_base_rotation_rotates_position(yaw, q1, q2):
    arm = planar_arm([1.0, 0.7])
    rotated = type(arm)(arm.joints, arm.limits_lower, arm.limits_upper, base=transform(rpy=(0, 0, yaw)), tool=arm.tool)
    p = forward_kinematics(arm, [q1, q2])[:3, 3]
    c, s = np.cos(yaw), np.sin(yaw)
    np.testing.assert_allclose(forward_kinematics(rotated, [q1, q2])[:3, 3], [[c, -s, 0], [s, c, 0], [0, 0, 1]] @ p, atol=1e-12)


def test_joint_identity_output_and_jacobian():
    arm = planar_arm([1.0, 1.0])
    m = TaskMap(JOINT_IDENTITY, arm)
    state = RobotState(np.array([0.1, 0.2]))
    np.testing.assert_array_equal(task_output(m, state), [0.1, 0.2])
    np.testing.assert_array_equal(task_jacobian(m, state), np.eye(2))
    np.testing.assert_allclose(numeric_jacobian(m, state), np.eye(2), atol=1e-12)


def test_pinhole_projection_examples():
    cam = demo_camera()
    np.testing.assert_allclose(cam.project([0.0, 0.0, 1.0]), [320.0, 240.0])
    np.testing.assert_allclose(cam.project([0.1, -0.05, 2.0]), [345.0, 227.5])
    # on-axis output is unchanged when depth and focal length scale together
    far = CameraModel([1000.0, 1000.0], [320.0, 240.0], np.eye(4), (0, 0, 0))
    np.testing.assert_allclose(far.project([0.0, 0.0, 2.0]), cam.project([0.0, 0.0, 1.0]))


def test_behind_camera_raises_instead_of_nan():
    model = demo_7dof()
    m = TaskMap(IMAGE_FEATURE, model, demo_camera(target=(0.0, 0.0, 2.0)))
    with pytest.raises(BehindCamera):
        task_output(m, RobotState(Q0))
    with pytest.raises(BehindCamera):
        numeric_jacobian(m, RobotState(Q0))


def test_geometric_jacobian_linear_part_matches_position_map():
    model = demo_7dof()
    J = geometric_jacobian(model, Q0)
    assert J.shape == (6, 7)
    np.testing.assert_allclose(J[:3], task_jacobian(TaskMap(EE_POSITION, model), RobotState(Q0)), atol=1e-15)
    # angular part: finite difference of the rotation, R' R^T = [omega]x
    h = 1e-6
    for i in range(7):
        dq = np.zeros(7)
        dq[i] = h
        dR = (forward_kinematics(model, Q0 + dq)[:3, :3] - forward_kinematics(model, Q0 - dq)[:3, :3]) / (2 * h)
        W = dR @ forward_kinematics(model, Q0)[:3, :3].T
        np.testing.assert_allclose([W[2, 1], W[0, 2], W[1, 0]], J[3:, i], atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), min_size=7, max_size=7))
def test_position_jacobian_matches_central_differences(frac):
    model = demo_7dof()
    q = np.array(frac) * model.limits_upper
    m = TaskMap(EE_POSITION, model)
    np.testing.assert_allclose(task_jacobian(m, RobotState(q)), numeric_jacobian(m, RobotState(q)), atol=1e-8)


def test_central_difference_error_is_second_order():
    model = demo_7dof()
    m = TaskMap(EE_POSITION, model)
    state = RobotState(Q0 + 0.3)
    exact = task_jacobian(m, state)
    e1 = np.abs(numeric_jacobian(m, state, 1e-2) - exact).max()
    e2 = np.abs(numeric_jacobian(m, state, 5e-3) - exact).max()
    assert 3.0 < e1 / e2 < 5.0


def test_image_jacobian_at_nominal_pose():
    model = demo_7dof()
    m = TaskMap(IMAGE_FEATURE, model, demo_camera())
    state = RobotState(Q0)
    np.testing.assert_allclose(task_jacobian(m, state), numeric_jacobian(m, state), atol=1e-5)


def test_dimension_mismatch():
    model = demo_7dof()
    with pytest.raises(DimensionMismatch):
        forward_kinematics(model, np.zeros(6))
