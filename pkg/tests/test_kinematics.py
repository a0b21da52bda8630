import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from feltloom.kinematics import (PlatformPose, StewartGeometry, UnreachableError,
                                 felt_pose, felt_reach_check, inverse_kinematics,
                                 needle_orientation, reachable, rotation_matrix, work_pose)
from feltloom.felt import inward_approach
from feltloom.mesh import WorkEnvelope

from oracles import forward_kinematics, horn_tips

GEOM = StewartGeometry()
ENV = WorkEnvelope()

angles = st.floats(-180, 180)


@given(angles, st.floats(-89, 89), angles)
def test_rotation_matches_scipy_extrinsic_xyz(r, p, y):
    ref = Rotation.from_euler("xyz", [r, p, y], degrees=True).as_matrix()
    assert np.allclose(rotation_matrix(r, p, y), ref, atol=1e-12)


def test_home_pose_angles_equal():
    a = inverse_kinematics(GEOM.home_pose, GEOM).as_array()
    assert np.ptp(a) < 1e-9
    assert abs(a[0]) < 1e-9  # home height is defined by horizontal horns


poses = st.builds(PlatformPose, st.floats(-15, 15), st.floats(-15, 15),
                  st.floats(GEOM.home_height - 25, GEOM.home_height + 25),
                  st.floats(-8, 8), st.floats(-10, 10), st.floats(-20, 20))


@given(poses)
def test_ik_closure_and_fk_round_trip(pose):
    try:
        servo = inverse_kinematics(pose, GEOM).as_array()
    except UnreachableError:
        return
    assert np.all((servo >= GEOM.servo_min) & (servo <= GEOM.servo_max))
    rot = rotation_matrix(*pose.orientation)
    plat = GEOM.platform_anchors @ rot.T + pose.position
    rods = np.linalg.norm(plat - horn_tips(GEOM, servo), axis=1)
    assert np.allclose(rods, GEOM.rod_length, atol=1e-9)
    guess = np.array([0.0, 0.0, GEOM.home_height, 0.0, 0.0, 0.0])
    fk, res = forward_kinematics(GEOM, servo, guess)
    assert res < 1e-9
    assert np.allclose(fk[:3], pose.position, atol=1e-6)
    assert np.allclose(fk[3:], pose.orientation, atol=1e-6)


def test_unreachable_reports_legs():
    with pytest.raises(UnreachableError) as e:
        inverse_kinematics(PlatformPose(0, 0, GEOM.home_height + 200), GEOM)
    assert e.value.legs
    assert not reachable(PlatformPose(0, 0, GEOM.home_height, 0, 89, 0), GEOM)


def test_servo_limits_enforced():
    tight = StewartGeometry(servo_min=-1.0, servo_max=1.0)
    assert reachable(tight.home_pose, tight)
    assert not reachable(PlatformPose(0, 0, tight.home_height - 20), tight)


def test_geometry_validation():
    with pytest.raises(ValueError):
        StewartGeometry(horn_length=300.0)
    with pytest.raises(ValueError):
        StewartGeometry(base_anchor_angles=(0, 1, 2))
    with pytest.raises(ValueError):
        StewartGeometry(servo_min=10, servo_max=-10)


def test_work_frame_mapping():
    p = work_pose(0, 0, ENV.cyl_height / 2, 0, 0, 0, ENV, GEOM)
    assert p.z == pytest.approx(GEOM.home_height)


@given(st.floats(-89, 89), angles)
def test_needle_orientation_points_platform_needle(pitch, yaw):
    rot = rotation_matrix(0, pitch, yaw)
    a = rot @ np.array([-1.0, 0.0, 0.0])
    p2, y2 = needle_orientation(a)
    assert np.allclose(rotation_matrix(0, p2, y2) @ [-1.0, 0.0, 0.0], a, atol=1e-9)


@pytest.mark.parametrize("elev", [0.0, 5.0, 10.0])
def test_felt_hemisphere_boundary(elev):
    # reach is measured along the (possibly tilted) needle line
    a = inward_approach(elev)
    c = math.cos(math.radians(elev))
    ok = [d for d in (5.0, 20.0, 39.9, 40.0) if felt_reach_check((d * c, 0, 30), a, ENV, GEOM)]
    assert ok == [5.0, 20.0, 39.9, 40.0]
    assert not felt_reach_check((40.1 * c, 0, 30), a, ENV, GEOM)
    assert not felt_reach_check((55.0 * c, 0, 30), a, ENV, GEOM)


def test_felt_pose_places_needle_through_target():
    a = np.array(inward_approach(8.0))
    (x, y, z, roll, pitch, yaw), x_t = felt_pose((12.0, 0, 30.0), a, ENV, GEOM)
    c = np.array([x, y, z])
    assert np.allclose(c - x_t * a, (12.0, 0, 30.0))
    assert np.allclose(rotation_matrix(roll, pitch, yaw) @ [-1, 0, 0], a)


def test_needle_cannot_point_down():
    down = (-math.cos(math.radians(5)), 0.0, -math.sin(math.radians(5)))
    assert not felt_reach_check((10, 0, 30), down, ENV, GEOM)
    with pytest.raises(ValueError):
        felt_reach_check((10, 0, 30), (1.0, 1.0, 0.0), ENV, GEOM)
