import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifvf.geometry import Pose, make_transform, quat_from_axis_angle, quat_to_matrix, random_quaternion
from ifvf.sensors import (
    CalibrationState,
    CameraCalibration,
    DegenerateRoutine,
    ForceSensorModel,
    Frame,
    MixedFrames,
    NoiseModel,
    RollingAverager,
    WrenchReading,
    WrongFrame,
    base_to_camera,
    calibrate_gravity,
    camera_to_base,
    detect_objects,
    raw_reading,
    read_wrench,
    rolling_average,
    wrench_to_global,
)
from ifvf.world import ObjectState, WorldState

MODEL = ForceSensorModel(tool_mass=0.9, tool_com=np.array([0.0, 0.0, 0.04]))
PERFECT = CalibrationState(tool_mass=0.9, tool_com=np.array([0.0, 0.0, 0.04]))
QUIET = NoiseModel.noiseless()
quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3)


def holding(mass):
    w = WorldState(objects={"box": ObjectState("box", "box", Pose.from_xyz(0.5, 0.0, 0.3), mass=mass)})
    w.set_ee(Pose.from_xyz(0.5, 0.0, 0.3))
    w.grasp("object", "box")
    return w


def test_free_space_compensated_wrench_is_zero():
    pose = Pose(np.array([0.5, 0.0, 0.4]), quat_from_axis_angle([1, 1, 0], 0.7))
    r = read_wrench(WorldState(), pose, PERFECT, QUIET, 0.0, model=MODEL)
    assert r.frame is Frame.SENSOR_LOCAL
    np.testing.assert_allclose(r.force, 0.0, atol=1e-12)
    np.testing.assert_allclose(r.torque, 0.0, atol=1e-12)


def test_held_half_kilo_reads_mg_upward():
    pose = Pose.from_xyz(0.5, 0.0, 0.3)
    r = read_wrench(holding(0.5), pose, PERFECT, QUIET, 0.0, model=MODEL)
    assert wrench_to_global(r, pose).up == pytest.approx(0.5 * 9.81, abs=1e-12)


def test_force_noise_sigma():
    rng = np.random.default_rng(0)
    noise = NoiseModel(sigma_force=0.1)
    pose = Pose.from_xyz(0.5, 0.0, 0.4)
    f = np.array([read_wrench(WorldState(), pose, PERFECT, noise, 0.0, rng, MODEL).force for _ in range(10_000)])
    assert np.all(np.abs(f.std(axis=0) - 0.1) < 0.01)


def test_wrench_to_global_examples():
    r = WrenchReading([1.0, -2.0, 3.0], [0.1, 0.2, 0.3], "sensor_local", 1.0)
    g = wrench_to_global(r, Pose.from_xyz(0.3, 0, 0.3))
    np.testing.assert_array_equal(g.force, r.force)
    np.testing.assert_array_equal(g.torque, r.torque)
    assert g.frame is Frame.ROBOT_BASE
    rx = Pose(np.zeros(3), quat_from_axis_angle([1, 0, 0], math.pi / 2))
    g = wrench_to_global(WrenchReading([0, 0, 5.0], [0, 0, 0], "sensor_local", 0.0), rx)
    np.testing.assert_allclose(g.force, [0, -5.0, 0], atol=1e-12)
    with pytest.raises(WrongFrame):
        wrench_to_global(g, rx)


@settings(max_examples=300)
@given(quats, st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_wrench_transform_is_an_isometry(q, w):
    r = WrenchReading(w[:3], w[3:], "sensor_local", 0.0)
    g = wrench_to_global(r, Pose(np.zeros(3), np.asarray(q)))
    assert abs(np.linalg.norm(g.force) - np.linalg.norm(r.force)) <= 1e-9
    assert abs(np.linalg.norm(g.torque) - np.linalg.norm(r.torque)) <= 1e-9


def _routine(n, rng):
    return [Pose(np.array([0.5, 0.0, 0.4]), random_quaternion(rng)) for _ in range(n)]


def test_calibration_recovers_synthetic_tool():
    model = ForceSensorModel(tool_mass=0.9, tool_com=np.array([0.0, 0.0, 0.04]),
                             bias_force=np.array([0.3, -0.2, 0.5]), bias_torque=np.array([0.01, 0.0, -0.02]))
    poses = _routine(6, np.random.default_rng(1))
    readings = [raw_reading(WorldState(), p, QUIET, None, model) for p in poses]
    cal = calibrate_gravity(poses, readings)
    assert abs(cal.tool_mass - 0.9) <= 1e-6
    assert cal.tool_mass == pytest.approx(0.9, rel=1e-9)
    np.testing.assert_allclose(cal.tool_com, [0, 0, 0.04], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(cal.bias_force, model.bias_force, rtol=1e-9)
    np.testing.assert_allclose(cal.bias_torque, model.bias_torque, rtol=1e-9, atol=1e-12)


def test_one_orientation_is_degenerate():
    p = Pose.from_xyz(0.5, 0, 0.4)
    r = raw_reading(WorldState(), p, QUIET, None, MODEL)
    with pytest.raises(DegenerateRoutine):
        calibrate_gravity([p], [r])
    with pytest.raises(DegenerateRoutine):
        calibrate_gravity([p, p, p], [r, r, r])


def test_noisy_calibration_held_out_residual():
    # residual = the systematic error left after compensation, per axis, on orientations
    # the routine never visited; each routine pose contributes one noisy sample
    noise = NoiseModel(sigma_force=0.1)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        poses = _routine(6, rng)
        cal = calibrate_gravity(poses, [raw_reading(WorldState(), p, noise, rng, MODEL) for p in poses])
        for p in _routine(10, rng):
            r = read_wrench(WorldState(), p, cal, QUIET, 0.0, None, MODEL)
            worst = max(worst, float(np.max(np.abs(r.force))))
    assert worst <= 0.3


def _r(fz, frame="robot_base", t=0.0):
    return WrenchReading([0, 0, fz], [0, 0, 0], frame, t)


def test_rolling_average_examples():
    same = [_r(2.0, t=i) for i in range(5)]
    avg = rolling_average(same)
    assert avg.force[2] == 2.0 and avg.timestamp == 4
    assert rolling_average([_r(z) for z in (1, 2, 3, 4, 5)]).force[2] == 3.0
    with pytest.raises(MixedFrames):
        rolling_average([_r(1)] * 4 + [_r(1, "sensor_local")])
    with pytest.raises(ValueError):
        rolling_average([_r(1)] * 4)


def test_rolling_average_reduces_noise_by_sqrt5():
    rng = np.random.default_rng(2)
    avg = RollingAverager()
    out = []
    for i, z in enumerate(rng.normal(0, 0.1, 50_000)):
        a = avg.push(_r(z))
        if i >= 4 and i % 5 == 0:
            out.append(a.force[2])
    assert np.std(out) == pytest.approx(0.1 / math.sqrt(5), rel=0.05)


def _scene(ee=(0.3, -0.25, 0.6)):
    w = WorldState(objects={"mug": ObjectState("mug", "white mug", Pose.from_xyz(0.5, 0.1, 0.0), height=0.1),
                            "cup": ObjectState("cup", "blue cup", Pose.from_xyz(0.4, -0.1, 0.0),
                                               similar_shape=("white mug",))})
    w.set_ee(Pose.from_xyz(*ee))
    return w


def _calib():
    from ifvf.runtime.scenario import _look_at
    cam = _look_at(np.array([1.5, 0.0, 0.9]), np.array([0.5, 0.0, 0.0]))
    return CameraCalibration.from_poses(cam, Pose.from_xyz(0.0, 0.0, 0.0))


def test_noiseless_detection_is_exact():
    d = detect_objects(_scene(), ["white mug"], _calib(), QUIET, 3.0)
    assert [x.object_id for x in d] == ["mug"]
    np.testing.assert_allclose(d[0].pose.position, [0.5, 0.1, 0.0], atol=1e-12)


def test_end_effector_occludes_nearby_object():
    cal = _calib()
    center = np.array([0.5, 0.1, 0.05])
    ray = cal.camera_position - center
    ee = center + 0.08 * ray / np.linalg.norm(ray)
    assert detect_objects(_scene(ee), ["white mug"], cal, QUIET, 3.0) == []


def test_pose_noise_rms():
    rng = np.random.default_rng(3)
    noise = NoiseModel(sigma_pose=0.005, misdetect_prob=0.0)
    cal = _calib()
    errs = []
    for _ in range(1000):
        for d in detect_objects(_scene(), ["white mug"], cal, noise, 0.0, rng):
            errs.append(np.linalg.norm(d.pose.position - [0.5, 0.1, 0.0]))
    assert math.sqrt(np.mean(np.square(errs))) == pytest.approx(0.005 * math.sqrt(3), rel=0.05)


def test_misdetection_only_confuses_similar_shapes():
    noise = NoiseModel(sigma_pose=0.0, misdetect_prob=1.0)
    d = detect_objects(_scene(), ["white mug", "blue cup"], _calib(), noise, 0.0, np.random.default_rng(0))
    # the mug has no look-alike so it is dropped; the cup is reported as a mug
    assert [(x.object_id, x.class_label) for x in d] == [("cup", "white mug")]


def test_detection_sequence_is_seed_deterministic():
    noise = NoiseModel()

    def seq(seed):
        rng = np.random.default_rng(seed)
        return [[(d.object_id, d.class_label, d.pose.position.tolist()) for d in
                 detect_objects(_scene(), ["white mug", "blue cup"], _calib(), noise, 0.0, rng)] for _ in range(200)]

    assert seq(11) == seq(11)
    assert seq(11) != seq(12)


def test_camera_to_base_examples():
    ident = CameraCalibration(np.eye(4), np.eye(4))
    np.testing.assert_array_equal(camera_to_base([0.1, 0.2, 0.3], ident), [0.1, 0.2, 0.3])
    t_ca = make_transform(np.eye(3), [1.0, 0, 0])
    t_ar = make_transform(quat_to_matrix(quat_from_axis_angle([0, 0, 1], math.pi)), np.zeros(3))
    cal = CameraCalibration(t_ca, t_ar)
    for x, y, z in [(0.3, -0.2, 0.5), (0, 0, 0), (2.0, 1.0, -1.0)]:
        np.testing.assert_allclose(camera_to_base([x, y, z], cal), [-x - 1, -y, z], atol=1e-12)


def test_camera_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(200):
        cal = CameraCalibration(make_transform(quat_to_matrix(random_quaternion(rng)), rng.uniform(-2, 2, 3)),
                                make_transform(quat_to_matrix(random_quaternion(rng)), rng.uniform(-2, 2, 3)))
        p = rng.uniform(-3, 3, (50, 3))
        back = np.array([base_to_camera(camera_to_base(x, cal), cal) for x in p])
        assert np.max(np.linalg.norm(back - p, axis=1)) <= 1e-6
