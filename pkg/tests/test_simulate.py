"""Trajectory generation and sensor synthesis."""

import numpy as np
import pytest

from quadguard.kinematics import (
    GRAVITY,
    euler_rate_matrix,
    rotation_matrix,
)
from quadguard.simulate import (
    SensorSuite,
    TrajectorySpec,
    generate_truth,
    read_sensor_csv,
    read_truth_csv,
    synthesize_sensors,
    write_sensor_csv,
    write_truth_csv,
)

QUIET = SensorSuite(family="none", gyro_bias_walk=0.0, accel_bias_walk=0.0)


def test_hover_truth_is_static():
    spec = TrajectorySpec(shape="hover", duration=5.0, altitude=7.0,
                          tilt_amplitude=0.0, yaw_amplitude=0.0)
    truth = generate_truth(spec, QUIET, seed=0)
    assert np.allclose(truth.pos, [0.0, 0.0, 7.0])
    assert np.allclose(truth.vel, 0.0)
    assert np.allclose(truth.accel, 0.0)
    assert np.allclose(truth.euler, 0.0)


def test_figure_eight_is_periodic():
    spec = TrajectorySpec(shape="figure-eight", duration=130.0, period=60.0)
    truth = generate_truth(spec, QUIET, seed=0)
    steps = int(round(spec.period / spec.dt))
    assert np.allclose(truth.pos[:steps], truth.pos[steps:2 * steps], atol=1e-9)
    assert np.allclose(truth.euler[:steps], truth.euler[steps:2 * steps],
                       atol=1e-9)


@pytest.mark.parametrize("shape", ["figure-eight", "line", "square"])
def test_truth_kinematics_are_consistent(shape):
    spec = TrajectorySpec(shape=shape, duration=90.0, period=45.0)
    truth = generate_truth(spec, QUIET, seed=1)
    dt = spec.dt
    # one-step position residual is bounded by the acceleration magnitude
    step = truth.pos[1:] - truth.pos[:-1] - dt * truth.vel[:-1]
    bound = 0.55 * dt**2 * np.abs(truth.accel).max()
    assert np.abs(step).max() <= bound + 1e-12
    # central-difference velocity and acceleration match the analytic ones
    vc = (truth.pos[2:] - truth.pos[:-2]) / (2 * dt)
    assert np.allclose(vc, truth.vel[1:-1], atol=5e-4)
    # differentiation is only second-order accurate away from leg joins,
    # where waypoint paths have a jerk discontinuity
    ac = (truth.vel[2:] - truth.vel[:-2]) / (2 * dt)
    inner = np.ones(len(ac), dtype=bool)
    if shape in ("line", "square"):
        legs = 2 if shape == "line" else 4
        leg_steps = int(round(spec.period / legs / dt))
        joins = np.arange(0, len(truth.t), leg_steps)
        for j in joins:
            inner[max(j - 2, 0):j + 2] = False
    assert np.allclose(ac[inner], truth.accel[1:-1][inner], atol=5e-3)


def test_square_path_rests_at_corners():
    spec = TrajectorySpec(shape="square", duration=80.0, period=40.0, scale=10.0)
    truth = generate_truth(spec, QUIET, seed=0)
    leg_steps = int(round(spec.period / 4 / spec.dt))
    corners = np.arange(0, len(truth.t), leg_steps)
    assert np.allclose(truth.vel[corners], 0.0, atol=1e-9)
    expected = np.array([[10, 10, 10], [-10, 10, 10], [-10, -10, 10],
                         [10, -10, 10]], dtype=float)
    for k, c in enumerate(corners):
        assert np.allclose(truth.pos[c], expected[k % 4], atol=1e-9)


def test_custom_waypoints_require_two_points():
    with pytest.raises(ValueError):
        generate_truth(TrajectorySpec(shape="waypoints", waypoints=((0, 0, 1),),
                                      duration=10.0), QUIET, seed=0)


def test_measurement_grids_are_decimated_and_phased():
    spec = TrajectorySpec(duration=4.0)
    truth = generate_truth(spec, QUIET, seed=0)
    stream = synthesize_sensors(truth, QUIET, seed=0)
    gps_idx = np.flatnonzero(stream.has_gps)
    vo_idx = np.flatnonzero(stream.has_vo)
    assert np.array_equal(gps_idx, np.arange(0, 400, 10))
    assert np.array_equal(vo_idx, np.arange(5, 400, 10))
    assert not np.any(stream.has_gps & stream.has_vo)
    assert np.all(np.isnan(stream.gps[~stream.has_gps]))
    assert np.all(np.isfinite(stream.gps[stream.has_gps]))


def test_noiseless_gyro_matches_euler_rate_map():
    spec = TrajectorySpec(duration=10.0)
    truth = generate_truth(spec, QUIET, seed=0)
    stream = synthesize_sensors(truth, QUIET, seed=0)
    for k in range(0, len(truth.t), 97):
        omega = euler_rate_matrix(truth.euler[k]) @ truth.euler_rate[k]
        assert np.allclose(stream.gyro[k], omega, atol=1e-12)


def test_noiseless_accel_is_specific_force():
    spec = TrajectorySpec(duration=10.0)
    truth = generate_truth(spec, QUIET, seed=0)
    stream = synthesize_sensors(truth, QUIET, seed=0)
    for k in range(0, len(truth.t), 131):
        r = rotation_matrix(truth.euler[k])
        assert np.allclose(stream.accel[k],
                           r.T @ (truth.accel[k] - GRAVITY), atol=1e-12)


def test_level_hover_accel_reads_gravity():
    spec = TrajectorySpec(shape="hover", duration=2.0, tilt_amplitude=0.0,
                          yaw_amplitude=0.0)
    truth = generate_truth(spec, QUIET, seed=0)
    stream = synthesize_sensors(truth, QUIET, seed=0)
    assert np.allclose(stream.accel, [0.0, 0.0, 9.81], atol=1e-12)


def test_noiseless_gps_reads_pose():
    spec = TrajectorySpec(duration=8.0)
    truth = generate_truth(spec, QUIET, seed=0)
    stream = synthesize_sensors(truth, QUIET, seed=0)
    idx = np.flatnonzero(stream.has_gps)
    assert np.allclose(stream.gps[idx, :3], truth.pos[idx], atol=1e-12)
    assert np.allclose(stream.gps[idx, 3:], truth.euler[idx], atol=1e-12)


def test_vo_is_keyframe_relative():
    suite = SensorSuite(family="none", gyro_bias_walk=0.0, accel_bias_walk=0.0,
                        keyframe_every=8)
    spec = TrajectorySpec(duration=20.0)
    truth = generate_truth(spec, suite, seed=0)
    stream = synthesize_sensors(truth, suite, seed=0)
    vo_idx = np.flatnonzero(stream.has_vo)
    # a fresh keyframe sees itself at the origin with identity attitude
    for frame in range(0, len(vo_idx), suite.keyframe_every):
        assert np.allclose(stream.vo[vo_idx[frame]], 0.0, atol=1e-12)
    # between keyframes the measurement is the relative pose
    kf = vo_idx[8]
    probe = vo_idx[11]
    r_kf = rotation_matrix(truth.euler[kf])
    rel = r_kf.T @ (truth.pos[probe] - truth.pos[kf])
    assert np.allclose(stream.vo[probe, :3], rel, atol=1e-12)


def test_synthesis_is_seed_deterministic():
    spec = TrajectorySpec(duration=6.0)
    suite = SensorSuite(family="laplacian")
    t1 = generate_truth(spec, suite, seed=42)
    t2 = generate_truth(spec, suite, seed=42)
    s1 = synthesize_sensors(t1, suite, seed=42)
    s2 = synthesize_sensors(t2, suite, seed=42)
    assert np.array_equal(s1.gyro, s2.gyro)
    assert np.array_equal(s1.gps, s2.gps, equal_nan=True)
    s3 = synthesize_sensors(t1, suite, seed=43)
    assert not np.array_equal(s1.gyro, s3.gyro)


def test_sensor_csv_roundtrip(tmp_path):
    spec = TrajectorySpec(duration=3.0)
    suite = SensorSuite(family="gaussian")
    truth = generate_truth(spec, suite, seed=5)
    stream = synthesize_sensors(truth, suite, seed=5)
    stream.labels = (np.arange(len(stream.t)) % 7 == 0).astype(int)
    path = tmp_path / "sensors.csv"
    write_sensor_csv(stream, str(path))
    back = read_sensor_csv(str(path))
    assert np.allclose(back.t, stream.t, atol=1e-9)
    assert np.allclose(back.gyro, stream.gyro, rtol=1e-8, atol=1e-12)
    assert np.allclose(back.gps, stream.gps, rtol=1e-8, atol=1e-12,
                       equal_nan=True)
    assert np.allclose(back.vo, stream.vo, rtol=1e-8, atol=1e-12,
                       equal_nan=True)
    assert np.array_equal(back.has_gps, stream.has_gps)
    assert np.array_equal(back.has_vo, stream.has_vo)
    assert np.array_equal(back.labels, stream.labels)


def test_truth_csv_roundtrip(tmp_path):
    spec = TrajectorySpec(duration=3.0)
    truth = generate_truth(spec, QUIET, seed=5)
    path = tmp_path / "truth.csv"
    write_truth_csv(truth, str(path))
    back = read_truth_csv(str(path))
    assert np.allclose(back["pos"], truth.pos, rtol=1e-8, atol=1e-12)
    assert np.allclose(back["euler"], truth.euler, rtol=1e-8, atol=1e-12)
    assert np.allclose(back["vel"], truth.vel, rtol=1e-8, atol=1e-12)
