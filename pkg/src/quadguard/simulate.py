"""Reference trajectories, truth states, and sensor synthesis.

There is no closed-loop controller: trajectories are analytic (twice
differentiable) shapes, and sensors are synthesized INS-style from the true
kinematics — gyro reads G(q) q_dot plus bias and noise, the accelerometer
reads specific force R(q)^T (a - g) plus bias and noise, GPS reads pose,
VO reads keyframe-relative pose.  IMU runs every step; GPS and VO run on
decimated grids (VO phase-shifted half a GPS period).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import defaults
from .kinematics import (
    euler_from_matrix,
    rotation_entries,
    rotation_matrix,
    rotate_world_to_body,
    wrap_angle,
    GRAVITY,
)
from .noise import NoiseSpec, sample_centered

TRAJECTORY_SHAPES = ("hover", "figure-eight", "line", "square", "waypoints")

# seeded substreams, so each consumer draws independently of the others
_STREAM_BIAS = 0
_STREAM_IMU = 1
_STREAM_GPS = 2
_STREAM_VO = 3
STREAM_ATTACK = 4
STREAM_TRAIN = 5


@dataclass(frozen=True)
class TrajectorySpec:
    shape: str = "figure-eight"
    duration: float = 120.0
    dt: float = defaults.DT
    scale: float = 30.0
    altitude: float = 10.0
    period: float = 60.0
    bob: float = 0.5
    yaw_amplitude: float = 0.6
    tilt_amplitude: float = 0.12
    waypoints: tuple = ()

    def __post_init__(self):
        if self.shape not in TRAJECTORY_SHAPES:
            raise ValueError(f"unknown trajectory shape: {self.shape!r}")
        if self.duration <= 0 or self.dt <= 0 or self.period <= 0:
            raise ValueError("duration, dt and period must be positive")
        # tilt is kept far from the pitch-singularity of the Euler-rate map
        if abs(self.tilt_amplitude) > 1.0:
            raise ValueError("tilt amplitude must stay below 1 rad")


@dataclass(frozen=True)
class SensorSuite:
    family: str = "gaussian"
    imu_hz: float = defaults.IMU_HZ
    gps_hz: float = defaults.GPS_HZ
    vo_hz: float = defaults.VO_HZ
    vo_phase: float = defaults.VO_PHASE
    gyro_std: float = defaults.GYRO_STD
    accel_std: float = defaults.ACCEL_STD
    gyro_bias_walk: float = defaults.GYRO_BIAS_WALK
    accel_bias_walk: float = defaults.ACCEL_BIAS_WALK
    gps_pos_std: float = defaults.GPS_POS_STD
    gps_att_std: float = defaults.GPS_ATT_STD
    vo_pos_std: float = defaults.VO_POS_STD
    vo_att_std: float = defaults.VO_ATT_STD
    keyframe_every: int = defaults.KEYFRAME_EVERY


@dataclass
class TruthStates:
    t: np.ndarray
    pos: np.ndarray
    euler: np.ndarray
    vel: np.ndarray
    accel: np.ndarray
    euler_rate: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray


@dataclass
class SensorStream:
    t: np.ndarray
    gyro: np.ndarray          # (n, 3), every step
    accel: np.ndarray         # (n, 3), every step
    gps: np.ndarray           # (n, 6) pose measurement, nan off-grid
    vo: np.ndarray            # (n, 6) keyframe-relative pose, nan off-grid
    has_gps: np.ndarray       # (n,) bool
    has_vo: np.ndarray        # (n,) bool
    labels: np.ndarray | None = None   # (n,) 1 where an injected offset is live
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def _waypoint_path(t: np.ndarray, waypoints: np.ndarray, period: float):
    """Closed waypoint cycle with rest-to-rest quintic legs (C^2 joins)."""
    n_legs = len(waypoints)
    t_leg = period / n_legs
    tmod = np.mod(t, period)
    leg = np.minimum((tmod / t_leg).astype(int), n_legs - 1)
    tau = (tmod - leg * t_leg) / t_leg
    a = waypoints[leg]
    b = waypoints[(leg + 1) % n_legs]
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    ds = (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / t_leg
    dds = (60 * tau - 180 * tau**2 + 120 * tau**3) / t_leg**2
    d = b - a
    pos = a + d * s[:, None]
    vel = d * ds[:, None]
    acc = d * dds[:, None]
    return pos, vel, acc


def _translation(spec: TrajectorySpec, t: np.ndarray):
    A, alt, w = spec.scale, spec.altitude, 2 * np.pi / spec.period
    if spec.shape == "hover":
        pos = np.tile([0.0, 0.0, alt], (len(t), 1))
        return pos, np.zeros_like(pos), np.zeros_like(pos)
    if spec.shape == "figure-eight":
        b = spec.bob
        pos = np.column_stack([
            A * np.sin(w * t),
            0.5 * A * np.sin(2 * w * t),
            alt + b * np.sin(2 * w * t + 0.7),
        ])
        vel = np.column_stack([
            A * w * np.cos(w * t),
            A * w * np.cos(2 * w * t),
            2 * b * w * np.cos(2 * w * t + 0.7),
        ])
        acc = np.column_stack([
            -A * w**2 * np.sin(w * t),
            -2 * A * w**2 * np.sin(2 * w * t),
            -4 * b * w**2 * np.sin(2 * w * t + 0.7),
        ])
        return pos, vel, acc
    if spec.shape == "line":
        wps = np.array([[-A, -A, alt], [A, A, alt]])
    elif spec.shape == "square":
        wps = np.array([[A, A, alt], [-A, A, alt], [-A, -A, alt], [A, -A, alt]])
    else:
        if len(spec.waypoints) < 2:
            raise ValueError("waypoints shape needs at least two waypoints")
        wps = np.asarray(spec.waypoints, dtype=float)
    return _waypoint_path(t, wps, spec.period)


def _orientation(spec: TrajectorySpec, t: np.ndarray):
    w = 2 * np.pi / spec.period
    tl, yw = spec.tilt_amplitude, spec.yaw_amplitude
    euler = np.column_stack([
        tl * np.sin(2 * w * t),
        tl * np.sin(3 * w * t + 1.0),
        yw * np.sin(w * t),
    ])
    rate = np.column_stack([
        2 * w * tl * np.cos(2 * w * t),
        3 * w * tl * np.cos(3 * w * t + 1.0),
        w * yw * np.cos(w * t),
    ])
    return euler, rate


def generate_truth(spec: TrajectorySpec, sensors: SensorSuite,
                   seed: int) -> TruthStates:
    """Analytic truth plus random-walk IMU biases."""
    n = int(round(spec.duration / spec.dt))
    t = np.arange(n) * spec.dt
    pos, vel, acc = _translation(spec, t)
    euler, rate = _orientation(spec, t)
    rng = np.random.default_rng([seed, _STREAM_BIAS])
    sq = np.sqrt(spec.dt)
    gyro_bias = np.cumsum(
        rng.normal(0.0, sensors.gyro_bias_walk * sq, size=(n, 3)), axis=0)
    accel_bias = np.cumsum(
        rng.normal(0.0, sensors.accel_bias_walk * sq, size=(n, 3)), axis=0)
    return TruthStates(t, pos, euler, vel, acc, rate, gyro_bias, accel_bias)


def synthesize_sensors(truth: TruthStates, sensors: SensorSuite,
                       seed: int) -> SensorStream:
    n = len(truth.t)
    dt = float(truth.t[1] - truth.t[0])
    phi, theta, psi = truth.euler[:, 0], truth.euler[:, 1], truth.euler[:, 2]
    rcols = rotation_entries(phi, theta, psi)

    # gyro: omega_body = G(q) q_dot, written out component-wise
    dphi, dtheta, dpsi = (truth.euler_rate[:, 0], truth.euler_rate[:, 1],
                          truth.euler_rate[:, 2])
    st, ct = np.sin(theta), np.cos(theta)
    sf, cf = np.sin(phi), np.cos(phi)
    omega = np.column_stack([
        dphi - dpsi * st,
        dtheta * cf + dpsi * sf * ct,
        -dtheta * sf + dpsi * cf * ct,
    ])
    rng_imu = np.random.default_rng([seed, _STREAM_IMU])
    gyro_noise = sample_centered(
        NoiseSpec(sensors.family, (sensors.gyro_std,) * 3), n, rng_imu)
    accel_noise = sample_centered(
        NoiseSpec(sensors.family, (sensors.accel_std,) * 3), n, rng_imu)
    gyro = omega + truth.gyro_bias + gyro_noise
    specific = rotate_world_to_body(rcols, truth.accel - GRAVITY)
    accel = specific + truth.accel_bias + accel_noise

    # GPS / VO grids (integer decimation keeps the grids exact)
    gps_every = int(round(sensors.imu_hz / sensors.gps_hz))
    vo_every = int(round(sensors.imu_hz / sensors.vo_hz))
    vo_shift = int(round(sensors.vo_phase / dt))
    idx = np.arange(n)
    has_gps = idx % gps_every == 0
    has_vo = (idx >= vo_shift) & ((idx - vo_shift) % vo_every == 0)

    gps = np.full((n, 6), np.nan)
    rng_gps = np.random.default_rng([seed, _STREAM_GPS])
    g_idx = np.flatnonzero(has_gps)
    gps_noise = sample_centered(
        NoiseSpec(sensors.family,
                  (sensors.gps_pos_std,) * 3 + (sensors.gps_att_std,) * 3),
        len(g_idx), rng_gps)
    gps[g_idx, :3] = truth.pos[g_idx] + gps_noise[:, :3]
    gps[g_idx, 3:] = wrap_angle(truth.euler[g_idx] + gps_noise[:, 3:])

    vo = np.full((n, 6), np.nan)
    rng_vo = np.random.default_rng([seed, _STREAM_VO])
    v_idx = np.flatnonzero(has_vo)
    vo_noise = sample_centered(
        NoiseSpec(sensors.family,
                  (sensors.vo_pos_std,) * 3 + (sensors.vo_att_std,) * 3),
        len(v_idx), rng_vo)
    kf_rot = np.eye(3)
    kf_pos = np.zeros(3)
    for frame, k in enumerate(v_idx):
        if frame % sensors.keyframe_every == 0:
            kf_rot = rotation_matrix(truth.euler[k])
            kf_pos = truth.pos[k].copy()
        rel_p = kf_rot.T @ (truth.pos[k] - kf_pos)
        rel_q = euler_from_matrix(kf_rot.T @ rotation_matrix(truth.euler[k]))
        vo[k, :3] = rel_p + vo_noise[frame, :3]
        vo[k, 3:] = wrap_angle(rel_q + vo_noise[frame, 3:])

    meta = {"seed": seed, "family": sensors.family, "dt": dt,
            "keyframe_every": sensors.keyframe_every}
    return SensorStream(truth.t.copy(), gyro, accel, gps, vo, has_gps, has_vo,
                        labels=None, meta=meta)


def scenario_hash(*configs) -> str:
    """Stable short hash of the dataclass configs that shaped a stream."""
    blob = json.dumps([asdict(c) if hasattr(c, "__dataclass_fields__") else c
                       for c in configs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# delimited I/O
# ---------------------------------------------------------------------------

SENSOR_COLUMNS = (
    ["t", "wx", "wy", "wz", "ax", "ay", "az"]
    + [f"gps_{c}" for c in ("px", "py", "pz", "qx", "qy", "qz")]
    + [f"vo_{c}" for c in ("px", "py", "pz", "qx", "qy", "qz")]
    + ["has_gps", "has_vo"]
)


def write_sensor_csv(stream: SensorStream, path: str) -> None:
    cols = list(SENSOR_COLUMNS)
    labeled = stream.labels is not None
    if labeled:
        cols.append("label")
    mat = np.column_stack([
        stream.t, stream.gyro, stream.accel, stream.gps, stream.vo,
        stream.has_gps.astype(float), stream.has_vo.astype(float),
    ])
    if labeled:
        mat = np.column_stack([mat, stream.labels.astype(float)])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, mat, delimiter=",", fmt="%.10g")


def read_sensor_csv(path: str) -> SensorStream:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.genfromtxt(fh, delimiter=",", dtype=float,
                             missing_values="nan")
    if data.ndim == 1:
        data = data.reshape(1, -1)
    expected = list(SENSOR_COLUMNS)
    if header[:len(expected)] != expected:
        raise ValueError(f"unexpected sensor CSV header in {path}")
    labels = None
    if "label" in header:
        labels = data[:, header.index("label")].astype(int)
    return SensorStream(
        t=data[:, 0],
        gyro=data[:, 1:4],
        accel=data[:, 4:7],
        gps=data[:, 7:13],
        vo=data[:, 13:19],
        has_gps=data[:, 19] > 0.5,
        has_vo=data[:, 20] > 0.5,
        labels=labels,
    )


def write_truth_csv(truth: TruthStates, path: str) -> None:
    cols = ["t", "px", "py", "pz", "qx", "qy", "qz", "vx", "vy", "vz"]
    mat = np.column_stack([truth.t, truth.pos, truth.euler, truth.vel])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, mat, delimiter=",", fmt="%.10g")


def read_truth_csv(path: str) -> dict:
    with open(path) as fh:
        fh.readline()
        data = np.loadtxt(fh, delimiter=",")
    if data.ndim == 1:
        data = data.reshape(1, -1)
    return {"t": data[:, 0], "pos": data[:, 1:4], "euler": data[:, 4:7],
            "vel": data[:, 7:10]}
