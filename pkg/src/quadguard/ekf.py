"""Extended Kalman filtering for both vehicle models, and residue export.

Model "I" fuses GPS (pose) with IMU over a 15-dim state
[p, q, v, b_g, b_a]; model "II" adds a 6-dim keyframe pose [p_F, q_F]
and fuses visual odometry measured relative to that keyframe.  IMU
readings enter as inputs of the Euler-discretized transition
x_{k+1} = x_k + dt * phi(x_k, u_k), so F = I + dt * grad(phi).

The residue r = z - g(x_pred) is computed BEFORE each measurement update
and is the sole product consumed by every detector downstream.  The filter
assumes Gaussian noise with Q, R matched to the second moments of the
actual noise families; the mismatch under non-Gaussian noise is deliberate
and is what detectors learn from.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import defaults
from .errors import NumericError
from .kinematics import (
    GRAVITY,
    euler_from_matrix,
    euler_from_matrix_differential,
    euler_rate_inverse,
    euler_rate_inverse_jacobian,
    rotation_matrix,
    rotation_matrix_partials,
    wrap_angle,
)
from .simulate import SensorStream, SensorSuite

SOURCE_GPS = 0
SOURCE_VO = 1
SOURCE_NAMES = ("GPS", "VO")

PITCH_LIMIT = np.pi / 2 - 0.05


@dataclass
class EkfState:
    """Estimate, covariance, and the covariances used by the last step."""

    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray | None = None
    R: np.ndarray | None = None


def _safe_euler(q: np.ndarray) -> np.ndarray:
    """Clamp pitch away from the Euler-rate singularity, warning once."""
    if abs(q[1]) > PITCH_LIMIT:
        warnings.warn("pitch near +-pi/2; clamping to keep G(q) invertible",
                      RuntimeWarning, stacklevel=3)
        q = q.copy()
        q[1] = np.clip(q[1], -PITCH_LIMIT, PITCH_LIMIT)
    return q


class VehicleModel:
    """Shared 15-dim pose/velocity/bias dynamics driven by IMU inputs."""

    id = "I"
    dim = 15
    # state angle entries that must stay wrapped
    angle_idx = np.arange(3, 6)

    def __init__(self, sensors: SensorSuite | None = None):
        self.sensors = sensors or SensorSuite()

    # -- transition ---------------------------------------------------------

    def propagate(self, x: np.ndarray, gyro: np.ndarray, accel: np.ndarray,
                  dt: float) -> np.ndarray:
        q = _safe_euler(x[3:6])
        w_hat = gyro - x[9:12]
        a_hat = accel - x[12:15]
        out = x.copy()
        out[0:3] = x[0:3] + dt * x[6:9]
        out[3:6] = wrap_angle(q + dt * (euler_rate_inverse(q) @ w_hat))
        out[6:9] = x[6:9] + dt * (GRAVITY + rotation_matrix(q) @ a_hat)
        return out

    def transition_jacobian(self, x: np.ndarray, gyro: np.ndarray,
                            accel: np.ndarray, dt: float) -> np.ndarray:
        q = _safe_euler(x[3:6])
        w_hat = gyro - x[9:12]
        a_hat = accel - x[12:15]
        a = np.zeros((self.dim, self.dim))
        a[0:3, 6:9] = np.eye(3)
        a[3:6, 3:6] = euler_rate_inverse_jacobian(q, w_hat)
        a[3:6, 9:12] = -euler_rate_inverse(q)
        parts = rotation_matrix_partials(q)
        a[6:9, 3:6] = np.column_stack([parts[i] @ a_hat for i in range(3)])
        a[6:9, 12:15] = -rotation_matrix(q)
        return np.eye(self.dim) + dt * a

    def process_noise(self, x: np.ndarray, dt: float) -> np.ndarray:
        s = self.sensors
        q = _safe_euler(x[3:6])
        gi = euler_rate_inverse(q)
        r = rotation_matrix(q)
        cov = np.zeros((self.dim, self.dim))
        cov[0:3, 0:3] = 0.25 * dt**4 * s.accel_std**2 * np.eye(3)
        cov[3:6, 3:6] = dt**2 * s.gyro_std**2 * (gi @ gi.T)
        cov[6:9, 6:9] = dt**2 * s.accel_std**2 * (r @ r.T)
        cov[9:12, 9:12] = s.gyro_bias_walk**2 * dt * np.eye(3)
        cov[12:15, 12:15] = s.accel_bias_walk**2 * dt * np.eye(3)
        return cov

    # -- observation --------------------------------------------------------

    def sources(self) -> tuple:
        return (SOURCE_GPS,)

    def predicted_measurement(self, x: np.ndarray, source: int) -> np.ndarray:
        if source != SOURCE_GPS:
            raise ValueError(f"model {self.id} has no source {source}")
        return x[0:6].copy()

    def measurement_jacobian(self, x: np.ndarray, source: int) -> np.ndarray:
        if source != SOURCE_GPS:
            raise ValueError(f"model {self.id} has no source {source}")
        h = np.zeros((6, self.dim))
        h[0:6, 0:6] = np.eye(6)
        return h

    def measurement_noise(self, source: int) -> np.ndarray:
        s = self.sensors
        if source == SOURCE_GPS:
            return np.diag([s.gps_pos_std**2] * 3 + [s.gps_att_std**2] * 3)
        return np.diag([s.vo_pos_std**2] * 3 + [s.vo_att_std**2] * 3)

    def residue_angle_slice(self, source: int):
        return slice(3, 6)

    def initial_state(self, stream: SensorStream) -> EkfState:
        x = np.zeros(self.dim)
        if stream.has_gps[0]:
            x[0:6] = stream.gps[0]
        # velocity starts unknown at trajectory scale, biases near zero
        p_diag = np.concatenate([
            np.full(3, 1.0), np.full(3, 1e-2), np.full(3, 9.0),
            np.full(3, 1e-6), np.full(3, 1e-6),
        ])
        if self.dim == 21:
            x[15:21] = x[0:6]
            p_diag = np.concatenate([p_diag, np.full(3, 1.0), np.full(3, 1e-2)])
        return EkfState(x, np.diag(p_diag))


class ModelOne(VehicleModel):
    id = "I"
    dim = 15


class ModelTwo(VehicleModel):
    """Adds a constant keyframe pose, re-cloned from the estimate on schedule."""

    id = "II"
    dim = 21
    angle_idx = np.array([3, 4, 5, 18, 19, 20])

    def sources(self) -> tuple:
        return (SOURCE_GPS, SOURCE_VO)

    def predicted_measurement(self, x: np.ndarray, source: int) -> np.ndarray:
        if source == SOURCE_GPS:
            return x[0:6].copy()
        rf = rotation_matrix(x[18:21])
        m = rf.T @ rotation_matrix(x[3:6])
        return np.concatenate([rf.T @ (x[0:3] - x[15:18]),
                               euler_from_matrix(m)])

    def measurement_jacobian(self, x: np.ndarray, source: int) -> np.ndarray:
        h = np.zeros((6, self.dim))
        if source == SOURCE_GPS:
            h[0:6, 0:6] = np.eye(6)
            return h
        q, pf, qf = x[3:6], x[15:18], x[18:21]
        rf = rotation_matrix(qf)
        rq = rotation_matrix(q)
        m = rf.T @ rq
        parts_q = rotation_matrix_partials(q)
        parts_f = rotation_matrix_partials(qf)
        h[0:3, 0:3] = rf.T
        h[0:3, 15:18] = -rf.T
        dp = x[0:3] - pf
        for i in range(3):
            h[0:3, 18 + i] = parts_f[i].T @ dp
            h[3:6, 3 + i] = euler_from_matrix_differential(m, rf.T @ parts_q[i])
            h[3:6, 18 + i] = euler_from_matrix_differential(m, parts_f[i].T @ rq)
        return h

    def clone_keyframe(self, state: EkfState) -> EkfState:
        """Copy the current pose estimate into the keyframe block, carrying
        its covariance rows/columns so cross-correlations stay exact."""
        x = state.x.copy()
        x[15:21] = x[0:6]
        p = state.P
        pn = p.copy()
        pn[15:21, 0:15] = p[0:6, 0:15]
        pn[0:15, 15:21] = p[0:15, 0:6]
        pn[15:21, 15:21] = p[0:6, 0:6]
        return EkfState(x, 0.5 * (pn + pn.T), state.Q, state.R)


class LinearTestModel:
    """1-D linear system x' = x + dt*u, z = x: the KF-equivalence oracle."""

    id = "linear"
    dim = 1
    angle_idx = np.arange(0)

    def __init__(self, process_var: float, measurement_var: float):
        self.q = process_var
        self.r = measurement_var

    def propagate(self, x, gyro, accel, dt):
        return x + dt * np.atleast_1d(gyro)[:1]

    def transition_jacobian(self, x, gyro, accel, dt):
        return np.eye(1)

    def process_noise(self, x, dt):
        return np.array([[self.q]])

    def sources(self):
        return (SOURCE_GPS,)

    def predicted_measurement(self, x, source):
        return x.copy()

    def measurement_jacobian(self, x, source):
        return np.eye(1)

    def measurement_noise(self, source):
        return np.array([[self.r]])

    def residue_angle_slice(self, source):
        return None


def make_model(model_id: str, sensors: SensorSuite | None = None):
    if model_id == "I":
        return ModelOne(sensors)
    if model_id == "II":
        return ModelTwo(sensors)
    raise ValueError(f"unknown model id: {model_id!r}")


# ---------------------------------------------------------------------------
# predict / update
# ---------------------------------------------------------------------------

def ekf_predict(model, state: EkfState, gyro: np.ndarray, accel: np.ndarray,
                dt: float) -> EkfState:
    f = model.transition_jacobian(state.x, gyro, accel, dt)
    q = model.process_noise(state.x, dt)
    x = model.propagate(state.x, gyro, accel, dt)
    p = f @ state.P @ f.T + q
    return EkfState(x, 0.5 * (p + p.T), q, state.R)


def ekf_update(model, state: EkfState, z: np.ndarray, source: int):
    """One measurement update; returns (state, residue, sqrt-trace-S)."""
    h = model.measurement_jacobian(state.x, source)
    r_cov = model.measurement_noise(source)
    residue = z - model.predicted_measurement(state.x, source)
    asl = model.residue_angle_slice(source)
    if asl is not None:
        residue[asl] = wrap_angle(residue[asl])
    hp = h @ state.P
    s = hp @ h.T + r_cov
    if not np.all(np.isfinite(s)):
        raise NumericError(f"non-finite innovation covariance (source "
                           f"{source}): {np.diag(s)}")
    try:
        gain = np.linalg.solve(s, hp).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"innovation covariance not invertible (source {source}); "
            f"diag(S)={np.diag(s)}") from exc
    x = state.x + gain @ residue
    if len(model.angle_idx):
        x[model.angle_idx] = wrap_angle(x[model.angle_idx])
    p = state.P - gain @ hp
    strace = float(np.sqrt(np.trace(s)))
    return EkfState(x, 0.5 * (p + p.T), state.Q, r_cov), residue, strace


# ---------------------------------------------------------------------------
# residue sequences
# ---------------------------------------------------------------------------

@dataclass
class ResidueSet:
    """Time-ordered residues from every measurement update of one run."""

    t: np.ndarray
    r: np.ndarray             # (n, 6) or (n, z-dim)
    source: np.ndarray        # SOURCE_GPS / SOURCE_VO per record
    label: np.ndarray         # attack indicator copied from the stream
    step: np.ndarray          # stream step index of each record
    strace: np.ndarray        # sqrt(trace(S)) at each update
    model_id: str = "I"
    meta: dict = field(default_factory=dict)
    states: np.ndarray | None = None     # (n_steps, dim) when recorded
    state_t: np.ndarray | None = None
    diag: dict | None = None

    def __len__(self) -> int:
        return len(self.t)

    def filter_source(self, source: int) -> "ResidueSet":
        m = self.source == source
        return ResidueSet(self.t[m], self.r[m], self.source[m], self.label[m],
                          self.step[m], self.strace[m], self.model_id,
                          dict(self.meta))


def _first_non_finite(stream: SensorStream):
    """Index of the first frame carrying non-finite sensor data, else None.

    Off-grid GPS/VO rows are nan by design and are skipped.
    """
    bad = ~np.isfinite(stream.gyro).all(axis=1)
    bad |= ~np.isfinite(stream.accel).all(axis=1)
    bad |= stream.has_gps & ~np.isfinite(stream.gps).all(axis=1)
    bad |= stream.has_vo & ~np.isfinite(stream.vo).all(axis=1)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if len(idx) else None


def generate_residues(stream: SensorStream, model_id: str,
                      sensors: SensorSuite | None = None,
                      initial: EkfState | None = None,
                      diagnostics: bool = False,
                      record_states: bool = False,
                      gps_mask: np.ndarray | None = None) -> ResidueSet:
    """Run the EKF over a stream and collect one residue per measurement.

    `gps_mask` marks steps whose GPS update should be skipped (used by the
    resilient-fusion layer to isolate suspected measurements); residues are
    still recorded for skipped frames so detectors keep observing them.
    """
    model = make_model(model_id, sensors)
    dt = stream.dt
    n = len(stream.t)
    k_bad = _first_non_finite(stream)
    if k_bad is not None and not diagnostics:
        raise NumericError(f"non-finite sensor data at step {k_bad} "
                           f"(t={stream.t[k_bad]:.3f})")
    state = initial or model.initial_state(stream)
    labels = stream.labels if stream.labels is not None else np.zeros(n, int)

    rows_t, rows_r, rows_src = [], [], []
    rows_lab, rows_step, rows_strace = [], [], []
    states = np.zeros((n, model.dim)) if record_states else None
    diag = {"f_norm": [], "h_norm": [], "p_eig_min": [], "p_eig_max": [],
            "p_trace": [], "det_f": [], "ratio": [], "finite": True} \
        if diagnostics else None
    vo_frame = 0
    keyframe_every = (sensors or SensorSuite()).keyframe_every

    def handle_update(k, z, source):
        nonlocal state
        st, residue, strace = ekf_update(model, state, z, source)
        rows_t.append(stream.t[k])
        rows_r.append(residue)
        rows_src.append(source)
        rows_lab.append(labels[k])
        rows_step.append(k)
        rows_strace.append(strace)
        if diag is not None:
            diag["ratio"].append(float(np.linalg.norm(residue)) / strace)
        return st

    stop = n if k_bad is None else k_bad
    if k_bad is not None:
        diag["finite"] = False
    for k in range(stop):
        if k > 0:
            state = ekf_predict(model, state, stream.gyro[k - 1],
                                stream.accel[k - 1], dt)
        if not np.all(np.isfinite(state.x)):
            if diag is not None:
                diag["finite"] = False
                break
            raise NumericError(f"non-finite state at step {k} "
                               f"(t={stream.t[k]:.3f})")
        if stream.has_gps[k]:
            skip = gps_mask is not None and gps_mask[k]
            if skip:
                # record the residue the detector would have seen, no update
                z_hat = model.predicted_measurement(state.x, SOURCE_GPS)
                residue = stream.gps[k] - z_hat
                residue[3:6] = wrap_angle(residue[3:6])
                h = model.measurement_jacobian(state.x, SOURCE_GPS)
                s = h @ state.P @ h.T + model.measurement_noise(SOURCE_GPS)
                rows_t.append(stream.t[k])
                rows_r.append(residue)
                rows_src.append(SOURCE_GPS)
                rows_lab.append(labels[k])
                rows_step.append(k)
                rows_strace.append(float(np.sqrt(np.trace(s))))
            else:
                state = handle_update(k, stream.gps[k], SOURCE_GPS)
        if stream.has_vo[k] and model.id == "II":
            if vo_frame % keyframe_every == 0:
                state = model.clone_keyframe(state)
            state = handle_update(k, stream.vo[k], SOURCE_VO)
            vo_frame += 1
        if record_states:
            states[k] = state.x
        if diag is not None and k % 50 == 0:
            f = model.transition_jacobian(state.x, stream.gyro[k],
                                          stream.accel[k], dt)
            if not np.all(np.isfinite(f)):
                diag["finite"] = False
                continue
            h = model.measurement_jacobian(state.x, SOURCE_GPS)
            diag["f_norm"].append(float(np.linalg.norm(f, 2)))
            diag["h_norm"].append(float(np.linalg.norm(h, 2)))
            eig = np.linalg.eigvalsh(state.P)
            diag["p_eig_min"].append(float(eig[0]))
            diag["p_eig_max"].append(float(eig[-1]))
            diag["p_trace"].append(float(np.trace(state.P)))
            diag["det_f"].append(float(abs(np.linalg.det(f))))

    meta = dict(stream.meta)
    meta["model_id"] = model_id
    return ResidueSet(
        t=np.array(rows_t), r=np.array(rows_r).reshape(len(rows_t), -1),
        source=np.array(rows_src, dtype=np.int8),
        label=np.array(rows_lab, dtype=np.int8),
        step=np.array(rows_step, dtype=np.int64),
        strace=np.array(rows_strace), model_id=model_id, meta=meta,
        states=states, state_t=stream.t.copy() if record_states else None,
        diag=diag)


# ---------------------------------------------------------------------------
# boundedness report
# ---------------------------------------------------------------------------

@dataclass
class TheoremReport:
    """Empirical check of the boundedness conditions behind the residue
    guarantees: bounded Jacobians, nonsingular transition, bounded P,
    and residues inside the configured sigma envelope."""

    max_f_norm: float
    max_h_norm: float
    min_p_eig: float
    max_p_trace: float
    min_p_trace: float
    min_det_f: float
    max_residue_ratio: float
    finite: bool
    samples: int
    f_norm_bound: float = defaults.JACOBIAN_NORM_MAX
    eig_floor: float = -1e-9
    trace_ceiling: float = defaults.COV_EIG_MAX
    ratio_bound: float = 6.0

    @property
    def passed(self) -> bool:
        return (self.finite
                and self.max_f_norm <= self.f_norm_bound
                and self.min_p_eig >= self.eig_floor
                and self.max_p_trace <= self.trace_ceiling
                and self.min_det_f > 0.0
                and self.max_residue_ratio < self.ratio_bound)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "max_f_norm", "max_h_norm", "min_p_eig", "max_p_trace",
            "min_p_trace", "min_det_f", "max_residue_ratio", "finite",
            "samples", "passed")}


def check_lemma_conditions(rset: ResidueSet) -> TheoremReport:
    if rset.diag is None:
        raise ValueError("run generate_residues(diagnostics=True) first")
    d = rset.diag
    return TheoremReport(
        max_f_norm=max(d["f_norm"], default=0.0),
        max_h_norm=max(d["h_norm"], default=0.0),
        min_p_eig=min(d["p_eig_min"], default=0.0),
        max_p_trace=max(d["p_trace"], default=0.0),
        min_p_trace=min(d["p_trace"], default=0.0),
        min_det_f=min(d["det_f"], default=0.0),
        max_residue_ratio=max(d["ratio"], default=0.0),
        finite=d["finite"],
        samples=len(d["f_norm"]))


# ---------------------------------------------------------------------------
# residue file format: CSV + sidecar meta JSON
# ---------------------------------------------------------------------------

RESIDUE_COLUMNS = ["t", "r1", "r2", "r3", "r4", "r5", "r6", "source", "label"]


def write_residue_csv(rset: ResidueSet, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESIDUE_COLUMNS)
        for i in range(len(rset)):
            writer.writerow(
                [f"{rset.t[i]:.10g}"]
                + [f"{v:.10g}" for v in rset.r[i]]
                + [SOURCE_NAMES[rset.source[i]], int(rset.label[i])])
    meta = {"model_id": rset.model_id, "meta": rset.meta,
            "records": len(rset),
            "strace": [float(v) for v in rset.strace],
            "step": [int(v) for v in rset.step]}
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, default=str)


def read_residue_csv(path: str) -> ResidueSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RESIDUE_COLUMNS:
            raise ValueError(f"unexpected residue CSV header in {path}")
        t, r, src, lab = [], [], [], []
        for row in reader:
            t.append(float(row[0]))
            r.append([float(v) for v in row[1:7]])
            src.append(SOURCE_NAMES.index(row[7]))
            lab.append(int(row[8]))
    try:
        with open(path + ".meta.json") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        side = {"model_id": "I", "meta": {}, "strace": None, "step": None}
    n = len(t)
    strace = np.array(side["strace"]) if side.get("strace") else np.zeros(n)
    step = (np.array(side["step"], dtype=np.int64) if side.get("step")
            else np.arange(n, dtype=np.int64))
    return ResidueSet(
        t=np.array(t), r=np.array(r).reshape(n, -1),
        source=np.array(src, dtype=np.int8), label=np.array(lab, dtype=np.int8),
        step=step, strace=strace,
        model_id=side.get("model_id", "I"), meta=side.get("meta", {}))
