"""Alarm-driven sensor exclusion around the estimator.

When the detector flags GPS frames, the estimator drops GPS from its
measurement set and rides VO+IMU until the alarms stay clear long enough;
the inertial updates never stop.  Exclusion is a pure function of the alarm
sequence, so the mode log reconstructs exactly from the alarms, and the
estimator itself is the ordinary EKF with a masked measurement set — no
second estimator to validate.

Alarms arrive per GPS frame.  A configurable latency (default one second of
GPS frames) models the time the detector needs before its verdict can gate
a frame; zero latency is the idealized oracle mode used by paired-run
resilience measurements.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import defaults
from .ekf import ResidueSet, generate_residues
from .errors import ConfigError
from .simulate import SensorStream, SensorSuite

POSE_COLUMNS = ["t", "px", "py", "pz", "qx", "qy", "qz", "mode"]

MODE_ALL = "GPS+VO+IMU"
MODE_NO_GPS = "VO+IMU"


def _default_latency_steps() -> int:
    return int(round(defaults.ALARM_LATENCY_S * defaults.GPS_HZ))


def exclusion_profile(alarms,
                      clear_steps: int = defaults.HYSTERESIS_CLEAR_STEPS,
                      latency_steps: int | None = None) -> np.ndarray:
    """Per-GPS-frame exclusion bits derived from the alarm sequence.

    Frame j consults the newest alarm at least ``latency_steps`` old (so the
    default one-frame-or-more lag keeps the decision strictly causal); an
    alarm drops GPS immediately, and re-admission waits for ``clear_steps``
    consecutive clear frames to avoid mode chattering.
    """
    a = np.asarray(alarms).astype(bool).reshape(-1)
    if latency_steps is None:
        latency_steps = _default_latency_steps()
    if latency_steps < 0:
        raise ConfigError(f"latency must be >= 0 steps, got {latency_steps}")
    if clear_steps < 1:
        raise ConfigError(f"need >= 1 clear step for re-admission, "
                          f"got {clear_steps}")
    excluded = np.zeros(len(a), dtype=bool)
    dropping = False
    clear_run = clear_steps
    for j in range(len(a)):
        i = j - latency_steps
        if i >= 0:
            if a[i]:
                dropping = True
                clear_run = 0
            else:
                clear_run += 1
                if dropping and clear_run >= clear_steps:
                    dropping = False
        excluded[j] = dropping
    return excluded


@dataclass(frozen=True)
class ModeTransition:
    t: float
    mode: str    # MODE_ALL or MODE_NO_GPS
    cause: str   # "start", "alarm", or "clear"


def mode_log(frame_t, excluded) -> list[ModeTransition]:
    """Transition list equivalent to the per-frame exclusion bits."""
    t = np.asarray(frame_t, dtype=float)
    e = np.asarray(excluded).astype(bool)
    if t.shape != e.shape:
        raise ConfigError(f"frame times {t.shape} do not match exclusion "
                          f"bits {e.shape}")
    if len(t) == 0:
        return []
    out = [ModeTransition(t=float(t[0]),
                          mode=MODE_NO_GPS if e[0] else MODE_ALL,
                          cause="start")]
    for j in range(1, len(t)):
        if e[j] != e[j - 1]:
            out.append(ModeTransition(
                t=float(t[j]),
                mode=MODE_NO_GPS if e[j] else MODE_ALL,
                cause="alarm" if e[j] else "clear"))
    return out


@dataclass
class FusionResult:
    t: np.ndarray               # stream times, IMU rate
    pose: np.ndarray            # (n, 6): position and attitude estimate
    mode: np.ndarray            # (n,) int8, 1 = GPS excluded at that step
    transitions: list[ModeTransition]
    residues: ResidueSet
    excluded: np.ndarray        # per-GPS-frame exclusion bits
    meta: dict = field(default_factory=dict)

    @property
    def gps_frames_fused(self) -> int:
        return int((~self.excluded).sum())


def resilient_estimate(stream: SensorStream, alarms, model_id: str = "II",
                       sensors: SensorSuite | None = None,
                       clear_steps: int = defaults.HYSTERESIS_CLEAR_STEPS,
                       latency_steps: int | None = None) -> FusionResult:
    """Run the EKF with GPS gated by the alarm sequence.

    ``alarms`` holds one bit per GPS frame of the stream, in frame order.
    The estimate, residues, and mode log come back together; skipped GPS
    frames still contribute recorded residues so downstream detectors keep
    observing the stream they would have seen.
    """
    gps_steps = np.flatnonzero(stream.has_gps)
    a = np.asarray(alarms).reshape(-1)
    if len(a) != len(gps_steps):
        raise ConfigError(f"alarms/stream length mismatch: {len(a)} alarm "
                          f"bits for {len(gps_steps)} GPS frames")
    excluded = exclusion_profile(a, clear_steps=clear_steps,
                                 latency_steps=latency_steps)
    gps_mask = np.zeros(len(stream.t), dtype=bool)
    gps_mask[gps_steps] = excluded
    residues = generate_residues(stream, model_id, sensors,
                                 record_states=True, gps_mask=gps_mask)

    # step-level mode: each step carries the newest frame decision at or
    # before it; steps ahead of the first GPS frame run with everything on
    frame_of_step = np.searchsorted(gps_steps, np.arange(len(stream.t)),
                                    side="right") - 1
    mode = np.zeros(len(stream.t), dtype=np.int8)
    seen = frame_of_step >= 0
    mode[seen] = excluded[frame_of_step[seen]].astype(np.int8)

    return FusionResult(
        t=stream.t.copy(),
        pose=residues.states[:, 0:6].copy(),
        mode=mode,
        transitions=mode_log(stream.t[gps_steps], excluded),
        residues=residues,
        excluded=excluded,
        meta={"model_id": model_id,
              "clear_steps": clear_steps,
              "latency_steps": (_default_latency_steps()
                                if latency_steps is None else latency_steps)})


def position_rmse(pose: np.ndarray, truth_pos: np.ndarray,
                  mask=None) -> float:
    """Root-mean-square position error, optionally over a step mask."""
    p = np.asarray(pose, dtype=float)[:, 0:3]
    g = np.asarray(truth_pos, dtype=float)
    if p.shape != g.shape:
        raise ConfigError(f"pose/truth shape mismatch: {p.shape} vs {g.shape}")
    err2 = ((p - g) ** 2).sum(axis=1)
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if m.shape != err2.shape:
            raise ConfigError(f"mask length {m.shape} does not match "
                              f"{err2.shape} steps")
        if not m.any():
            raise ConfigError("empty step mask for RMSE")
        err2 = err2[m]
    return float(np.sqrt(err2.mean()))


def interval_mask(t: np.ndarray, intervals) -> np.ndarray:
    """Boolean step mask covering the given (t0, t1) time intervals."""
    tv = np.asarray(t, dtype=float)
    mask = np.zeros(tv.shape, dtype=bool)
    for t0, t1 in intervals:
        mask |= (tv >= t0) & (tv < t1)
    return mask


def write_pose_csv(path, result: FusionResult, stride: int = 1) -> None:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSE_COLUMNS)
        for k in range(0, len(result.t), stride):
            p = result.pose[k]
            writer.writerow([f"{result.t[k]:.10g}",
                             f"{p[0]:.10g}", f"{p[1]:.10g}", f"{p[2]:.10g}",
                             f"{p[3]:.10g}", f"{p[4]:.10g}", f"{p[5]:.10g}",
                             MODE_NO_GPS if result.mode[k] else MODE_ALL])
