"""False-data injection on GPS measurement streams.

An attack adds an offset d_k to the targeted GPS channels of selected
frames: persistent schedules corrupt every GPS frame inside configured
time intervals, sparse schedules hit GPS frames independently at a
configured rate.  Injection is a pure function — untargeted channels and
unattacked frames stay bit-identical — and it emits exact per-step labels
(label 1 iff a nonzero offset was added at that step).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import defaults
from .errors import ConfigError
from .kinematics import wrap_angle
from .simulate import STREAM_ATTACK, SensorStream

TARGETS = ("GPS-position", "GPS-orientation")
PATTERNS = ("persistent", "sparse", "none")
SHAPES = ("constant-offset", "ramp", "random-sign")

_RAMP_FRACTION = 0.1


@dataclass(frozen=True)
class AttackSchedule:
    target: str = "GPS-position"
    pattern: str = "persistent"
    magnitude: float = defaults.ATTACK_I_MAGNITUDE
    shape: str = "constant-offset"
    intervals: tuple = ()          # persistent: ((t_start, t_end), ...) seconds
    hit_rate: float = defaults.SPARSE_HIT_RATE
    start: float = 0.0             # sparse: frames before this time are safe
    direction: tuple | None = None  # fixed 3-vector, or None for random per burst

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"unknown attack target: {self.target!r}")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown attack pattern: {self.pattern!r}")
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown attack shape: {self.shape!r}")
        if self.magnitude < 0:
            raise ConfigError("attack magnitude must be non-negative")
        if not 0.0 <= self.hit_rate <= 1.0:
            raise ConfigError("sparse hit rate must lie in [0, 1]")
        prev_end = -np.inf
        for iv in self.intervals:
            t0, t1 = iv
            if not t0 < t1:
                raise ConfigError(f"empty attack interval: {iv!r}")
            if t0 < prev_end:
                raise ConfigError("attack intervals must be disjoint and sorted")
            prev_end = t1
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
            if d.shape != (3,) or not np.linalg.norm(d) > 0:
                raise ConfigError("direction must be a nonzero 3-vector")


def periodic_intervals(duration: float,
                       start_frac: float = defaults.ATTACK_START_FRAC,
                       burst: float = defaults.BURST_DURATION,
                       period: float = defaults.BURST_PERIOD) -> tuple:
    """Burst windows of `burst` seconds every `period` seconds, leaving the
    leading `start_frac` of the run clean for detector calibration."""
    out = []
    t0 = start_frac * duration
    while t0 + burst <= duration:
        out.append((t0, t0 + burst))
        t0 += period
    return tuple(out)


def attack_catalog(duration: float,
                   start_frac: float = defaults.ATTACK_START_FRAC) -> dict:
    """Named presets: two persistent magnitudes plus their sparse forms."""
    intervals = periodic_intervals(duration, start_frac)
    start = start_frac * duration
    big, small = defaults.ATTACK_I_MAGNITUDE, defaults.ATTACK_II_MAGNITUDE
    # The burst presets flip the offset sign per GPS frame.  A constant
    # offset is soaked up by the estimator well inside one burst, leaving
    # most labeled frames indistinguishable from clean ones; sign flips
    # keep every labeled frame at full innovation magnitude.
    return {
        "Attack I": AttackSchedule(magnitude=big, intervals=intervals,
                                   shape="random-sign"),
        "Attack II": AttackSchedule(magnitude=small, intervals=intervals,
                                    shape="random-sign"),
        "Attack I sparse": AttackSchedule(pattern="sparse", magnitude=big,
                                          start=start, shape="random-sign"),
        "Attack II sparse": AttackSchedule(pattern="sparse", magnitude=small,
                                           start=start, shape="random-sign"),
        "none": AttackSchedule(pattern="none", magnitude=0.0),
    }


def get_preset(name: str, duration: float,
               start_frac: float = defaults.ATTACK_START_FRAC) -> AttackSchedule:
    catalog = attack_catalog(duration, start_frac)
    if name not in catalog:
        known = ", ".join(sorted(catalog))
        raise ConfigError(f"unknown attack preset {name!r}; choose from: {known}")
    return catalog[name]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _burst_direction(schedule: AttackSchedule,
                     rng: np.random.Generator) -> np.ndarray:
    if schedule.direction is not None:
        return _unit(np.asarray(schedule.direction, dtype=float))
    return _unit(rng.normal(size=3))


def inject(stream: SensorStream, schedule: AttackSchedule,
           seed: int) -> SensorStream:
    """Return a labeled copy of `stream` with the schedule's offsets applied."""
    if not np.any(stream.has_gps):
        raise ConfigError("attack schedule targets GPS but the stream has none")
    gps = stream.gps.copy()
    labels = np.zeros(len(stream.t), dtype=int)
    cols = slice(0, 3) if schedule.target == "GPS-position" else slice(3, 6)
    rng = np.random.default_rng([seed, STREAM_ATTACK])

    if schedule.pattern == "persistent" and schedule.magnitude > 0:
        for t0, t1 in schedule.intervals:
            hit = stream.has_gps & (stream.t >= t0) & (stream.t < t1)
            idx = np.flatnonzero(hit)
            if len(idx) == 0:
                continue
            direction = _burst_direction(schedule, rng)
            scale = _shape_profile(schedule, stream.t[idx], t0, t1, rng)
            offsets = scale[:, None] * (schedule.magnitude * direction)
            live = np.abs(offsets).max(axis=1) > 0
            gps[idx[live], cols] = gps[idx[live], cols] + offsets[live]
            labels[idx[live]] = 1
    elif schedule.pattern == "sparse" and schedule.magnitude > 0:
        eligible = np.flatnonzero(stream.has_gps & (stream.t >= schedule.start))
        hits = eligible[rng.random(len(eligible)) < schedule.hit_rate]
        for k in hits:
            direction = _burst_direction(schedule, rng)
            sign = 1.0
            if schedule.shape == "random-sign":
                sign = 1.0 if rng.random() < 0.5 else -1.0
            gps[k, cols] = gps[k, cols] + sign * schedule.magnitude * direction
            labels[k] = 1

    if schedule.target == "GPS-orientation":
        touched = labels.astype(bool)
        gps[touched, 3:6] = wrap_angle(gps[touched, 3:6])

    meta = dict(stream.meta)
    meta["attack"] = {
        "target": schedule.target, "pattern": schedule.pattern,
        "magnitude": schedule.magnitude, "shape": schedule.shape,
        "intervals": [list(iv) for iv in schedule.intervals],
        "hit_rate": schedule.hit_rate, "start": schedule.start,
    }
    return replace(stream, gps=gps, labels=labels, meta=meta)


def _shape_profile(schedule: AttackSchedule, t: np.ndarray, t0: float,
                   t1: float, rng: np.random.Generator) -> np.ndarray:
    """Per-frame multiplier of magnitude*direction inside one interval."""
    if schedule.shape == "constant-offset":
        return np.ones(len(t))
    if schedule.shape == "ramp":
        # linear rise over the leading tenth of the interval, then flat
        rise = _RAMP_FRACTION * (t1 - t0)
        return np.minimum((t - t0) / rise, 1.0)
    signs = np.where(rng.random(len(t)) < 0.5, 1.0, -1.0)
    return signs
