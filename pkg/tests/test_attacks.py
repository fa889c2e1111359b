"""Injection purity, label exactness, presets, temporal patterns."""

import numpy as np
import pytest

from quadguard import defaults
from quadguard.attacks import (
    AttackSchedule,
    attack_catalog,
    get_preset,
    inject,
    periodic_intervals,
)
from quadguard.errors import ConfigError
from quadguard.simulate import SensorSuite, TrajectorySpec, generate_truth, \
    synthesize_sensors


def make_stream(duration=20.0, seed=3):
    spec = TrajectorySpec(duration=duration)
    suite = SensorSuite(family="gaussian")
    return synthesize_sensors(generate_truth(spec, suite, seed), suite, seed)


def test_zero_magnitude_recovers_clean_stream():
    stream = make_stream()
    out = inject(stream, AttackSchedule(magnitude=0.0,
                                        intervals=((2.0, 4.0),)), seed=0)
    assert np.array_equal(out.gps, stream.gps, equal_nan=True)
    assert not out.labels.any()


def test_constant_offset_on_x_shifts_exactly():
    stream = make_stream()
    sched = AttackSchedule(magnitude=5.0, intervals=((2.0, 4.0),),
                           direction=(1.0, 0.0, 0.0))
    out = inject(stream, sched, seed=0)
    window = stream.has_gps & (stream.t >= 2.0) & (stream.t < 4.0)
    idx = np.flatnonzero(window)
    assert np.array_equal(out.gps[idx, 0], stream.gps[idx, 0] + 5.0)
    assert np.array_equal(out.gps[idx, 1:], stream.gps[idx, 1:])
    assert out.labels.sum() == len(idx)
    assert np.array_equal(np.flatnonzero(out.labels), idx)


def test_untargeted_channels_bit_identical():
    stream = make_stream()
    out = inject(stream, AttackSchedule(magnitude=5.0,
                                        intervals=((2.0, 4.0), (8.0, 9.0))),
                 seed=1)
    assert np.array_equal(out.gyro, stream.gyro)
    assert np.array_equal(out.accel, stream.accel)
    assert np.array_equal(out.vo, stream.vo, equal_nan=True)
    untouched = ~out.labels.astype(bool)
    assert np.array_equal(out.gps[untouched], stream.gps[untouched],
                          equal_nan=True)
    # the input stream itself is never mutated
    assert stream.labels is None


def test_sparse_hit_fraction():
    # 10^4 GPS frames at 10 Hz needs a 1000 s stream; decimate cheaply
    n = 100_000
    t = np.arange(n) * 0.01
    has_gps = np.arange(n) % 10 == 0
    gps = np.full((n, 6), np.nan)
    gps[has_gps] = 0.0
    from quadguard.simulate import SensorStream
    stream = SensorStream(t=t, gyro=np.zeros((n, 3)), accel=np.zeros((n, 3)),
                          gps=gps, vo=np.full((n, 6), np.nan),
                          has_gps=has_gps, has_vo=np.zeros(n, dtype=bool))
    sched = AttackSchedule(pattern="sparse", magnitude=5.0, hit_rate=0.12)
    out = inject(stream, sched, seed=7)
    frac = out.labels.sum() / has_gps.sum()
    assert abs(frac - 0.12) < 0.01


def test_ramp_starts_silent_and_reaches_full_magnitude():
    stream = make_stream(duration=30.0)
    sched = AttackSchedule(magnitude=4.0, shape="ramp",
                           intervals=((10.0, 20.0),),
                           direction=(0.0, 1.0, 0.0))
    out = inject(stream, sched, seed=0)
    k0 = np.flatnonzero(stream.has_gps & (stream.t == 10.0))[0]
    assert out.labels[k0] == 0           # ramp value is exactly zero there
    assert np.array_equal(out.gps[k0], stream.gps[k0])
    late = stream.has_gps & (stream.t >= 11.0) & (stream.t < 20.0)
    offs = out.gps[late, 1] - stream.gps[late, 1]
    assert np.allclose(offs, 4.0, atol=1e-12)
    mid = np.flatnonzero(stream.has_gps & (stream.t == 10.5))[0]
    assert abs((out.gps[mid, 1] - stream.gps[mid, 1]) - 2.0) < 1e-9


def test_random_sign_keeps_magnitude_and_flips():
    stream = make_stream(duration=60.0)
    sched = AttackSchedule(magnitude=3.0, shape="random-sign",
                           intervals=((5.0, 55.0),),
                           direction=(1.0, 0.0, 0.0))
    out = inject(stream, sched, seed=2)
    idx = np.flatnonzero(out.labels)
    offs = out.gps[idx, 0] - stream.gps[idx, 0]
    assert np.allclose(np.abs(offs), 3.0, atol=1e-12)
    assert (offs > 0).any() and (offs < 0).any()


def test_orientation_target_touches_angle_channels_only():
    stream = make_stream()
    sched = AttackSchedule(target="GPS-orientation", magnitude=0.5,
                           intervals=((2.0, 6.0),), direction=(0.0, 0.0, 1.0))
    out = inject(stream, sched, seed=0)
    idx = np.flatnonzero(out.labels)
    assert len(idx) > 0
    assert np.array_equal(out.gps[idx, :3], stream.gps[idx, :3])
    assert np.all(out.gps[idx, 3:] > -np.pi) and np.all(out.gps[idx, 3:] <= np.pi)


def test_random_direction_is_seed_deterministic():
    stream = make_stream()
    sched = AttackSchedule(magnitude=5.0, intervals=((2.0, 4.0),))
    a = inject(stream, sched, seed=11)
    b = inject(stream, sched, seed=11)
    c = inject(stream, sched, seed=12)
    assert np.array_equal(a.gps, b.gps, equal_nan=True)
    hit = np.flatnonzero(a.labels)
    assert not np.array_equal(a.gps[hit], c.gps[hit])
    # unit direction: every attacked frame offset has norm = magnitude
    offs = a.gps[hit, :3] - stream.gps[hit, :3]
    assert np.allclose(np.linalg.norm(offs, axis=1), 5.0, atol=1e-9)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        AttackSchedule(target="IMU")
    with pytest.raises(ConfigError):
        AttackSchedule(magnitude=-1.0)
    with pytest.raises(ConfigError):
        AttackSchedule(intervals=((4.0, 2.0),))
    with pytest.raises(ConfigError):
        AttackSchedule(intervals=((2.0, 5.0), (4.0, 6.0)))
    with pytest.raises(ConfigError):
        AttackSchedule(pattern="sparse", hit_rate=1.5)
    with pytest.raises(ConfigError):
        AttackSchedule(direction=(0.0, 0.0, 0.0))


def test_catalog_presets():
    cat = attack_catalog(duration=400.0)
    assert cat["Attack I"].pattern == "persistent"
    assert cat["Attack I"].magnitude == defaults.ATTACK_I_MAGNITUDE
    assert cat["Attack II"].magnitude == defaults.ATTACK_II_MAGNITUDE
    # the stealthy preset stays strictly below the overt one
    assert cat["Attack II"].magnitude < cat["Attack I"].magnitude
    assert cat["Attack I sparse"].pattern == "sparse"
    assert cat["Attack II sparse"].magnitude == defaults.ATTACK_II_MAGNITUDE
    # bursts stay inside the run and away from the calibration region
    for t0, t1 in cat["Attack I"].intervals:
        assert t0 >= 0.2 * 400.0 and t1 <= 400.0
    assert cat["Attack I"].intervals == cat["Attack II"].intervals
    with pytest.raises(ConfigError):
        get_preset("Attack III", duration=400.0)


def test_periodic_intervals_cover_expected_fraction():
    ivs = periodic_intervals(duration=2000.0)
    attacked = sum(t1 - t0 for t0, t1 in ivs)
    post = 2000.0 * 0.8
    assert abs(attacked / post - 0.125) < 0.01
    assert ivs[0][0] == 400.0
