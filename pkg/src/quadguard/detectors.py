"""Classic residue-based attack detectors: CUSUM, SPRT, and a chi-squared test.

All three consume a residue sequence (``(n, m)`` array or any object with
``.r``/``.t`` attributes) together with calibration statistics estimated from
the leading fraction of a clean run.  They return per-step alarm bits aligned
with the input, plus the running test statistic, so downstream metrics can be
computed point-wise.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .defaults import BHT_CONFIDENCE, BHT_DOF, CALIBRATION_FRAC
from .errors import ConfigError

MODES = ("norm", "per-axis")

ALARM_COLUMNS = ["t", "statistic", "alarm"]


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    """Clean-run residue statistics used to standardize detector inputs."""

    mean: np.ndarray          # (m,)
    std: np.ndarray           # (m,)
    cov: np.ndarray           # (m, m)
    stat_mean: float          # mean of the squared standardized norm
    stat_std: float           # std of the squared standardized norm
    count: int

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @classmethod
    def identity(cls, dim: int) -> "Calibration":
        """Unit calibration (zero mean, unit variance); handy for tests."""
        return cls(mean=np.zeros(dim), std=np.ones(dim), cov=np.eye(dim),
                   stat_mean=float(dim), stat_std=math.sqrt(2.0 * dim),
                   count=0)


def calibrate(residues, frac: float = CALIBRATION_FRAC) -> Calibration:
    """Estimate mean/std/covariance from the leading ``frac`` of a clean run."""
    r = _as_matrix(residues)
    if not 0.0 < frac <= 1.0:
        raise ConfigError(f"calibration fraction must be in (0, 1], got {frac}")
    n = max(int(math.ceil(frac * r.shape[0])), 2)
    if r.shape[0] < n:
        raise ConfigError(
            f"need at least {n} residues to calibrate, got {r.shape[0]}")
    head = r[:n]
    mean = head.mean(axis=0)
    std = head.std(axis=0)
    std = np.where(std > 1e-12, std, 1e-12)  # constant axes standardize to 0
    cov = np.cov(head, rowvar=False, bias=False)
    cov = np.atleast_2d(cov)
    stat = np.sum(((head - mean) / std) ** 2, axis=1)
    return Calibration(mean=mean, std=std, cov=cov,
                       stat_mean=float(stat.mean()),
                       stat_std=float(max(stat.std(), 1e-12)),
                       count=n)


def _as_matrix(seq) -> np.ndarray:
    r = getattr(seq, "r", seq)
    r = np.asarray(r, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.ndim != 2:
        raise ConfigError(f"residue sequence must be 2-D, got shape {r.shape}")
    return r


def _times(seq, n: int) -> np.ndarray:
    t = getattr(seq, "t", None)
    if t is None:
        return np.arange(n, dtype=float)
    return np.asarray(t, dtype=float)


def _standardize(r: np.ndarray, cal: Calibration) -> np.ndarray:
    if cal is None:
        raise ConfigError("detector requires calibration statistics from a "
                          "clean run; got None")
    if cal.dim != r.shape[1]:
        raise ConfigError(f"calibration dimension {cal.dim} does not match "
                          f"residue dimension {r.shape[1]}")
    return (r - cal.mean) / cal.std


# ---------------------------------------------------------------------------
# result container + CSV round trip
# ---------------------------------------------------------------------------

@dataclass
class DetectionResult:
    """Per-step alarms and statistic, aligned with the input sequence."""

    t: np.ndarray
    statistic: np.ndarray
    alarm: np.ndarray            # int8, 1 = alarm
    detector: str
    meta: dict = dataclasses.field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def alarm_rate(self) -> float:
        return float(self.alarm.mean()) if len(self) else 0.0


def write_alarm_csv(path, result: DetectionResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ALARM_COLUMNS)
        for t, s, a in zip(result.t, result.statistic, result.alarm):
            writer.writerow([f"{t:.10g}", f"{s:.10g}", int(a)])


def read_alarm_csv(path, detector: str = "") -> DetectionResult:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ALARM_COLUMNS:
            raise ConfigError(f"unexpected alarm CSV header {header!r}")
        rows = [(float(a), float(b), int(c)) for a, b, c in reader]
    t = np.array([r[0] for r in rows])
    stat = np.array([r[1] for r in rows])
    alarm = np.array([r[2] for r in rows], dtype=np.int8)
    return DetectionResult(t=t, statistic=stat, alarm=alarm, detector=detector)


# ---------------------------------------------------------------------------
# CUSUM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CusumConfig:
    """Cumulative-sum detector with a forgetting factor.

    ``drift`` is subtracted from each squared-norm increment, ``threshold``
    is the alarm level on the running sum, and ``forgetting`` discounts the
    previous sum (1.0 = classic CUSUM that never forgets).
    """

    drift: float
    threshold: float
    forgetting: float = 1.0
    mode: str = "norm"

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigError(f"cusum threshold must be > 0, got {self.threshold}")
        if not 0.0 < self.forgetting <= 1.0:
            raise ConfigError(
                f"cusum forgetting factor must be in (0, 1], got {self.forgetting}")
        if self.drift < 0:
            raise ConfigError(f"cusum drift must be >= 0, got {self.drift}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown detector mode {self.mode!r}")


def _cusum_scan(increments: np.ndarray, drift: float, rho: float) -> np.ndarray:
    out = np.empty_like(increments)
    s = 0.0
    for k in range(increments.shape[0]):
        s = max(0.0, rho * s + increments[k] - drift)
        out[k] = s
    return out


def cusum_detect(seq, config: CusumConfig, calibration: Calibration,
                 t=None) -> DetectionResult:
    r = _as_matrix(seq)
    tv = _times(seq, r.shape[0]) if t is None else np.asarray(t, dtype=float)
    z = _standardize(r, calibration)
    if config.mode == "norm":
        stat = _cusum_scan(np.sum(z * z, axis=1), config.drift, config.forgetting)
    else:
        per_axis = np.column_stack([
            _cusum_scan(z[:, j] ** 2, config.drift, config.forgetting)
            for j in range(z.shape[1])])
        stat = per_axis.max(axis=1)
    alarm = (stat > config.threshold).astype(np.int8)
    return DetectionResult(t=tv, statistic=stat, alarm=alarm, detector="cusum",
                           meta={"config": dataclasses.asdict(config)})


# ---------------------------------------------------------------------------
# SPRT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SprtConfig:
    """Wald sequential test between two Gaussian means on the test statistic.

    ``mu0``/``sigma`` left as None are filled from the calibration split at
    detection time.  The test restarts from zero after every decision; alarm
    bits mark the steps where the alternative was accepted.
    """

    mu1: float
    mu0: float | None = None
    sigma: float | None = None
    alpha: float = 0.01
    beta: float = 0.05
    mode: str = "norm"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 or not 0.0 < self.beta < 1.0:
            raise ConfigError(
                f"sprt error rates must be in (0, 1), got alpha={self.alpha} "
                f"beta={self.beta}")
        if self.alpha + self.beta >= 1.0:
            raise ConfigError("sprt requires alpha + beta < 1 for the Wald "
                              "thresholds to bracket zero")
        if self.mu0 is not None and self.mu0 == self.mu1:
            raise ConfigError("sprt hypotheses are degenerate: mu0 == mu1")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sprt sigma must be > 0, got {self.sigma}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown detector mode {self.mode!r}")

    @property
    def upper(self) -> float:
        """Wald acceptance threshold for the alternative."""
        return math.log((1.0 - self.beta) / self.alpha)

    @property
    def lower(self) -> float:
        """Wald acceptance threshold for the null."""
        return math.log(self.beta / (1.0 - self.alpha))


def _sprt_scan(samples: np.ndarray, mu0: float, mu1: float, sigma: float,
               upper: float, lower: float):
    """Decide-and-reset Wald walk; returns (llr trace, alarms, decisions)."""
    gain = (mu1 - mu0) / (sigma * sigma)
    mid = 0.5 * (mu0 + mu1)
    stat = np.empty_like(samples)
    alarm = np.zeros(samples.shape[0], dtype=np.int8)
    h1 = h0 = 0
    llr = 0.0
    for k in range(samples.shape[0]):
        llr += gain * (samples[k] - mid)
        if llr >= upper:
            alarm[k] = 1
            h1 += 1
            stat[k] = llr
            llr = 0.0
        elif llr <= lower:
            h0 += 1
            stat[k] = llr
            llr = 0.0
        else:
            stat[k] = llr
    return stat, alarm, h0, h1


def sprt_detect(seq, config: SprtConfig, calibration: Calibration,
                t=None) -> DetectionResult:
    r = _as_matrix(seq)
    tv = _times(seq, r.shape[0]) if t is None else np.asarray(t, dtype=float)
    z = _standardize(r, calibration)
    if config.mode == "norm":
        samples = np.sum(z * z, axis=1)
        mu0 = calibration.stat_mean if config.mu0 is None else config.mu0
        sigma = calibration.stat_std if config.sigma is None else config.sigma
    else:
        samples = z  # one signed walk per axis
        mu0 = 0.0 if config.mu0 is None else config.mu0
        sigma = 1.0 if config.sigma is None else config.sigma
    if mu0 == config.mu1:
        raise ConfigError("sprt hypotheses are degenerate: mu0 == mu1")
    if config.mode == "norm":
        stat, alarm, h0, h1 = _sprt_scan(samples, mu0, config.mu1, sigma,
                                         config.upper, config.lower)
    else:
        stats_ax, alarms_ax = [], []
        h0 = h1 = 0
        for j in range(samples.shape[1]):
            s_j, a_j, h0_j, h1_j = _sprt_scan(samples[:, j], mu0, config.mu1,
                                              sigma, config.upper, config.lower)
            stats_ax.append(s_j)
            alarms_ax.append(a_j)
            h0 += h0_j
            h1 += h1_j
        stat = np.max(np.column_stack(stats_ax), axis=1)
        alarm = np.max(np.column_stack(alarms_ax), axis=1).astype(np.int8)
    return DetectionResult(
        t=tv, statistic=stat, alarm=alarm, detector="sprt",
        meta={"config": dataclasses.asdict(config), "h0_accepts": h0,
              "h1_accepts": h1, "decisions": h0 + h1,
              "resolved_mu0": mu0, "resolved_sigma": sigma})


# ---------------------------------------------------------------------------
# chi-squared ellipsoid test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BhtConfig:
    """Per-step chi-squared test on the Mahalanobis norm of the residue."""

    confidence: float = BHT_CONFIDENCE
    dof: int = BHT_DOF
    mode: str = "norm"

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(
                f"bht confidence must be in (0, 1), got {self.confidence}")
        if int(self.dof) < 1:
            raise ConfigError(f"bht dof must be >= 1, got {self.dof}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown detector mode {self.mode!r}")

    def threshold(self) -> float:
        dof = self.dof if self.mode == "norm" else 1
        return float(stats.chi2.ppf(self.confidence, dof))


def _precision_matrix(cov: np.ndarray) -> np.ndarray:
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals.min() < 1e-12:
        warnings.warn("singular calibration covariance; regularizing with "
                      "1e-9 * I", RuntimeWarning, stacklevel=3)
        cov = cov + 1e-9 * np.eye(cov.shape[0])
    return np.linalg.inv(cov)


def bht_detect(seq, config: BhtConfig, calibration: Calibration,
               t=None) -> DetectionResult:
    r = _as_matrix(seq)
    tv = _times(seq, r.shape[0]) if t is None else np.asarray(t, dtype=float)
    if calibration is None:
        raise ConfigError("detector requires calibration statistics from a "
                          "clean run; got None")
    if calibration.dim != r.shape[1]:
        raise ConfigError(f"calibration dimension {calibration.dim} does not "
                          f"match residue dimension {r.shape[1]}")
    centered = r - calibration.mean
    if config.mode == "norm":
        # residues are zero-mean by construction, so centering at the
        # calibration mean keeps the chi-squared reference exact without
        # changing the nominal statistic
        prec = _precision_matrix(calibration.cov)
        stat = np.einsum("ij,jk,ik->i", centered, prec, centered)
    else:
        z = centered / calibration.std
        stat = np.max(z * z, axis=1)
    threshold = config.threshold()
    alarm = (stat > threshold).astype(np.int8)
    return DetectionResult(
        t=tv, statistic=stat, alarm=alarm, detector="bht",
        meta={"config": dataclasses.asdict(config), "threshold": threshold})


CLASSIC_DETECTORS = ("cusum", "sprt", "bht")


def run_detector(name: str, seq, config, calibration: Calibration,
                 t=None) -> DetectionResult:
    """Dispatch a detector by name; used by the CLI and the experiment grid."""
    if name == "cusum":
        return cusum_detect(seq, config, calibration, t=t)
    if name == "sprt":
        return sprt_detect(seq, config, calibration, t=t)
    if name == "bht":
        return bht_detect(seq, config, calibration, t=t)
    raise ConfigError(f"unknown detector {name!r}; expected one of "
                      f"{CLASSIC_DETECTORS}")
