"""End-to-end experiment driver: streams, tuning, detection, tables.

One :class:`ExperimentConfig` describes one table cell — vehicle model,
noise family, attack preset — plus the evaluation seeds and split fractions.
``run_experiment`` executes the full pipeline for a cell and
``run_grid`` covers the standard 2 models x 2 noises x 2 attacks layout.

Determinism: every number in the results table is a pure function of
(config, seed).  The training stream uses the first seed; evaluation
streams derive from each seed plus a fixed offset so they never collide
with training data.

Stage bookkeeping: each pipeline stage is recorded in a manifest; on any
stage failure the manifest is still written, with the failed stage marked,
so partial results remain inspectable.
"""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import defaults
from .attacks import attack_catalog, inject
from .detectors import (
    BhtConfig,
    Calibration,
    CLASSIC_DETECTORS,
    CusumConfig,
    SprtConfig,
    calibrate,
    run_detector,
)
from .ekf import SOURCE_GPS, generate_residues
from .errors import ConfigError
from .fusion import interval_mask, position_rmse, resilient_estimate, \
    write_pose_csv
from .metrics import compute_metrics, roc_auc
from .noise import FAMILIES
from .simulate import SensorSuite, TrajectorySpec, generate_truth, \
    synthesize_sensors
from .transformer import (
    DetectorModelConfig,
    calibrate_threshold,
    score_and_alarm,
    sequence_scores,
    train,
    write_score_csv,
    write_training_log,
)

TRANSFORMER = "transformer"
ALL_DETECTORS = CLASSIC_DETECTORS + (TRANSFORMER,)

GRID_MODELS = ("I", "II")
GRID_NOISES = ("exponential", "laplacian")
GRID_ATTACKS = ("Attack I", "Attack II")

# evaluation streams must never reuse a training stream's seed
TEST_SEED_OFFSET = 500_000

# Published full-scale reference results for the same detector lineup,
# keyed (model, noise, attack) -> detector -> (P, R, F1).  They appear in
# tables under "paper-reported" columns for side-by-side context and are
# never used as assertion targets: the full-scale benchmark's thresholds
# and dataset specifics are not reproducible at desk scale.
PAPER_REPORTED = {
    ("I", "exponential", "Attack I"): {
        "cusum": (0.69, 0.64, 0.66), "sprt": (0.69, 0.67, 0.69),
        "bht": (0.62, 0.65, 0.64), TRANSFORMER: (0.92, 0.93, 0.93)},
    ("I", "exponential", "Attack II"): {
        "cusum": (0.71, 0.59, 0.64), "sprt": (0.68, 0.68, 0.67),
        "bht": (0.68, 0.60, 0.65), TRANSFORMER: (0.89, 0.95, 0.92)},
    ("I", "laplacian", "Attack I"): {
        "cusum": (0.70, 0.62, 0.66), "sprt": (0.69, 0.67, 0.68),
        "bht": (0.66, 0.59, 0.62), TRANSFORMER: (0.92, 0.94, 0.93)},
    ("I", "laplacian", "Attack II"): {
        "cusum": (0.71, 0.58, 0.64), "sprt": (0.68, 0.67, 0.67),
        "bht": (0.70, 0.60, 0.65), TRANSFORMER: (0.89, 0.95, 0.92)},
    ("II", "exponential", "Attack I"): {
        "cusum": (0.75, 0.76, 0.76), "sprt": (0.75, 0.77, 0.76),
        "bht": (0.70, 0.72, 0.72), TRANSFORMER: (0.92, 0.97, 0.94)},
    ("II", "exponential", "Attack II"): {
        "cusum": (0.73, 0.70, 0.72), "sprt": (0.74, 0.77, 0.74),
        "bht": (0.75, 0.71, 0.73), TRANSFORMER: (0.89, 0.94, 0.91)},
    ("II", "laplacian", "Attack I"): {
        "cusum": (0.73, 0.69, 0.71), "sprt": (0.74, 0.73, 0.73),
        "bht": (0.75, 0.70, 0.72), TRANSFORMER: (0.91, 0.96, 0.94)},
    ("II", "laplacian", "Attack II"): {
        "cusum": (0.72, 0.69, 0.71), "sprt": (0.73, 0.70, 0.71),
        "bht": (0.69, 0.72, 0.71), TRANSFORMER: (0.89, 0.97, 0.93)},
}

# validation-split tuning grids for the classic detectors
CUSUM_GRID = tuple(CusumConfig(drift=d, threshold=h, forgetting=rho)
                   for d in (4.0, 5.0, 6.0, 8.0, 10.0, 12.0)
                   for h in (2.0, 5.0, 10.0, 20.0, 40.0)
                   for rho in (1.0, 0.97, 0.9))
SPRT_GRID = tuple(SprtConfig(mu1=m) for m in (5.5, 6.5, 8.0, 10.0))
BHT_GRID = tuple(BhtConfig(confidence=c) for c in (0.9, 0.95, 0.99, 0.999))
TUNING_GRIDS = {"cusum": CUSUM_GRID, "sprt": SPRT_GRID, "bht": BHT_GRID}

RESULT_COLUMNS = ["model", "noise", "attack", "pattern", "detector", "seed",
                  "precision", "recall", "f1", "auc", "zero_alarms",
                  "paper_precision", "paper_recall", "paper_f1"]

POSE_STRIDE = 10  # overlay CSVs are decimated to the GPS rate


@dataclass(frozen=True)
class ExperimentConfig:
    """One table cell: vehicle model x noise family x attack preset."""

    model_id: str = "I"
    noise: str = "exponential"
    attack: str = "Attack I"
    pattern: str = "persistent"           # or "sparse"
    detectors: tuple = ALL_DETECTORS
    seeds: tuple = (1, 2, 3, 4, 5)
    train_residues: int = defaults.TRAIN_RESIDUES
    test_residues: int = defaults.TEST_RESIDUES
    val_fraction: float = 0.2             # tail share of the training stream

    def __post_init__(self):
        if self.model_id not in GRID_MODELS:
            raise ConfigError(f"model_id must be one of {GRID_MODELS}, "
                              f"got {self.model_id!r}")
        if self.noise not in FAMILIES or self.noise == "none":
            raise ConfigError(f"noise must be a sampling family, "
                              f"got {self.noise!r}")
        if self.attack not in GRID_ATTACKS:
            raise ConfigError(f"attack must be one of {GRID_ATTACKS}, "
                              f"got {self.attack!r}")
        if self.pattern not in ("persistent", "sparse"):
            raise ConfigError(f"pattern must be 'persistent' or 'sparse', "
                              f"got {self.pattern!r}")
        object.__setattr__(self, "detectors", tuple(self.detectors))
        for d in self.detectors:
            if d not in ALL_DETECTORS:
                raise ConfigError(f"unknown detector {d!r}; expected a subset "
                                  f"of {ALL_DETECTORS}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError(f"val_fraction must be in (0, 0.5), "
                              f"got {self.val_fraction}")
        min_residues = 4 * defaults.WINDOW
        if self.train_residues < min_residues:
            raise ConfigError(f"train_residues must be >= {min_residues}, "
                              f"got {self.train_residues}")
        if self.test_residues < defaults.WINDOW:
            raise ConfigError(f"test_residues must be >= {defaults.WINDOW}, "
                              f"got {self.test_residues}")

    @property
    def preset_key(self) -> str:
        return self.attack if self.pattern == "persistent" \
            else f"{self.attack} sparse"

    @property
    def slug(self) -> str:
        return "_".join([self.model_id, self.noise,
                         self.attack.lower().replace(" ", "-"),
                         self.pattern])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detectors"] = list(self.detectors)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(data)


def full_scale_config(config: ExperimentConfig) -> ExperimentConfig:
    """Scale dataset sizes up to the full benchmark sizing."""
    return replace(config,
                   train_residues=defaults.FULL_SCALE_TRAIN_RESIDUES,
                   test_residues=defaults.FULL_SCALE_TEST_RESIDUES)


def grid_configs(seeds=(1, 2, 3, 4, 5), detectors=ALL_DETECTORS) -> tuple:
    """The standard 2 models x 2 noises x 2 attacks cell list."""
    return tuple(ExperimentConfig(model_id=m, noise=n, attack=a,
                                  detectors=detectors, seeds=tuple(seeds))
                 for m in GRID_MODELS for n in GRID_NOISES
                 for a in GRID_ATTACKS)


# -- stream and residue construction ----------------------------------------

def _suite(noise: str) -> SensorSuite:
    return SensorSuite(family=noise, gps_pos_std=defaults.GPS_POS_STD)


def build_streams(config: ExperimentConfig, n_residues: int, seed: int):
    """Clean and attacked sensor streams with n_residues GPS frames."""
    duration = n_residues / defaults.GPS_HZ
    suite = _suite(config.noise)
    spec = TrajectorySpec(shape="figure-eight", duration=duration)
    truth = generate_truth(spec, suite, seed)
    clean = synthesize_sensors(truth, suite, seed)
    schedule = attack_catalog(duration)[config.preset_key]
    attacked = inject(clean, schedule, seed)
    return truth, clean, attacked, schedule, suite


def gps_residues(stream, model_id: str, suite: SensorSuite):
    """GPS residue matrix, labels, and times the detectors consume."""
    rset = generate_residues(stream, model_id, suite).filter_source(SOURCE_GPS)
    return rset.t, rset.r, rset.label.astype(np.int8)


# -- detector tuning and evaluation ------------------------------------------

def tune_classic(name: str, val_r, val_labels, calibration: Calibration):
    """Pick the sweep config with the best validation F1 (first on ties)."""
    best = None
    for cand in TUNING_GRIDS[name]:
        alarms = run_detector(name, val_r, cand, calibration).alarm
        f1 = compute_metrics(alarms, val_labels).f1
        if best is None or f1 > best[0] + 1e-12:
            best = (f1, cand)
    return best[1], best[0]


@dataclass
class TrainedCell:
    """Everything learned from a cell's training stream."""

    detector_configs: dict = field(default_factory=dict)   # classic tuning
    transformer: object = None
    training_log: list = field(default_factory=list)
    tuning_f1: dict = field(default_factory=dict)


def train_cell(config: ExperimentConfig, seed: int) -> TrainedCell:
    """Train/tune every requested detector on the cell's training stream."""
    _, _, attacked, _, suite = build_streams(config, config.train_residues,
                                             seed)
    _, r, labels = gps_residues(attacked, config.model_id, suite)
    n_val = int(round(len(r) * config.val_fraction))
    tr_r, va_r = r[:-n_val], r[-n_val:]
    tr_y, va_y = labels[:-n_val], labels[-n_val:]

    cell = TrainedCell()
    classic = [d for d in config.detectors if d in CLASSIC_DETECTORS]
    if classic:
        calibration = calibrate(tr_r)
        for name in classic:
            cfg, f1 = tune_classic(name, va_r, va_y, calibration)
            cell.detector_configs[name] = cfg
            cell.tuning_f1[name] = f1
    if TRANSFORMER in config.detectors:
        model_cfg = DetectorModelConfig()
        detector, log = train(tr_r, tr_y, model_cfg, seed=seed,
                              val_residues=va_r, val_labels=va_y)
        if detector.threshold is None:
            calibrate_threshold(detector, va_r, va_y)
        cell.transformer = detector
        cell.training_log = log
    return cell


def evaluate_seed(config: ExperimentConfig, cell: TrainedCell, seed: int):
    """Run every detector on one evaluation stream; returns per-detector
    (metrics, roc, alarms, scores, labels, times)."""
    _, _, attacked, _, suite = build_streams(
        config, config.test_residues, seed + TEST_SEED_OFFSET)
    t, r, labels = gps_residues(attacked, config.model_id, suite)
    out = {}
    calibration = calibrate(r)   # each deployment calibrates on its own lead
    for name in config.detectors:
        if name == TRANSFORMER:
            result = score_and_alarm(r, cell.transformer, t=t)
            alarms, scores = result.alarm, result.score
        else:
            result = run_detector(name, r, cell.detector_configs[name],
                                  calibration, t=t)
            alarms, scores = result.alarm, result.statistic
        out[name] = {
            "metrics": compute_metrics(alarms, labels),
            "roc": roc_auc(scores, labels),
            "alarms": alarms,
            "scores": scores,
            "result": result,
        }
    return t, labels, out


# -- results table ------------------------------------------------------------

def _paper_ref(config: ExperimentConfig, detector: str):
    cell = PAPER_REPORTED.get((config.model_id, config.noise, config.attack))
    if cell is None or config.pattern != "persistent":
        return ("", "", "")
    return cell.get(detector, ("", "", ""))


def result_rows(config: ExperimentConfig, per_seed: dict) -> list[dict]:
    """Flatten per-seed metrics into table rows plus a median summary."""
    rows = []
    for detector in config.detectors:
        ref = _paper_ref(config, detector)
        f1s, aucs = [], []
        for seed in config.seeds:
            m = per_seed[seed][detector]["metrics"]
            roc = per_seed[seed][detector]["roc"]
            auc = roc.auc if roc.defined else ""
            rows.append({
                "model": config.model_id, "noise": config.noise,
                "attack": config.attack, "pattern": config.pattern,
                "detector": detector, "seed": seed,
                "precision": round(m.precision, 4),
                "recall": round(m.recall, 4),
                "f1": round(m.f1, 4),
                "auc": round(auc, 4) if auc != "" else "",
                "zero_alarms": int(m.zero_alarms),
                "paper_precision": ref[0], "paper_recall": ref[1],
                "paper_f1": ref[2],
            })
            f1s.append(m.f1)
            if roc.defined:
                aucs.append(roc.auc)
        rows.append({
            "model": config.model_id, "noise": config.noise,
            "attack": config.attack, "pattern": config.pattern,
            "detector": detector, "seed": "median",
            "precision": "", "recall": "",
            "f1": round(float(np.median(f1s)), 4),
            "auc": round(float(np.median(aucs)), 4) if aucs else "",
            "zero_alarms": "",
            "paper_precision": ref[0], "paper_recall": ref[1],
            "paper_f1": ref[2],
        })
    return rows


def write_results_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


# -- artifacts for the plot stage ---------------------------------------------

def _write_track_csv(path, t, pos, stride=POSE_STRIDE):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "px", "py", "pz"])
        for k in range(0, len(t), stride):
            writer.writerow([f"{t[k]:.10g}", f"{pos[k, 0]:.10g}",
                             f"{pos[k, 1]:.10g}", f"{pos[k, 2]:.10g}"])


def emit_overlay_artifacts(config: ExperimentConfig, cell: TrainedCell,
                           out_dir, seed: int) -> dict:
    """Three-case trajectory data: clean, attacked, attacked-with-isolation.

    The attacked cases use the sustained-offset variant of the cell's attack
    magnitude — the recovery story needs an attack that actually drags the
    estimate, and zero-mean sign-flipping barely moves it (see the decisions
    ledger).  Returns the annotation numbers for the plots.
    """
    truth, clean, _, schedule, suite = build_streams(
        config, config.test_residues, seed + TEST_SEED_OFFSET)
    demo_sched = replace(schedule, shape="constant-offset")
    demo = inject(clean, demo_sched, seed + TEST_SEED_OFFSET)
    gps_steps = np.flatnonzero(demo.has_gps)
    zeros = np.zeros(len(gps_steps), dtype=bool)

    clean_run = resilient_estimate(clean, zeros, config.model_id, suite)
    attacked_run = resilient_estimate(demo, zeros, config.model_id, suite)
    if cell.transformer is not None:
        _, r, _ = gps_residues(demo, config.model_id, suite)
        alarms = score_and_alarm(r, cell.transformer).alarm
        protected_label = TRANSFORMER
    else:
        alarms = demo.labels[gps_steps]
        protected_label = "oracle"
    protected_run = resilient_estimate(demo, alarms, config.model_id, suite)

    window = interval_mask(clean.t, demo_sched.intervals)
    meta = {
        "protected_by": protected_label,
        "attack_shape": "constant-offset",
        "clean_rmse": position_rmse(clean_run.pose, truth.pos),
        "attacked_window_rmse": position_rmse(attacked_run.pose, truth.pos,
                                              window),
        "protected_window_rmse": position_rmse(protected_run.pose, truth.pos,
                                               window),
        "measurement_std": suite.gps_pos_std,
        "attack_intervals": [list(iv) for iv in demo_sched.intervals],
    }
    _write_track_csv(out_dir / "truth_track.csv", truth.t, truth.pos)
    write_pose_csv(out_dir / "pose_clean.csv", clean_run, stride=POSE_STRIDE)
    write_pose_csv(out_dir / "pose_attacked.csv", attacked_run,
                   stride=POSE_STRIDE)
    write_pose_csv(out_dir / "pose_protected.csv", protected_run,
                   stride=POSE_STRIDE)
    with open(out_dir / "overlay_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return meta


def _write_trace_csv(path, t, statistic, alarms, labels):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "statistic", "alarm", "label"])
        for k in range(len(t)):
            writer.writerow([f"{t[k]:.10g}", f"{statistic[k]:.10g}",
                             int(alarms[k]), int(labels[k])])


def _write_roc_csv(path, roc) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for x, y in zip(roc.fpr, roc.tpr):
            writer.writerow([f"{x:.6g}", f"{y:.6g}"])


# -- the pipeline --------------------------------------------------------------

@contextmanager
def _stage(manifest: dict, name: str):
    t0 = time.time()
    try:
        yield
    except BaseException as e:
        manifest["stages"][name] = {"status": "failed",
                                    "seconds": round(time.time() - t0, 3),
                                    "error": f"{type(e).__name__}: {e}"}
        manifest["failed_stage"] = name
        raise
    manifest["stages"][name] = {"status": "ok",
                                "seconds": round(time.time() - t0, 3)}


def run_experiment(config: ExperimentConfig, out_dir,
                   artifacts: bool = True) -> dict:
    """Full pipeline for one cell; writes results and manifest to out_dir.

    The manifest is written even when a stage fails, with the failed stage
    marked and everything completed so far preserved.
    """
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"config": config.to_dict(), "stages": {},
                "failed_stage": None, "rows": []}
    try:
        with _stage(manifest, "train"):
            cell = train_cell(config, config.seeds[0])
            if cell.training_log:
                write_training_log(out_dir / "training_log.csv",
                                   cell.training_log)
            manifest["tuned"] = {name: asdict(cfg) for name, cfg
                                 in cell.detector_configs.items()}
            manifest["tuning_f1"] = {k: round(v, 4) for k, v
                                     in cell.tuning_f1.items()}

        per_seed = {}
        with _stage(manifest, "detect"):
            detail = {}
            for seed in config.seeds:
                t, labels, out = evaluate_seed(config, cell, seed)
                per_seed[seed] = out
                detail[seed] = (t, labels)

        with _stage(manifest, "evaluate"):
            rows = result_rows(config, per_seed)
            manifest["rows"] = rows
            write_results_csv(out_dir / "results.csv", rows)

        if artifacts:
            with _stage(manifest, "artifacts"):
                seed0 = config.seeds[0]
                t0, labels0 = detail[seed0]
                if "cusum" in config.detectors:
                    res = per_seed[seed0]["cusum"]
                    _write_trace_csv(out_dir / "cusum_trace.csv", t0,
                                     res["scores"], res["alarms"], labels0)
                for name in config.detectors:
                    roc = per_seed[seed0][name]["roc"]
                    if roc.defined:
                        _write_roc_csv(out_dir / f"roc_{name}.csv", roc)
                if TRANSFORMER in config.detectors:
                    write_score_csv(out_dir / "transformer_scores.csv",
                                    per_seed[seed0][TRANSFORMER]["result"])
                manifest["overlay"] = emit_overlay_artifacts(
                    config, cell, out_dir, seed0)
    finally:
        write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def run_grid(out_dir, seeds=(1, 2, 3, 4, 5), configs=None,
             artifacts: bool = True, full_scale: bool = False) -> dict:
    """Run every cell of the standard grid; merge rows deterministically."""
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if configs is None:
        configs = grid_configs(seeds=seeds)
    if full_scale:
        configs = tuple(full_scale_config(c) for c in configs)
    grid_manifest = {"cells": {}, "failed_stage": None, "seconds": None}
    rows = []
    t0 = time.time()
    try:
        for cfg in configs:
            cell_dir = out_dir / cfg.slug
            manifest = run_experiment(cfg, cell_dir, artifacts=artifacts)
            grid_manifest["cells"][cfg.slug] = {
                "failed_stage": manifest["failed_stage"],
                "stages": manifest["stages"],
            }
            rows.extend(manifest["rows"])
            if manifest["failed_stage"] is not None:
                grid_manifest["failed_stage"] = \
                    f"{cfg.slug}:{manifest['failed_stage']}"
                break
    finally:
        grid_manifest["seconds"] = round(time.time() - t0, 3)
        grid_manifest["rows"] = rows
        write_results_csv(out_dir / "results.csv", rows)
        write_manifest(out_dir / "manifest.json", grid_manifest)
    return grid_manifest
