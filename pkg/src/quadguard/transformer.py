"""Attention-based residue anomaly detector.

Residue windows enter as magnitude-augmented features — each channel next
to its absolute value — so corrupted steps resemble each other regardless
of the offset's sign.  A small transformer then runs two attentions per
layer over the window: a proximity prior whose rows decay with temporal
distance through a learnable per-position kernel width, and a learned
context attention whose keys come from the previous layer (its own keys in
the first layer).  The per-step Jensen-Shannon disparity between the two
row distributions, averaged over layers, scores each step: attacked steps
keep their context attention pinned near the local prior, so their
disparity is low and the per-window softmax(-disparity) lights up on them.

Training alternates a minimize phase (prior pulled toward context; context
branch detached) and a maximize phase (context pushed away from the prior;
prior branch detached) around a shared reconstruction objective, plus a
masked classification head on the small labeled subset.
"""

from __future__ import annotations

import binascii
import csv
import dataclasses
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from functools import lru_cache

from . import defaults
from .autodiff import (Adam, Tensor, feed_forward, js_divergence_rows,
                       softmax_rows)
from .errors import ConfigError, NumericError
from .metrics import compute_metrics
from .simulate import STREAM_TRAIN

CHECKPOINT_MAGIC = b"QGW1"
CHECKPOINT_VERSION = 1

TRAINING_LOG_COLUMNS = ["epoch", "l_recon", "l_dis", "l_class",
                        "phase_losses", "val_f1"]
SCORE_COLUMNS = ["t", "score", "alarm"]

PHASES = ("min", "max")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorModelConfig:
    """Architecture and training hyperparameters for the attention detector."""

    window: int = defaults.WINDOW
    residue_dim: int = 6
    d_model: int = defaults.D_MODEL
    layers: int = defaults.LAYERS
    ff_hidden: int = defaults.FF_HIDDEN
    distance_power: float = defaults.DISTANCE_POWER
    lambda_dis: float = defaults.LAMBDA_DIS
    alpha_min: float = defaults.ALPHA_MIN
    alpha_max: float = defaults.ALPHA_MAX
    learning_rate: float = defaults.LEARNING_RATE
    epochs: int = defaults.EPOCHS
    batch_size: int = defaults.BATCH_SIZE
    windows_per_epoch: int = defaults.WINDOWS_PER_EPOCH
    label_fraction: float = defaults.LABEL_FRACTION

    @property
    def feature_dim(self) -> int:
        """Model input width: every residue channel plus its magnitude."""
        return 2 * self.residue_dim

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError(f"window length must be >= 2, got {self.window}")
        if self.d_model < self.feature_dim:
            raise ConfigError(f"d_model ({self.d_model}) must be >= the "
                              f"feature dimension ({self.feature_dim}, twice "
                              f"the residue dimension)")
        if self.layers < 1:
            raise ConfigError(f"need at least one layer, got {self.layers}")
        if not self.distance_power > 0:
            raise ConfigError(
                f"distance power must be > 0, got {self.distance_power}")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ConfigError(
                f"label fraction must be in [0, 1], got {self.label_fraction}")
        for name in ("epochs", "batch_size", "windows_per_epoch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def param_manifest(config: DetectorModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) list; the one source of truth for weight layout."""
    l, m, d, ff = (config.window, config.feature_dim, config.d_model,
                   config.ff_hidden)
    manifest = [("embed_w", (m, d)), ("embed_b", (1, d)), ("gamma", (l, 1))]
    for h in range(config.layers):
        manifest += [(f"layer{h}_wq", (d, d)), (f"layer{h}_wk", (d, d)),
                     (f"layer{h}_wv", (d, d)), (f"layer{h}_wo", (d, d)),
                     (f"layer{h}_ff_w1", (d, ff)), (f"layer{h}_ff_b1", (1, ff)),
                     (f"layer{h}_ff_w2", (ff, d)), (f"layer{h}_ff_b2", (1, d))]
    manifest += [("rec_w", (d, m)), ("rec_b", (1, m)),
                 ("cls_w", (m, 1)), ("cls_b", (1, 1))]
    return manifest


# starting kernel width for the interior rows of the proximity prior
_GAMMA_WIDTH_INIT = 0.2
# query/key maps start as this multiple of the identity (inner-product
# similarity); small enough that softmax rows stay far from saturation
_ATTN_GAIN_INIT = 0.4


def _js_to_uniform(l: int, p: float, gamma: float, i: int) -> float:
    d = np.abs(np.arange(l, dtype=float) - i) ** p
    e = np.exp(-gamma * d)
    row = (e / e.sum())[None, :]
    return float(js_divergence_rows(row, np.full((1, l), 1.0 / l)).item())


@lru_cache(maxsize=8)
def _equalized_gamma_profile(l: int, p: float, width: float) -> np.ndarray:
    """Kernel widths that put every row's prior equally far from uniform.

    Rows near the window edges lose half their neighborhood, and the row
    renormalization leaves them at a different divergence from the uniform
    row than interior rows get — the disparity baseline becomes a function
    of window position, which is pure noise for the score.  Solving each
    row's width so its divergence from uniform matches the interior value
    flattens that baseline.  Divergence grows monotonically with the width
    (uniform at 0, one-hot in the limit), so bisection suffices.
    """
    target = _js_to_uniform(l, p, width, l // 2)
    out = np.empty(l)
    for i in range(l):
        lo, hi = 1e-4, 20.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _js_to_uniform(l, p, mid, i) < target:
                lo = mid
            else:
                hi = mid
        out[i] = 0.5 * (lo + hi)
    return out


def init_weights(config: DetectorModelConfig, seed: int) -> dict[str, Tensor]:
    """Geometry-preserving start plus randomly drawn mixing layers.

    The embedding begins as a padded identity (features land verbatim in
    the leading model coordinates) and every layer's query/key maps start
    as one shared scaled identity, so context attention opens as plain
    inner-product similarity between feature vectors — steps corrupted by
    the same burst already attend to each other before any training.
    Kernel widths start at the per-row equalized profile.  Value, output,
    feed-forward, and head weights draw the usual scaled-normal start from
    the seeded stream.
    """
    rng = np.random.default_rng([seed, STREAM_TRAIN])
    gamma_raw = np.log(np.expm1(_equalized_gamma_profile(
        config.window, config.distance_power, _GAMMA_WIDTH_INIT)))
    qk = np.eye(config.d_model) * (_ATTN_GAIN_INIT
                                   / math.sqrt(config.d_model))
    weights: dict[str, Tensor] = {}
    for name, shape in param_manifest(config):
        if name == "gamma":
            value = gamma_raw.reshape(shape).copy()
        elif name == "embed_w":
            value = np.eye(*shape)
        elif name.endswith("_wq") or name.endswith("_wk"):
            value = qk.copy()
        elif name.endswith("_b") or "_ff_b" in name:
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        weights[name] = Tensor(value, requires_grad=True)
    return weights


# ---------------------------------------------------------------------------
# attention building blocks (plain-array forms used by tests and plots)
# ---------------------------------------------------------------------------

def tpc_matrix(gamma, p: float = 1.0) -> np.ndarray:
    """Proximity attention: T_ij proportional to exp(-gamma_i * |j-i|^p).

    ``gamma`` holds the (already positive) kernel widths, one per row;
    rows are normalized to sum to 1.
    """
    g = np.asarray(gamma, dtype=float).reshape(-1, 1)
    l = g.shape[0]
    idx = np.arange(l, dtype=float)
    dist = np.abs(idx[None, :] - idx[:, None]) ** p
    return softmax_rows(-g * dist)


def dcm_attention(q, k) -> np.ndarray:
    """Context attention: softmax_rows(Q K^T / sqrt(d_model))."""
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    if q.ndim != 2 or k.ndim != 2 or q.shape != k.shape:
        raise ConfigError(f"query/key shape mismatch: {q.shape} vs {k.shape}")
    return softmax_rows(q @ k.T / math.sqrt(q.shape[1]))


def _distance_matrix(l: int, p: float) -> np.ndarray:
    idx = np.arange(l, dtype=float)
    return np.abs(idx[None, :] - idx[:, None]) ** p


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    recon: Tensor            # (l, m)
    logits: Tensor           # (l, 1)
    tcd: Tensor              # (l, 1), layer-averaged JS disparity
    proximity: np.ndarray    # (l, l) row-stochastic
    contexts: list           # H arrays (l, l), row-stochastic
    reps: np.ndarray         # (l, d_model) final-layer representations

    @property
    def probs(self) -> np.ndarray:
        """Per-step attack probability from the classification head."""
        z = self.logits.value[:, 0]
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.recon.value).all()
                    and np.isfinite(self.tcd.value).all()
                    and np.isfinite(self.logits.value).all())


def forward(window: np.ndarray, weights: dict, config: DetectorModelConfig,
            detach: str | None = None) -> ForwardResult:
    """Run one standardized window through the network.

    ``detach`` routes disparity gradients: "context" detaches the context
    branch (minimize phase), "proximity" detaches the prior branch (maximize
    phase), None keeps both attached (scoring, gradient checks).
    """
    if detach not in (None, "context", "proximity"):
        raise ConfigError(f"unknown detach mode {detach!r}")
    r = np.asarray(window, dtype=float)
    if r.shape != (config.window, config.feature_dim):
        raise ConfigError(f"window shape {r.shape} does not match config "
                          f"({config.window}, {config.feature_dim})")
    dist = _distance_matrix(config.window, config.distance_power)
    scale = 1.0 / math.sqrt(config.d_model)

    x = Tensor(r) @ weights["embed_w"] + weights["embed_b"]
    proximity = (-(weights["gamma"].softplus() * dist)).softmax_rows()

    js_terms = []
    contexts = []
    prev_keys = None
    for h in range(config.layers):
        q = x @ weights[f"layer{h}_wq"]
        k = x @ weights[f"layer{h}_wk"]
        v = x @ weights[f"layer{h}_wv"]
        keys = k if h == 0 else prev_keys
        context = ((q @ keys.T) * scale).softmax_rows()
        contexts.append(context.value)
        if detach == "context":
            js_terms.append(proximity.js_rows(context.detach()))
        elif detach == "proximity":
            js_terms.append(proximity.detach().js_rows(context))
        else:
            js_terms.append(proximity.js_rows(context))
        attn = (context @ v) @ weights[f"layer{h}_wo"]
        z = (attn + x).layer_norm_rows()
        ff = feed_forward(z, weights[f"layer{h}_ff_w1"],
                          weights[f"layer{h}_ff_b1"],
                          weights[f"layer{h}_ff_w2"],
                          weights[f"layer{h}_ff_b2"])
        x = (ff + z).layer_norm_rows()
        prev_keys = k

    tcd = js_terms[0]
    for term in js_terms[1:]:
        tcd = tcd + term
    tcd = tcd * (1.0 / config.layers)

    recon = x @ weights["rec_w"] + weights["rec_b"]
    logits = recon @ weights["cls_w"] + weights["cls_b"]
    return ForwardResult(recon=recon, logits=logits, tcd=tcd,
                         proximity=proximity.value, contexts=contexts,
                         reps=x.value)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: Tensor
    recon: float
    dis: float
    cls: float
    labeled: int


def window_losses(result: ForwardResult, window: np.ndarray,
                  labels: np.ndarray | None, mask: np.ndarray | None,
                  config: DetectorModelConfig, phase: str) -> LossBreakdown:
    """Total loss for one window under the given training phase."""
    if phase not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}, got {phase!r}")
    diff = result.recon - np.asarray(window, dtype=float)
    l_recon = (diff * diff).sum()
    l_dis = result.tcd.sum() * config.lambda_dis
    alpha = config.alpha_min if phase == "min" else config.alpha_max

    labeled = 0
    l_class = None
    if labels is not None and mask is not None:
        m = np.asarray(mask, dtype=float).reshape(-1, 1)
        labeled = int(m.sum())
        if labeled > 0:
            y = np.asarray(labels, dtype=float).reshape(-1, 1)
            l_class = result.logits.bce_with_logits(y, m)
    if l_class is None and alpha > 0 and labels is not None:
        warnings.warn("no labeled steps in window; classification term "
                      "skipped", RuntimeWarning, stacklevel=2)

    total = l_recon + l_dis if phase == "min" else l_recon - l_dis
    if l_class is not None:
        total = total + l_class * alpha
    return LossBreakdown(total=total, recon=float(l_recon.value.item()),
                         dis=float(l_dis.value.item()),
                         cls=float(l_class.value.item()) if l_class is not None
                         else 0.0,
                         labeled=labeled)


# ---------------------------------------------------------------------------
# feature pipeline
# ---------------------------------------------------------------------------

def augment_features(residues: np.ndarray) -> np.ndarray:
    """Append each residue channel's absolute value as an extra feature.

    The magnitude columns make steps corrupted by the same burst look alike
    even when the injected offsets alternate in sign, so attention can match
    them; the raw columns keep the signed information.
    """
    r = np.asarray(residues, dtype=float)
    if r.ndim != 2:
        raise ConfigError(f"residues must be 2-D, got shape {r.shape}")
    return np.hstack([r, np.abs(r)])


@dataclass(frozen=True)
class Standardizer:
    """Z-scores the magnitude-augmented feature stream.

    Fit on residues presumed clean; columns cover ``augment_features``
    output, so ``apply`` takes raw residues and returns model-ready
    features.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, residues: np.ndarray) -> "Standardizer":
        f = augment_features(residues)
        std = f.std(axis=0)
        return cls(mean=f.mean(axis=0), std=np.where(std > 1e-12, std, 1e-12))

    def apply(self, residues: np.ndarray) -> np.ndarray:
        return (augment_features(residues) - self.mean) / self.std


# ---------------------------------------------------------------------------
# trained model container + checkpoint format
# ---------------------------------------------------------------------------

@dataclass
class TrainedDetector:
    config: DetectorModelConfig
    weights: dict
    standardizer: Standardizer
    threshold: float | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, detector: TrainedDetector) -> None:
    """Versioned binary: magic, JSON manifest header, float64 LE payload."""
    manifest = param_manifest(detector.config)
    buf = io.BytesIO()
    for name, shape in manifest:
        arr = detector.weights[name].value
        if tuple(arr.shape) != tuple(shape):
            raise ConfigError(f"weight {name} has shape {arr.shape}, manifest "
                              f"says {shape}")
        buf.write(arr.astype("<f8").tobytes())
    payload = buf.getvalue()
    header = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(detector.config),
        "params": [{"name": n, "shape": list(s)} for n, s in manifest],
        "standardizer": {"mean": detector.standardizer.mean.tolist(),
                         "std": detector.standardizer.std.tolist()},
        "threshold": detector.threshold,
        "meta": detector.meta,
        "crc32": binascii.crc32(payload) & 0xFFFFFFFF,
    }
    header_bytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path) -> TrainedDetector:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"not a detector checkpoint (magic {magic!r})")
        header_len = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version "
                          f"{header.get('version')}")
    if binascii.crc32(payload) & 0xFFFFFFFF != header["crc32"]:
        raise ConfigError("checkpoint payload failed its CRC check")
    config = DetectorModelConfig(**header["config"])
    weights = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=offset).reshape(shape).copy()
        offset += count * 8
        weights[entry["name"]] = Tensor(arr, requires_grad=True)
    std = header["standardizer"]
    return TrainedDetector(
        config=config, weights=weights,
        standardizer=Standardizer(mean=np.array(std["mean"]),
                                  std=np.array(std["std"])),
        threshold=header["threshold"], meta=header.get("meta", {}))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    l_recon: float
    l_dis: float
    l_class: float
    phase_losses: str
    val_f1: float | None


def write_training_log(path, log: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_COLUMNS)
        for row in log:
            writer.writerow([row.epoch, f"{row.l_recon:.10g}",
                             f"{row.l_dis:.10g}", f"{row.l_class:.10g}",
                             row.phase_losses,
                             "" if row.val_f1 is None else f"{row.val_f1:.6g}"])


# reconstruction-head warm start: ridge solve shrunk below the optimum so
# the optimizer still has reconstruction error left to remove
_PRESOLVE_WINDOWS = 10
_PRESOLVE_RIDGE = 1e-3
_PRESOLVE_SHRINK = 0.7


def _presolve_recon_head(weights: dict, z: np.ndarray,
                         config: DetectorModelConfig) -> None:
    """Warm-start the reconstruction head on leading (clean) windows.

    With a cold random head, the reconstruction error of unpredictable
    residues dwarfs every other loss term and its gradients random-walk the
    trunk; a shrunk least-squares solve from final-layer representations to
    the feature targets removes that bulk error before the first step.
    """
    l = config.window
    count = min(_PRESOLVE_WINDOWS, z.shape[0] // l)
    if count < 1:
        return
    reps, targets = [], []
    for i in range(count):
        win = z[i * l:(i + 1) * l]
        reps.append(forward(win, weights, config).reps)
        targets.append(win)
    x = np.vstack(reps)
    x = np.hstack([x, np.ones((x.shape[0], 1))])
    t = np.vstack(targets)
    a = x.T @ x + _PRESOLVE_RIDGE * np.eye(x.shape[1])
    sol = np.linalg.solve(a, x.T @ t)
    weights["rec_w"].value = sol[:-1] * _PRESOLVE_SHRINK
    weights["rec_b"].value = sol[-1:] * _PRESOLVE_SHRINK


def _snapshot(weights: dict) -> dict:
    return {name: t.value.copy() for name, t in weights.items()}


def _restore(weights: dict, snapshot: dict) -> None:
    for name, t in weights.items():
        t.value = snapshot[name].copy()


def train(residues, labels, config: DetectorModelConfig, seed: int,
          val_residues=None, val_labels=None,
          quantile: float | None = None) -> tuple[TrainedDetector,
                                                  list[EpochLog]]:
    """Semi-supervised alternating min/max training over random windows.

    ``residues`` is the raw (n, m) training sequence; ``labels`` its per-step
    attack bits (may be None for fully unsupervised data).  Only a
    ``label_fraction`` subset of steps keeps labels visible.  Validation
    data, when given, drives per-epoch F1 logging, selects the epoch whose
    weights the returned detector keeps (the log still covers every epoch),
    and calibrates the final score threshold.
    """
    r = np.asarray(residues, dtype=float)
    if r.ndim != 2 or r.shape[1] != config.residue_dim:
        raise ConfigError(f"training residues must be (n, {config.residue_dim}),"
                          f" got {r.shape}")
    n = r.shape[0]
    if n < config.window:
        raise ConfigError(f"need at least one window ({config.window} steps), "
                          f"got {n}")
    y = None if labels is None else np.asarray(labels, dtype=float)
    if y is not None and y.shape[0] != n:
        raise ConfigError("labels must align with residues")

    rng = np.random.default_rng([seed, STREAM_TRAIN])
    # feature statistics come from the leading segment, which the attack
    # conventions keep clean; fitting on the whole contaminated sequence
    # would let the attack inflate its own normalization
    cal_len = max(config.window, int(round(n * defaults.CALIBRATION_FRAC)))
    standardizer = Standardizer.fit(r[:cal_len])
    z = standardizer.apply(r)
    visible = (rng.random(n) < config.label_fraction) if y is not None \
        else np.zeros(n, dtype=bool)

    if quantile is None:
        if val_labels is not None and len(np.atleast_1d(val_labels)):
            q_eff = 1.0 - float(np.mean(np.asarray(val_labels) != 0))
        elif y is not None:
            q_eff = 1.0 - float(np.mean(y != 0))
        else:
            q_eff = 1.0 - defaults.NOMINAL_ATTACK_FRACTION
    else:
        q_eff = quantile
    q_eff = min(max(q_eff, 1e-6), 1.0 - 1e-6)

    weights = init_weights(config, seed)
    _presolve_recon_head(weights, z[:cal_len], config)
    params = [weights[name] for name, _ in param_manifest(config)]
    optimizer = Adam(params, lr=config.learning_rate)

    log: list[EpochLog] = []
    last_good = _snapshot(weights)
    aborted = None
    best_val = -np.inf
    best_snapshot = None
    best_epoch = None
    for epoch in range(1, config.epochs + 1):
        starts = rng.integers(0, n - config.window + 1,
                              size=config.windows_per_epoch)
        recon_sum = dis_sum = cls_sum = 0.0
        phase_sums = {"min": 0.0, "max": 0.0}
        diverged = False
        for b0 in range(0, len(starts), config.batch_size):
            batch = starts[b0:b0 + config.batch_size]
            for phase, detach in (("min", "context"), ("max", "proximity")):
                optimizer.zero_grad()
                total = None
                for s in batch:
                    win = z[s:s + config.window]
                    win_labels = y[s:s + config.window] if y is not None \
                        else None
                    win_mask = visible[s:s + config.window] if y is not None \
                        else None
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        res = forward(win, weights, config, detach=detach)
                        loss = window_losses(res, win, win_labels, win_mask,
                                             config, phase)
                    total = loss.total if total is None else \
                        total + loss.total
                    if phase == "min":
                        recon_sum += loss.recon
                        dis_sum += loss.dis
                        cls_sum += loss.cls
                    phase_sums[phase] += float(loss.total.value.item())
                if not np.isfinite(total.value.item()):
                    diverged = True
                    break
                total.backward()
                optimizer.step()
            if diverged:
                break
        if diverged:
            _restore(weights, last_good)
            aborted = epoch
            break
        last_good = _snapshot(weights)

        n_windows = len(starts)
        val_f1 = None
        if val_residues is not None and val_labels is not None:
            view = TrainedDetector(config=config, weights=weights,
                                   standardizer=standardizer)
            scores, _ = sequence_scores(val_residues, view)
            thr = float(np.quantile(scores, q_eff))
            val_f1 = compute_metrics((scores > thr).astype(np.int8),
                                     val_labels).f1
            if val_f1 > best_val:
                best_val = val_f1
                best_snapshot = _snapshot(weights)
                best_epoch = epoch
        log.append(EpochLog(
            epoch=epoch,
            l_recon=recon_sum / n_windows,
            l_dis=dis_sum / n_windows,
            l_class=cls_sum / n_windows,
            phase_losses=(f"min:{phase_sums['min'] / n_windows:.6g}"
                          f"|max:{phase_sums['max'] / n_windows:.6g}"),
            val_f1=val_f1))

    if best_snapshot is not None:
        _restore(weights, best_snapshot)
    detector = TrainedDetector(config=config, weights=weights,
                               standardizer=standardizer,
                               meta={"seed": seed, "aborted_epoch": aborted,
                                     "selected_epoch": best_epoch})
    if aborted is None:
        calib = r if val_residues is None else val_residues
        calibrate_threshold(detector, calib, quantile=q_eff)
    return detector, log


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoreSequence:
    t: np.ndarray
    score: np.ndarray
    alarm: np.ndarray
    probs: np.ndarray        # classification head, reported separately
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.t.shape[0])


def window_score(tcd_values: np.ndarray) -> np.ndarray:
    """Softmax of the negated disparity over one window's steps.

    Low disparity marks the anomaly, so the most locally-pinned step takes
    the largest share; the scores sum to 1 over the window.
    """
    v = np.asarray(tcd_values, dtype=float).reshape(-1)
    return softmax_rows(-v[None, :])[0]


def sequence_scores(residues, detector: TrainedDetector) -> tuple[np.ndarray,
                                                                  np.ndarray]:
    """Per-step anomaly scores over non-overlapping windows.

    Returns (scores, probs).  Each full window's scores are a softmax of the
    negated disparity over its steps; a trailing partial window is padded for
    the forward pass, but its softmax and output cover only the real steps.
    """
    cfg = detector.config
    z = detector.standardizer.apply(np.asarray(residues, dtype=float))
    n = z.shape[0]
    if n == 0:
        raise ConfigError("cannot score an empty sequence")
    scores = np.empty(n)
    probs = np.empty(n)
    for start in range(0, n, cfg.window):
        chunk = z[start:start + cfg.window]
        valid = chunk.shape[0]
        if valid < cfg.window:
            chunk = np.vstack([chunk, np.zeros((cfg.window - valid,
                                                cfg.feature_dim))])
        res = forward(chunk, detector.weights, cfg, detach=None)
        if not res.finite:
            raise NumericError(f"non-finite activations while scoring window "
                               f"starting at step {start}")
        scores[start:start + valid] = window_score(res.tcd.value[:valid, 0])
        probs[start:start + valid] = res.probs[:valid]
    return scores, probs


def calibrate_threshold(detector: TrainedDetector, val_residues,
                        val_labels=None,
                        quantile: float | None = None) -> float:
    """Set the alarm threshold at a validation-score quantile.

    The default quantile is 1 minus the attacked fraction of the validation
    labels (falling back to the nominal attack duty cycle when unlabeled), so
    the alarm rate on validation matches the expected attack rate.
    """
    scores, _ = sequence_scores(val_residues, detector)
    if quantile is None:
        if val_labels is not None and len(val_labels):
            frac = float(np.mean(np.asarray(val_labels) != 0))
        else:
            frac = defaults.NOMINAL_ATTACK_FRACTION
        quantile = 1.0 - frac
    if not 0.0 < quantile < 1.0:
        raise ConfigError(f"threshold quantile must be in (0, 1), "
                          f"got {quantile}")
    detector.threshold = float(np.quantile(scores, quantile))
    return detector.threshold


def score_and_alarm(residues, detector: TrainedDetector, t=None,
                    threshold: float | None = None) -> ScoreSequence:
    """Score a residue sequence and raise alarms above the threshold.

    ``threshold`` overrides the detector's calibrated value when given.
    Alarms come from the disparity score alone; the classification head's
    probabilities ride along in ``probs`` for reporting.
    """
    thr = detector.threshold if threshold is None else float(threshold)
    if thr is None:
        raise ConfigError("detector has no calibrated threshold; calibrate "
                          "first or pass an explicit one")
    r = np.asarray(residues, dtype=float)
    scores, probs = sequence_scores(r, detector)
    tv = np.arange(r.shape[0], dtype=float) if t is None \
        else np.asarray(t, dtype=float)
    alarm = (scores > thr).astype(np.int8)
    return ScoreSequence(t=tv, score=scores, alarm=alarm, probs=probs,
                         meta={"threshold": thr})


def write_score_csv(path, seq: ScoreSequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_COLUMNS)
        for t, s, a in zip(seq.t, seq.score, seq.alarm):
            writer.writerow([f"{t:.10g}", f"{s:.10g}", int(a)])


def read_score_csv(path) -> ScoreSequence:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORE_COLUMNS:
            raise ConfigError(f"unexpected score CSV header {header!r}")
        rows = [(float(a), float(b), int(c)) for a, b, c in reader]
    return ScoreSequence(t=np.array([r[0] for r in rows]),
                         score=np.array([r[1] for r in rows]),
                         alarm=np.array([r[2] for r in rows], dtype=np.int8),
                         probs=np.full(len(rows), np.nan))
