"""Dataset splitting, the training loop, and evaluation metrics.

Steps are counted in mini-batches (one sample each); gradients are averaged
over `accumulation` consecutive mini-batches before every optimizer update,
and the one-cycle schedule is indexed by the mini-batch counter. Validation
runs twice per epoch (half-way and at the end); the best-validation
parameters are retained and checkpointed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericalError
from .gnn import GnnModel, ModelConfig
from .meshgraph import (FieldSnapshot, GlobalConditions, Graph,
                        NormalizationStats, Sample, assemble_features)
from .nncore import AdamWState, OneCycleSchedule, adamw_step, mse_loss, onecycle_lr

# train/val/test fractions matching the reference 6200/750/750 partition
DEFAULT_SPLIT_RATIOS = (6200 / 7700, 750 / 7700, 750 / 7700)

_REL_ERR_FLOOR = 1e-6


@dataclass
class Dataset:
    """Samples plus disjoint, exhaustive split indices and normalization
    statistics computed from the train split alone."""

    samples: list[Sample]
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    norm: NormalizationStats

    def __post_init__(self):
        n = len(self.samples)
        all_idx = np.concatenate([self.train_idx, self.val_idx,
                                  self.test_idx])
        if sorted(all_idx.tolist()) != list(range(n)):
            raise DataError("split indices must be disjoint and exhaustive")

    def split(self, name: str) -> list[Sample]:
        try:
            idx = {"train": self.train_idx, "val": self.val_idx,
                   "test": self.test_idx}[name]
        except KeyError:
            raise ConfigError(f"unknown split '{name}'") from None
        return [self.samples[i] for i in idx]


def compute_normalization(samples: list[Sample]) -> NormalizationStats:
    """Mean/std statistics over the given (train) samples only."""
    if not samples:
        raise DataError("cannot compute normalization from zero samples")
    seen: dict[int, Graph] = {}
    for s in samples:
        seen[id(s.graph)] = s.graph
    pos = np.concatenate([g.positions for g in seen.values()])
    glob = np.stack([s.conditions.as_array() for s in samples])
    fields = np.concatenate([s.fields.as_matrix() for s in samples])

    def scale_of(arr):
        s = arr.std(axis=0)
        return np.where(s < 1e-12, 1.0, s)

    return NormalizationStats(
        pos_mean=pos.mean(axis=0), pos_scale=scale_of(pos),
        glob_mean=glob.mean(axis=0), glob_scale=scale_of(glob),
        field_mean=fields.mean(axis=0), field_scale=scale_of(fields))


def split_dataset(samples: list[Sample], ratios=DEFAULT_SPLIT_RATIOS,
                  seed: int = 0) -> Dataset:
    """Deterministic shuffled split; floor allocation, remainder to train."""
    if not samples:
        raise DataError("cannot split an empty sample list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(samples)
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_val - n_test
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = perm[:n_train]
    val_idx = perm[n_train:n_train + n_val]
    test_idx = perm[n_train + n_val:]
    norm = compute_normalization([samples[i] for i in train_idx])
    return Dataset(samples=samples, train_idx=train_idx, val_idx=val_idx,
                   test_idx=test_idx, norm=norm)


@dataclass(frozen=True)
class TrainRunConfig:
    total_steps: int = 160_000
    accumulation: int = 16
    batch_size: int = 1
    max_lr: float = 1e-3
    warmup_fraction: float = 0.3
    weight_decay: float = 0.01
    seed: int = 0
    precision: str = "float32"
    checkpoints_per_epoch: int = 2

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be positive")
        if self.accumulation < 1:
            raise ConfigError("accumulation must be >= 1")
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "total_steps", "accumulation", "batch_size", "max_lr",
            "warmup_fraction", "weight_decay", "seed", "precision",
            "checkpoints_per_epoch")}


@dataclass
class TrainResult:
    """Loss curves, the best-validation trail, and the retained parameters."""

    train_curve: list[tuple[int, float, float]]
    val_curve: list[tuple[int, float]]
    best_trail: list[tuple[int, float]]
    best_val: float
    best_step: int
    best_params: dict[str, np.ndarray]
    checkpoint_path: Path | None = None


def _prepare(samples: list[Sample], norm: NormalizationStats, dtype):
    """Feature/target tensors per sample, targets standardized."""
    out = []
    for s in samples:
        x = assemble_features(s.graph, s.conditions, norm).astype(dtype)
        y = ((s.fields.as_matrix() - norm.field_mean)
             / norm.field_scale).astype(dtype)
        out.append((s.graph, x, y))
    return out


def _mean_val_loss(model: GnnModel, prepared) -> float:
    total = 0.0
    for g, x, y in prepared:
        out = model.forward(g, x)
        total += mse_loss(out, y)[0]
    return total / len(prepared)


def train_loop(model: GnnModel, dataset: Dataset, cfg: TrainRunConfig,
               out_dir: str | Path | None = None) -> TrainResult:
    """Run the full schedule; returns curves and best-validation parameters.

    When out_dir is given, writes train_curve.csv, val_curve.csv and the
    best checkpoint (best.ckp) there.
    """
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    train_samples = dataset.split("train")
    val_samples = dataset.split("val")
    if not train_samples:
        raise DataError("train split is empty")
    for k in model.params:
        model.params[k] = model.params[k].astype(dtype)
    train = _prepare(train_samples, dataset.norm, dtype)
    val = _prepare(val_samples, dataset.norm, dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamWState(weight_decay=cfg.weight_decay)
    sched = OneCycleSchedule(max_lr=cfg.max_lr, total_steps=cfg.total_steps,
                             warmup_fraction=cfg.warmup_fraction)
    n_train = len(train)
    half = math.ceil(n_train / 2)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    accum: dict[str, np.ndarray] = {}
    accum_count = 0
    group_loss = 0.0
    train_curve: list[tuple[int, float, float]] = []
    val_curve: list[tuple[int, float]] = []
    best_trail: list[tuple[int, float]] = []
    best_val = math.inf
    best_step = -1
    best_params = {k: v.copy() for k, v in model.params.items()}
    ckpt_path = None

    def validate(step: int):
        nonlocal best_val, best_step, best_params, ckpt_path
        if not val:
            return
        loss = _mean_val_loss(model, val)
        val_curve.append((step, loss))
        if loss < best_val:
            best_val = loss
            best_step = step
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_trail.append((step, loss))
            if out_path is not None:
                ckpt_path = out_path / "best.ckp"
                save_checkpoint(ckpt_path, Checkpoint(
                    config={"model": model.config.to_dict(),
                            "train": cfg.to_dict()},
                    normalization=dataset.norm.to_dict(),
                    seed=cfg.seed, step=step,
                    params={k: v.astype(np.float64)
                            for k, v in model.params.items()}))

    step = 0
    epoch_pos = 0
    order = rng.permutation(n_train)
    while step < cfg.total_steps:
        g, x, y = train[order[epoch_pos]]
        out, cache = model.forward_with_cache(g, x)
        loss, g_out = mse_loss(out, y)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite training loss at step {step}")
        grads = model.backward(cache, g_out)
        for k, v in grads.items():
            if k in accum:
                accum[k] += v
            else:
                accum[k] = v.astype(dtype)
        group_loss += loss
        accum_count += 1
        step += 1
        epoch_pos += 1
        if accum_count == cfg.accumulation or step == cfg.total_steps:
            lr = onecycle_lr(step, sched)
            avg = {k: v / accum_count for k, v in accum.items()}
            adamw_step(model.params, avg, opt, lr)
            train_curve.append((step, lr, group_loss / accum_count))
            accum = {}
            accum_count = 0
            group_loss = 0.0
        if epoch_pos == half or epoch_pos == n_train:
            validate(step)
        if epoch_pos == n_train:
            epoch_pos = 0
            order = rng.permutation(n_train)
    if not val_curve or val_curve[-1][0] != step:
        validate(step)

    if out_path is not None:
        with open(out_path / "train_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "train_mse"])
            w.writerows(train_curve)
        with open(out_path / "val_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "val_mse"])
            w.writerows(val_curve)
    return TrainResult(train_curve=train_curve, val_curve=val_curve,
                       best_trail=best_trail, best_val=best_val,
                       best_step=best_step, best_params=best_params,
                       checkpoint_path=ckpt_path)


def predict_fields(model: GnnModel, norm: NormalizationStats, graph: Graph,
                   cond: GlobalConditions) -> FieldSnapshot:
    """Run the model and denormalize to physical units.

    Predicted TKE is floored at zero so the snapshot invariant holds.
    """
    dtype = next(iter(model.params.values())).dtype
    x = assemble_features(graph, cond, norm).astype(dtype)
    out = model.forward(graph, x).astype(np.float64)
    m = out * norm.field_scale + norm.field_mean
    m[:, 3] = np.maximum(m[:, 3], 0.0)
    return FieldSnapshot.from_matrix(m)


@dataclass(frozen=True)
class FieldMetrics:
    """Box-plot statistics of per-vertex relative absolute errors."""

    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    errors: np.ndarray = field(repr=False)

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "FieldMetrics":
        q1, med, q3 = np.percentile(errors, [25, 50, 75])
        iqr = q3 - q1
        inside = errors[(errors >= q1 - 1.5 * iqr)
                        & (errors <= q3 + 1.5 * iqr)]
        return cls(median=float(med), q1=float(q1), q3=float(q3),
                   whisker_lo=float(inside.min()),
                   whisker_hi=float(inside.max()), errors=errors)

    @property
    def median_accuracy(self) -> float:
        """1 - median relative absolute error, as a fraction."""
        return 1.0 - self.median


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary over one split.

    speed/tke: errors relative to the true value (floored at 1e-6);
    speed_inlet/tke_inlet: the same residuals normalized by each sample's
    freestream magnitude instead (robust near zero).
    """

    speed: FieldMetrics
    tke: FieldMetrics
    speed_inlet: FieldMetrics
    tke_inlet: FieldMetrics
    mse: float
    n_samples: int
    denominator_rule: str = "true value, floored at 1e-6"

    def rows(self) -> list[dict]:
        out = []
        for name in ("speed", "tke", "speed_inlet", "tke_inlet"):
            m: FieldMetrics = getattr(self, name)
            out.append({"field": name, "median_err": m.median,
                        "q1": m.q1, "q3": m.q3,
                        "whisker_lo": m.whisker_lo,
                        "whisker_hi": m.whisker_hi,
                        "median_accuracy_pct": 100.0 * m.median_accuracy})
        return out


def evaluate(model: GnnModel, dataset: Dataset,
             split: str = "test") -> MetricsReport:
    """Per-vertex relative absolute errors of |U| and TKE over a split."""
    samples = dataset.split(split)
    if not samples:
        raise DataError(f"split '{split}' is empty")
    speed_err, tke_err = [], []
    speed_inlet, tke_inlet = [], []
    sq_sum = 0.0
    count = 0
    from .gad import abl_reference_tke

    for s in samples:
        pred = predict_fields(model, dataset.norm, s.graph, s.conditions)
        true_speed = s.fields.speed()
        pred_speed = pred.speed()
        speed_res = np.abs(pred_speed - true_speed)
        tke_res = np.abs(pred.tke - s.fields.tke)
        speed_err.append(speed_res / np.maximum(true_speed, _REL_ERR_FLOOR))
        tke_err.append(tke_res / np.maximum(s.fields.tke, _REL_ERR_FLOOR))
        speed_inlet.append(speed_res / s.conditions.u_inf)
        ref = max(abl_reference_tke(s.conditions.u_inf, s.conditions.ti_inf),
                  _REL_ERR_FLOOR)
        tke_inlet.append(tke_res / ref)
        diff = pred.as_matrix() - s.fields.as_matrix()
        sq_sum += float(np.sum(diff * diff))
        count += diff.size
    return MetricsReport(
        speed=FieldMetrics.from_errors(np.concatenate(speed_err)),
        tke=FieldMetrics.from_errors(np.concatenate(tke_err)),
        speed_inlet=FieldMetrics.from_errors(np.concatenate(speed_inlet)),
        tke_inlet=FieldMetrics.from_errors(np.concatenate(tke_inlet)),
        mse=sq_sum / count, n_samples=len(samples))


def make_model(config: ModelConfig, seed: int = 0) -> GnnModel:
    """Convenience constructor matching the dataset feature layout."""
    return GnnModel(config, seed=seed)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[GnnModel,
                                                     NormalizationStats]:
    """Rebuild a model and its normalization stats from a checkpoint."""
    try:
        cfg = ModelConfig.from_dict(ckpt.config["model"])
    except (KeyError, TypeError) as e:
        raise DataError(f"checkpoint lacks a model config: {e}") from e
    model = GnnModel(cfg, seed=ckpt.seed)
    for k in model.params:
        if k not in ckpt.params:
            raise DataError(f"checkpoint missing parameter block '{k}'")
        if model.params[k].shape != ckpt.params[k].shape:
            raise DataError(f"checkpoint shape mismatch for '{k}'")
        model.params[k] = ckpt.params[k].copy()
    norm = NormalizationStats.from_dict(ckpt.normalization)
    return model, norm
