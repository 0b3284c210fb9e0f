"""Loss, gradients, the training loop, metrics and grid search."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, PartitionSpec, TrajectorySet, ValidationError, require_valid
from .mixer import GmanParams, backward, forward, init_gman, predict_proba, score_batch
from .nn import OptimState, optim_step

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient. Carries the last good checkpoint and the log so far."""

    def __init__(self, message: str, params: GmanParams, records: list[dict]):
        super().__init__(message)
        self.params = params
        self.records = records


class UndefinedMetricError(ValueError):
    pass


def bce_loss(prob: float, label: int) -> float:
    p = min(max(float(prob), PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -(label * math.log(p) + (1 - label) * math.log1p(-p))


def bce_with_logits(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample BCE of sigmoid(score) and its derivative w.r.t. the score."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    loss = np.logaddexp(0.0, s) - y * s
    return loss, predict_proba(s) - y


def backward_sample(sample: TrajectorySet, params: GmanParams, partition: PartitionSpec, label=None):
    """BCE loss of one sample and its gradient for every parameter array."""
    y = sample.label if label is None else label
    if y is None:
        raise ValidationError(f"sample {sample.set_id!r} has no label")
    scores, cache = forward([sample], params, partition)
    loss, grad = bce_with_logits(scores, [y])
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError(f"non-finite score for sample {sample.set_id!r} in mixer output")
    grads = backward(cache, grad)
    for k, a in enumerate(grads.arrays()):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite gradient in parameter array {k}")
    return float(loss[0]), grads


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(probs, labels, threshold: float = 0.5) -> float:
    """Fraction correct; a probability equal to the threshold counts as positive."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean((p >= threshold).astype(int) == y))


@dataclass
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 32
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    factor: float = 0.5
    patience: int = 20
    weight_decay: float = 1e-4
    seed: int = 0
    select_metric: str = "val_loss"
    hidden_width: int = 32
    n_hidden: int = 3
    activation: str = "relu"
    val_fraction: float = 0.2
    normalize: bool = True

    def __post_init__(self):
        if self.lr_max < self.lr_min:
            raise ValidationError(f"lr_max {self.lr_max} is below lr_min {self.lr_min}")
        if not 0.0 < self.factor < 1.0:
            raise ValidationError(f"factor must be in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if self.select_metric not in ("val_loss", "val_auroc"):
            raise ValidationError(f"select_metric must be val_loss or val_auroc, got {self.select_metric!r}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValidationError("max_epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**d)


class PlateauScheduler:
    """Multiply the LR by ``factor`` once the metric fails to improve for more than ``patience`` epochs."""

    def __init__(self, lr: float, factor: float, patience: int, min_lr: float, mode: str = "min"):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.mode = mode
        self.best = math.inf if mode == "min" else -math.inf
        self.bad_epochs = 0

    def _better(self, value: float) -> bool:
        return value < self.best if self.mode == "min" else value > self.best

    def step(self, value: float) -> float:
        if self._better(value):
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


@dataclass
class FitResult:
    params: GmanParams
    records: list[dict]
    best_epoch: int
    best_metric: float

    def log_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]


def evaluate(samples: Sequence[TrajectorySet], params: GmanParams, partition: PartitionSpec) -> dict:
    scores = score_batch(list(samples), params, partition)
    labels = np.array([s.label for s in samples], dtype=np.float64)
    losses, _ = bce_with_logits(scores, labels)
    probs = predict_proba(scores)
    try:
        au = auroc(scores, labels)
    except UndefinedMetricError:
        au = None
    return {
        "loss": float(losses.mean()),
        "auroc": au,
        "accuracy": accuracy(probs, labels),
        "scores": scores,
    }


def _check_splits(train: Dataset, val: Dataset | None, partition: PartitionSpec) -> None:
    if len(train) == 0:
        raise ValidationError("training split is empty")
    if val is not None:
        if len(val) == 0:
            raise ValidationError("validation split is empty")
        overlap = {s.set_id for s in train} & {s.set_id for s in val}
        if overlap:
            raise ValidationError(f"train and validation splits share set ids, e.g. {sorted(overlap)[:3]}")
    channels = train.channels | (val.channels if val is not None else set())
    require_valid(partition, train.feature_dim, channels)
    for s in train:
        if s.label is None:
            raise ValidationError(f"training sample {s.set_id!r} has no label")


def fit(
    train: Dataset,
    val: Dataset | None,
    partition: PartitionSpec,
    config: TrainConfig,
    params: GmanParams | None = None,
) -> FitResult:
    """Mini-batch Adam training with plateau LR reduction; returns the best-validation checkpoint.

    Without a validation split, selection and scheduling use the training set.
    Data is used as given; normalize beforehand if wanted.
    """
    _check_splits(train, val, partition)
    if params is None:
        params = init_gman(partition, config.seed, config.hidden_width, config.n_hidden, config.activation)
    params.check(partition)
    val_samples = list(val.samples if val is not None else train.samples)
    samples = list(train.samples)
    labels = np.array([s.label for s in samples], dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    state = OptimState.fresh(params, learning_rate=config.lr_max, weight_decay=config.weight_decay)
    mode = "min" if config.select_metric == "val_loss" else "max"
    sched = PlateauScheduler(config.lr_max, config.factor, config.patience, config.lr_min, mode)
    best = params.copy()
    best_metric = math.inf if mode == "min" else -math.inf
    best_epoch = 0
    records: list[dict] = []

    for epoch in range(1, config.max_epochs + 1):
        lr = state.learning_rate
        order = rng.permutation(len(samples))
        loss_sum, correct = 0.0, 0
        for k in range(0, len(order), config.batch_size):
            idx = order[k : k + config.batch_size]
            try:
                scores, cache = forward([samples[i] for i in idx], params, partition)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", best, records) from exc
            losses, dscore = bce_with_logits(scores, labels[idx])
            if not np.all(np.isfinite(losses)):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", best, records)
            loss_sum += float(losses.sum())
            correct += int(np.sum((scores >= 0.0) == (labels[idx] > 0.5)))
            grads = backward(cache, dscore / idx.size)
            try:
                params, state = optim_step(params, grads, state)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", best, records) from exc

        try:
            ev = evaluate(val_samples, params, partition)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", best, records) from exc
        if not math.isfinite(ev["loss"]):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", best, records)
        if config.select_metric == "val_loss":
            metric = ev["loss"]
        else:
            if ev["auroc"] is None:
                raise ValidationError("val_auroc selection needs both classes in the validation split")
            metric = ev["auroc"]
        improved = metric < best_metric if mode == "min" else metric > best_metric
        if improved:
            best, best_metric, best_epoch = params.copy(), metric, epoch
        state.learning_rate = sched.step(metric)
        records.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / len(samples),
                "train_accuracy": correct / len(samples),
                "val_loss": ev["loss"],
                "val_auroc": ev["auroc"],
                "val_accuracy": ev["accuracy"],
                "val_metric": metric,
                "lr": lr,
            }
        )
        log.debug("epoch %d: %s", epoch, records[-1])
    return FitResult(best, records, best_epoch, best_metric)


@dataclass
class CellResult:
    settings: dict
    metrics: list[float] = field(default_factory=list)
    mean: float | None = None
    std: float | None = None
    error: str | None = None


def grid_cells(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of a name -> candidates mapping, in insertion order."""
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def grid_search(
    grid: dict[str, list],
    train: Dataset,
    val: Dataset,
    partition: PartitionSpec,
    base: TrainConfig | None = None,
    seeds: Sequence[int] = (0, 1, 2),
) -> list[CellResult]:
    """Fit every cell for every seed; valid cells ranked best first, failed cells after."""
    base = base or TrainConfig()
    results = []
    for settings in grid_cells(grid):
        cell = CellResult(settings)
        try:
            for seed in seeds:
                res = fit(train, val, partition, replace(base, **settings, seed=seed))
                cell.metrics.append(res.best_metric)
            cell.mean = float(np.mean(cell.metrics))
            cell.std = float(np.std(cell.metrics))
        except (TrainingDiverged, ValidationError, FloatingPointError) as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        results.append(cell)
    sign = 1.0 if base.select_metric == "val_loss" else -1.0
    ok = sorted((c for c in results if c.error is None), key=lambda c: sign * c.mean)
    return ok + [c for c in results if c.error is not None]
