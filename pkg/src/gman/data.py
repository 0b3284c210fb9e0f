"""Trajectories, trajectory sets, partitions and datasets.

A trajectory is one channel's irregularly sampled sequence of feature
vectors; a sample is a labelled set of trajectories with unique channel ids.
All containers canonicalize their ordering on construction (nodes by time,
then by feature values; trajectories by channel id) so that floating-point
reductions downstream always run in the same order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class ValidationError(ValueError):
    """Bad input data or configuration. ``violations`` lists every problem found."""

    def __init__(self, message: str, violations: Sequence[str] = ()):
        super().__init__(message)
        self.violations = list(violations)


@dataclass(frozen=True)
class Trajectory:
    channel_id: str
    times: np.ndarray  # (n,)
    features: np.ndarray  # (n, d)

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64).reshape(-1)
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None] if t.size != 1 or x.size == 1 else x[None, :]
        if t.size == 0:
            raise ValidationError(f"trajectory {self.channel_id!r} has no nodes")
        if x.ndim != 2 or x.shape[0] != t.size:
            raise ValidationError(
                f"trajectory {self.channel_id!r}: {t.size} timestamps but features of shape {x.shape}"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise ValidationError(f"trajectory {self.channel_id!r} has non-finite values")
        # canonical node order: timestamp, then feature values
        order = np.lexsort(tuple(x[:, c] for c in range(x.shape[1] - 1, -1, -1)) + (t,))
        t, x = t[order], x[order]
        t.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "channel_id", str(self.channel_id))

    @classmethod
    def from_nodes(cls, channel_id: str, nodes: Iterable[tuple[float, Sequence[float]]]) -> "Trajectory":
        nodes = list(nodes)
        return cls(channel_id, [t for t, _ in nodes], [list(x) for _, x in nodes])

    @property
    def n_nodes(self) -> int:
        return self.times.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def nodes(self) -> list[tuple[float, np.ndarray]]:
        return [(float(t), x) for t, x in zip(self.times, self.features)]


def static_trajectory(channel_id: str, values: Sequence[float]) -> Trajectory:
    """Encode time-invariant covariates as a single node at t=0."""
    return Trajectory(channel_id, [0.0], [list(values)])


def time_delta(t_w: float, t_j: float) -> float:
    """Signed elapsed time from node j to node w, ``t_w - t_j``."""
    return t_w - t_j


@dataclass(frozen=True)
class TrajectorySet:
    set_id: str
    label: int | None
    trajectories: tuple[Trajectory, ...]

    def __post_init__(self):
        trajs = tuple(sorted(self.trajectories, key=lambda g: g.channel_id))
        if not trajs:
            raise ValidationError(f"sample {self.set_id!r} has no trajectories")
        ids = [g.channel_id for g in trajs]
        dupes = sorted({c for c in ids if ids.count(c) > 1})
        if dupes:
            raise ValidationError(f"sample {self.set_id!r} has duplicate channels: {dupes}")
        dims = {g.feature_dim for g in trajs}
        if len(dims) != 1:
            raise ValidationError(f"sample {self.set_id!r} mixes feature dimensions {sorted(dims)}")
        if self.label is not None and self.label not in (0, 1):
            raise ValidationError(f"sample {self.set_id!r} has non-binary label {self.label!r}")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "set_id", str(self.set_id))

    @property
    def feature_dim(self) -> int:
        return self.trajectories[0].feature_dim

    @property
    def channels(self) -> list[str]:
        return [g.channel_id for g in self.trajectories]

    def get(self, channel_id: str) -> Trajectory | None:
        for g in self.trajectories:
            if g.channel_id == channel_id:
                return g
        return None

    def map_features(self, fn) -> "TrajectorySet":
        return TrajectorySet(
            self.set_id,
            self.label,
            tuple(Trajectory(g.channel_id, g.times, fn(g.features)) for g in self.trajectories),
        )


@dataclass(frozen=True)
class PartitionSpec:
    """Feature subsets {F_l} over indices and graph subsets {S_i} over channel ids.

    A graph subset listing more than one channel is mixed through a DeepSet;
    its capacity is fixed here, not by what a particular sample contains.
    """

    feature_subsets: tuple[tuple[int, ...], ...]
    graph_subsets: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "feature_subsets", tuple(tuple(int(i) for i in s) for s in self.feature_subsets))
        object.__setattr__(self, "graph_subsets", tuple(tuple(str(c) for c in s) for s in self.graph_subsets))

    @property
    def feature_dim(self) -> int:
        return sum(len(s) for s in self.feature_subsets)

    def is_multi(self, i: int) -> bool:
        return len(self.graph_subsets[i]) > 1

    def subset_of(self, channel_id: str) -> int:
        for i, s in enumerate(self.graph_subsets):
            if channel_id in s:
                return i
        raise KeyError(channel_id)

    def block_slices(self) -> list[slice]:
        """Positions of each feature subset's block inside a node representation."""
        out, start = [], 0
        for s in self.feature_subsets:
            out.append(slice(start, start + len(s)))
            start += len(s)
        return out

    def to_dict(self) -> dict:
        return {
            "feature_subsets": [list(s) for s in self.feature_subsets],
            "graph_subsets": [list(s) for s in self.graph_subsets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSpec":
        return cls(tuple(map(tuple, d["feature_subsets"])), tuple(map(tuple, d["graph_subsets"])))

    @classmethod
    def singletons(cls, d: int, channels: Iterable[str]) -> "PartitionSpec":
        return cls(tuple((i,) for i in range(d)), tuple((c,) for c in sorted(channels)))


def validate_partition(spec: PartitionSpec, d: int, channels: Iterable[str]) -> list[str]:
    """Every violation of the partition against feature dim ``d`` and the data's channels.

    An empty list means the partition is valid.
    """
    violations = []
    seen: dict[int, int] = {}
    for l, subset in enumerate(spec.feature_subsets):
        if not subset:
            violations.append(f"feature subset {l} is empty")
        for idx in subset:
            if not 0 <= idx < d:
                violations.append(f"feature subset {l}: index {idx} out of range [0, {d})")
            elif idx in seen:
                violations.append(f"feature index {idx} overlaps: in subsets {seen[idx]} and {l}")
            else:
                seen[idx] = l
    for idx in range(d):
        if idx not in seen:
            violations.append(f"feature index {idx} not covered by any subset")

    owner: dict[str, int] = {}
    for i, subset in enumerate(spec.graph_subsets):
        if not subset:
            violations.append(f"graph subset {i} is empty")
        for c in subset:
            if c in owner:
                violations.append(f"channel {c!r} overlaps: in subsets {owner[c]} and {i}")
            else:
                owner[c] = i
    for c in sorted(set(channels)):
        if c not in owner:
            violations.append(f"channel {c!r} not covered by any graph subset")
    return violations


def require_valid(spec: PartitionSpec, d: int, channels: Iterable[str]) -> None:
    v = validate_partition(spec, d, channels)
    if v:
        raise ValidationError("invalid partition: " + "; ".join(v), v)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class Dataset:
    samples: list[TrajectorySet]
    stats: NormStats | None = None
    warnings: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {s.feature_dim for s in self.samples}
        if len(dims) > 1:
            raise ValidationError(f"dataset mixes feature dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def feature_dim(self) -> int:
        return self.samples[0].feature_dim

    @property
    def channels(self) -> set[str]:
        return {c for s in self.samples for c in s.channels}

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.float64)

    def subset(self, idx: Iterable[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in idx], self.stats, list(self.warnings), dict(self.meta))

    def split(self, val_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        if not 0.0 < val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        perm = np.random.default_rng(seed).permutation(len(self.samples))
        n_val = max(1, int(round(val_fraction * len(self.samples))))
        return self.subset(sorted(perm[n_val:])), self.subset(sorted(perm[:n_val]))


def compute_stats(dataset: Dataset) -> tuple[NormStats, list[str]]:
    """Per-feature mean/std over every node of every sample (population std)."""
    x = np.concatenate([g.features for s in dataset.samples for g in s.trajectories], axis=0)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    warnings = []
    for c in np.flatnonzero(std < STD_FLOOR):
        warnings.append(f"feature {c} is constant; std floored at {STD_FLOOR:g}")
        log.warning(warnings[-1])
    return NormStats(mean, np.maximum(std, STD_FLOOR)), warnings


def normalize(dataset: Dataset, stats: NormStats | None = None) -> Dataset:
    """Z-score features with ``stats`` (default: computed from ``dataset`` itself).

    Pass the training split's stats when normalizing validation or test data.
    Timestamps are left untouched.
    """
    warnings = list(dataset.warnings)
    if stats is None:
        stats, w = compute_stats(dataset)
        warnings += w
    samples = [s.map_features(stats.apply) for s in dataset.samples]
    return Dataset(samples, stats, warnings, dict(dataset.meta))
