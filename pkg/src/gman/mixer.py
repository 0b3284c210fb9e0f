"""Subset mixing and the additive GMAN score.

Each graph subset owns one ExtGNAN encoder shared by its graphs. A subset
declared with one channel contributes that graph's representation directly;
a subset declared with several channels contributes ``g(sum f(h_G))`` over
whichever of its channels are present. The score is the entry sum of all
subset contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PartitionSpec, Trajectory, TrajectorySet, ValidationError, validate_partition
from .extgnan import (
    EncodeCache,
    ExtGnanParams,
    GraphBatch,
    constant_rho,
    encode_backward,
    encode_forward,
    identity_psi,
    init_extgnan,
    xor_gadget_params,
)
from .nn import MlpParams, MlpSpec, ShapeError, mlp_backward, mlp_forward, mlp_from_arrays, mlp_init


class RoutingError(ValidationError):
    """A trajectory was sent to a subset that does not own its channel."""


@dataclass
class DeepSetParams:
    f: MlpParams
    g: MlpParams

    def arrays(self) -> list[np.ndarray]:
        return [*self.f.arrays(), *self.g.arrays()]

    def with_arrays(self, arrays) -> "DeepSetParams":
        n = len(self.f.arrays())
        return DeepSetParams(self.f.with_arrays(arrays[:n]), self.g.with_arrays(arrays[n:]))


@dataclass
class GmanParams:
    encoders: list[ExtGnanParams]
    deepsets: list[DeepSetParams | None]

    def __post_init__(self):
        if len(self.encoders) != len(self.deepsets):
            raise ShapeError("one encoder and one (optional) DeepSet slot per graph subset")

    def parts(self) -> list:
        return [p for pair in zip(self.encoders, self.deepsets) for p in pair if p is not None]

    def arrays(self) -> list[np.ndarray]:
        return [a for p in self.parts() for a in p.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "GmanParams":
        enc, ds, pos = [], [], 0
        for e, s in zip(self.encoders, self.deepsets):
            n = len(e.arrays())
            enc.append(e.with_arrays(arrays[pos : pos + n]))
            pos += n
            if s is None:
                ds.append(None)
            else:
                n = len(s.arrays())
                ds.append(s.with_arrays(arrays[pos : pos + n]))
                pos += n
        if pos != len(arrays):
            raise ShapeError(f"expected {pos} arrays, got {len(arrays)}")
        return GmanParams(enc, ds)

    def zeros_like(self) -> "GmanParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "GmanParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def check(self, partition: PartitionSpec) -> None:
        if len(self.encoders) != len(partition.graph_subsets):
            raise ShapeError(f"{len(self.encoders)} encoders for {len(partition.graph_subsets)} graph subsets")
        for i, (e, s) in enumerate(zip(self.encoders, self.deepsets)):
            e.check(partition.feature_subsets)
            if partition.is_multi(i) != (s is not None):
                raise ShapeError(f"graph subset {i}: DeepSet presence does not match its declared capacity")


def init_gman(
    partition: PartitionSpec,
    seed: int = 0,
    hidden_width: int = 32,
    n_hidden: int = 3,
    activation: str = "relu",
) -> GmanParams:
    """Fresh parameters; every network gets its own seed derived from ``seed``."""
    d = partition.feature_dim
    K = len(partition.feature_subsets)
    per_subset = (1 + K) + 2
    seeds = np.random.SeedSequence(seed).generate_state(per_subset * len(partition.graph_subsets), np.uint64)
    hidden = (hidden_width,) * n_hidden
    encoders, deepsets = [], []
    for i in range(len(partition.graph_subsets)):
        s = [int(v) for v in seeds[i * per_subset : (i + 1) * per_subset]]
        encoders.append(init_extgnan(partition.feature_subsets, s[: 1 + K], hidden_width, n_hidden, activation))
        if partition.is_multi(i):
            f = mlp_init(MlpSpec(d, hidden + (d,), activation, s[-2]))
            g = mlp_init(MlpSpec(d, hidden + (d,), activation, s[-1]))
            deepsets.append(DeepSetParams(f, g))
        else:
            deepsets.append(None)
    return GmanParams(encoders, deepsets)


def predict_proba(score):
    """Logistic link, evaluated without overflow for large |score|."""
    s = np.asarray(score, dtype=np.float64)
    e = np.exp(-np.abs(s))
    p = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(p) if p.ndim == 0 else p


def _route(samples: Sequence[TrajectorySet], partition: PartitionSpec):
    """Per graph subset: the trajectories present and the sample each came from."""
    owner = {c: i for i, s in enumerate(partition.graph_subsets) for c in s}
    routed: list[tuple[list[Trajectory], list[int]]] = [([], []) for _ in partition.graph_subsets]
    for b, sample in enumerate(samples):
        for g in sample.trajectories:
            if g.channel_id not in owner:
                raise RoutingError(
                    f"sample {sample.set_id!r}: channel {g.channel_id!r} is not in any graph subset",
                    [f"channel {g.channel_id!r} not covered by any graph subset"],
                )
            graphs, idx = routed[owner[g.channel_id]]
            graphs.append(g)
            idx.append(b)
    return routed


@dataclass
class SubsetCache:
    enc: EncodeCache | None
    owner: np.ndarray
    f_tape: object = None
    g_tape: object = None


@dataclass
class ForwardCache:
    params: GmanParams
    partition: PartitionSpec
    n_samples: int
    subsets: list[SubsetCache]
    outputs: list[np.ndarray]  # per subset, (B, d)


def _segment_sum(values: np.ndarray, owner: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, owner, values)
    return out


def forward(samples: Sequence[TrajectorySet], params: GmanParams, partition: PartitionSpec):
    """Scores for a batch of samples, plus the cache needed by :func:`backward`."""
    params.check(partition)
    d = partition.feature_dim
    B = len(samples)
    for s in samples:
        if s.feature_dim != d:
            raise ShapeError(f"sample {s.set_id!r} has feature dim {s.feature_dim}, model expects {d}")
    routed = _route(samples, partition)
    caches, outputs = [], []
    for i, (graphs, idx) in enumerate(routed):
        owner = np.array(idx, dtype=np.intp)
        if graphs:
            h, enc = encode_forward(GraphBatch.build(graphs), params.encoders[i], partition.feature_subsets)
        else:
            h, enc = np.zeros((0, d)), None
        if params.deepsets[i] is None:
            caches.append(SubsetCache(enc, owner))
            outputs.append(_segment_sum(h, owner, B))
        else:
            ds = params.deepsets[i]
            fh, f_tape = mlp_forward(ds.f, h) if graphs else (np.zeros((0, d)), None)
            pooled = _segment_sum(fh, owner, B)
            out, g_tape = mlp_forward(ds.g, pooled)
            caches.append(SubsetCache(enc, owner, f_tape, g_tape))
            outputs.append(out)
    scores = np.zeros(B)
    for out in outputs:
        scores += out.sum(axis=1)
    return scores, ForwardCache(params, partition, B, caches, outputs)


def backward(cache: ForwardCache, grad_scores) -> GmanParams:
    """Gradients of ``sum(scores * grad_scores)`` for every parameter array."""
    d = cache.partition.feature_dim
    grad_out = np.repeat(np.asarray(grad_scores, dtype=np.float64)[:, None], d, axis=1)
    params = cache.params
    encoders, deepsets = [], []
    for i, sc in enumerate(cache.subsets):
        ds = params.deepsets[i]
        if ds is None:
            grad_h = grad_out[sc.owner]
            deepsets.append(None)
        else:
            gg = mlp_backward(sc.g_tape, grad_out)
            grad_pooled = gg.input_gradient
            if sc.f_tape is not None:
                gf = mlp_backward(sc.f_tape, grad_pooled[sc.owner])
                f_grad = ds.f.with_arrays(gf.arrays())
                grad_h = gf.input_gradient
            else:
                f_grad = ds.f.zeros_like()
                grad_h = np.zeros((0, d))
            deepsets.append(DeepSetParams(f_grad, ds.g.with_arrays(gg.arrays())))
        if sc.enc is None:
            enc = params.encoders[i]
            encoders.append(enc.with_arrays([np.zeros_like(a) for a in enc.arrays()]))
        else:
            encoders.append(encode_backward(sc.enc, grad_h))
    return GmanParams(encoders, deepsets)


def subset_repr(
    graphs: Sequence[Trajectory],
    i: int,
    params: GmanParams,
    partition: PartitionSpec,
) -> np.ndarray:
    """Representation of graph subset ``i`` from the graphs of one sample that belong to it."""
    members = set(partition.graph_subsets[i])
    for g in graphs:
        if g.channel_id not in members:
            raise RoutingError(f"channel {g.channel_id!r} does not belong to graph subset {i}")
    enc, ds = params.encoders[i], params.deepsets[i]
    d = partition.feature_dim
    if not graphs:
        h = np.zeros((0, d))
    else:
        h, _ = encode_forward(sorted(graphs, key=lambda g: g.channel_id), enc, partition.feature_subsets)
    if ds is None:
        if len(graphs) > 1:
            raise RoutingError(f"graph subset {i} holds a single channel but got {len(graphs)} graphs")
        return h[0] if len(graphs) else np.zeros(d)
    pooled = mlp_forward(ds.f, h)[0].sum(axis=0) if len(graphs) else np.zeros(d)
    return mlp_forward(ds.g, pooled)[0]


def subset_outputs(sample: TrajectorySet, params: GmanParams, partition: PartitionSpec) -> list[np.ndarray]:
    """Every subset's contribution vector for one sample."""
    _, cache = forward([sample], params, partition)
    return [o[0] for o in cache.outputs]


def gman_score(sample: TrajectorySet, params: GmanParams, partition: PartitionSpec) -> float:
    violations = validate_partition(partition, sample.feature_dim, sample.channels)
    if violations:
        raise ValidationError("partition does not fit sample: " + "; ".join(violations), violations)
    scores, _ = forward([sample], params, partition)
    return float(scores[0])


def score_batch(samples, params: GmanParams, partition: PartitionSpec, batch_size: int = 256) -> np.ndarray:
    """Scores for many samples, evaluated in fixed-order chunks."""
    out = [forward(samples[k : k + batch_size], params, partition)[0] for k in range(0, len(samples), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def set_xor_gadget(channels=("g1", "g2")) -> tuple[GmanParams, PartitionSpec]:
    """Hand-set model grouping two single-feature graphs, realizing their XOR.

    The encoder returns the feature unchanged (rho = 1, psi = id), f = id and
    ``g(s) = relu(s) - 2*relu(s - 1)``, which equals s*(2 - s) at s in {0, 1, 2}.
    """
    partition = PartitionSpec(((0,),), (tuple(channels),))
    enc = ExtGnanParams(constant_rho(1.0), [identity_psi(1)])
    f = identity_psi(1)
    g = mlp_from_arrays(MlpSpec(1, (2, 1), "relu"), [[[1.0], [1.0]], [[1.0, -2.0]]], [[0.0, -1.0], [0.0]])
    return GmanParams([enc], [DeepSetParams(f, g)]), partition


def feature_xor_gadget(channel: str = "x") -> tuple[GmanParams, PartitionSpec]:
    """Single-channel model with both features in one subset, scoring x1 XOR x2."""
    partition = PartitionSpec(((0, 1),), ((channel,),))
    return GmanParams([xor_gadget_params()], [None]), partition
