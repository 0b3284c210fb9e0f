"""Score-space attributions.

Graphs that sit alone in their subset are scored additively, so each of
their nodes gets a contribution (the entry sum of its representation) and the
graph total is the sum over nodes. Graphs mixed through a DeepSet only get a
subset-level contribution. Everything lives in pre-link score space, and the
contributions add up to the raw score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PartitionSpec, TrajectorySet, ValidationError
from .extgnan import _shape_values, distance_weights, node_reprs
from .mixer import GmanParams, forward, gman_score, predict_proba


class IneligibleAttributionError(ValidationError):
    """Node- or graph-level attribution requested for a graph mixed non-linearly."""


def _singleton_graph(sample: TrajectorySet, channel_id: str, partition: PartitionSpec):
    try:
        i = partition.subset_of(channel_id)
    except KeyError:
        raise ValidationError(f"channel {channel_id!r} is not in any graph subset") from None
    if partition.is_multi(i):
        raise IneligibleAttributionError(
            f"channel {channel_id!r} belongs to graph subset {i} {list(partition.graph_subsets[i])}, "
            "which is mixed by a DeepSet; only set_contribution is available for it"
        )
    g = sample.get(channel_id)
    if g is None:
        raise ValidationError(f"sample {sample.set_id!r} has no channel {channel_id!r}")
    return i, g


def node_contributions(sample: TrajectorySet, channel_id: str, params: GmanParams, partition: PartitionSpec) -> np.ndarray:
    """Contribution of every node of one singleton-subset graph, in canonical node order."""
    i, g = _singleton_graph(sample, channel_id, partition)
    return node_reprs(g, params.encoders[i], partition).sum(axis=1)


def node_contribution(sample, channel_id: str, j: int, params: GmanParams, partition: PartitionSpec) -> float:
    c = node_contributions(sample, channel_id, params, partition)
    if not 0 <= j < c.size:
        raise IndexError(f"node index {j} out of range for {c.size} nodes")
    return float(c[j])


def graph_contribution(sample, channel_id: str, params: GmanParams, partition: PartitionSpec) -> float:
    return float(node_contributions(sample, channel_id, params, partition).sum())


def source_contributions(sample, channel_id: str, params: GmanParams, partition: PartitionSpec) -> np.ndarray:
    """Extension: credit each node w for what it sends, sum_j rho(t_w - t_j) * sum(psi(x_w)).

    This is the transposed view of :func:`node_contributions`; both sum to
    the same graph total.
    """
    i, g = _singleton_graph(sample, channel_id, partition)
    enc = params.encoders[i]
    psi, _ = _shape_values(g.features, enc, partition.feature_subsets)
    return distance_weights(g, enc).sum(axis=0) * psi.sum(axis=1)


def set_contribution(sample: TrajectorySet, i: int, params: GmanParams, partition: PartitionSpec) -> float:
    if not 0 <= i < len(partition.graph_subsets):
        raise IndexError(f"graph subset {i} does not exist")
    if not partition.is_multi(i):
        raise IneligibleAttributionError(
            f"graph subset {i} holds a single channel; use graph_contribution for "
            f"{partition.graph_subsets[i][0]!r} instead"
        )
    _, cache = forward([sample], params, partition)
    return float(cache.outputs[i][0].sum())


@dataclass
class GraphAttribution:
    channel_id: str
    subset: int
    times: list[float]
    node_contributions: list[float]
    source_contributions: list[float]
    total: float


@dataclass
class SetAttribution:
    subset: int
    channels: list[str]
    present: list[str]
    total: float


@dataclass
class AttributionReport:
    set_id: str
    raw_score: float
    probability: float
    graphs: list[GraphAttribution] = field(default_factory=list)
    sets: list[SetAttribution] = field(default_factory=list)
    completeness_residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "set_id": self.set_id,
            "raw_score": self.raw_score,
            "probability": self.probability,
            "completeness_residual": self.completeness_residual,
            "graphs": [vars(g) for g in self.graphs],
            "sets": [vars(s) for s in self.sets],
        }


def build_report(sample: TrajectorySet, params: GmanParams, partition: PartitionSpec) -> AttributionReport:
    raw = gman_score(sample, params, partition)
    report = AttributionReport(sample.set_id, raw, predict_proba(raw))
    total = 0.0
    for i, channels in enumerate(partition.graph_subsets):
        if partition.is_multi(i):
            present = [c for c in channels if sample.get(c) is not None]
            c = set_contribution(sample, i, params, partition)
            report.sets.append(SetAttribution(i, list(channels), present, c))
            total += c
            continue
        g = sample.get(channels[0])
        if g is None:
            continue
        nodes = node_contributions(sample, g.channel_id, params, partition)
        src = source_contributions(sample, g.channel_id, params, partition)
        ga = GraphAttribution(g.channel_id, i, g.times.tolist(), nodes.tolist(), src.tolist(), float(nodes.sum()))
        report.graphs.append(ga)
        total += ga.total
    report.completeness_residual = abs(raw - total)
    return report
