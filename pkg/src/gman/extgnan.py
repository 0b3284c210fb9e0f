"""ExtGNAN encoder.

For a trajectory with nodes (t_w, x_w) and feature subsets F_1..F_K, the
representation of node j is, block by block,

    [h_j]_{F_l} = sum_w rho(t_w - t_j) * psi_l(x_w[F_l])

and the graph representation is the sum of node representations. Blocks are
laid out in partition order. ``rho`` is one scalar network per encoder,
shared by every feature subset; the w == j term is included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PartitionSpec, Trajectory
from .nn import MlpParams, MlpSpec, ShapeError, mlp_backward, mlp_forward, mlp_from_arrays, mlp_init


@dataclass
class ExtGnanParams:
    rho: MlpParams
    psi: list[MlpParams]

    def __post_init__(self):
        if self.rho.spec.input_dim != 1 or self.rho.spec.output_dim != 1:
            raise ShapeError("rho must map R -> R")
        for l, p in enumerate(self.psi):
            if p.spec.input_dim != p.spec.output_dim:
                raise ShapeError(f"psi[{l}] must map R^|F| -> R^|F|")

    def networks(self) -> list[MlpParams]:
        return [self.rho, *self.psi]

    def arrays(self) -> list[np.ndarray]:
        return [a for net in self.networks() for a in net.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ExtGnanParams":
        nets, pos = [], 0
        for net in self.networks():
            n = len(net.arrays())
            nets.append(net.with_arrays(arrays[pos : pos + n]))
            pos += n
        return ExtGnanParams(nets[0], nets[1:])

    def check(self, feature_subsets) -> None:
        if len(self.psi) != len(feature_subsets):
            raise ShapeError(f"{len(self.psi)} shape networks for {len(feature_subsets)} feature subsets")
        for l, (p, s) in enumerate(zip(self.psi, feature_subsets)):
            if p.spec.input_dim != len(s):
                raise ShapeError(f"psi[{l}] takes {p.spec.input_dim} features but subset {l} has {len(s)}")


def init_extgnan(
    feature_subsets,
    seeds: Sequence[int],
    hidden_width: int = 32,
    n_hidden: int = 3,
    activation: str = "relu",
) -> ExtGnanParams:
    """Fresh encoder; ``seeds`` needs one entry per network (rho first).

    rho's output bias starts at 1 so that rho(0) = 1: with all-zero biases a
    relu network maps 0 to exactly 0 with every unit at its kink, which would
    zero every single-node graph and stall learning downstream.
    """
    hidden = (hidden_width,) * n_hidden
    rho = mlp_init(MlpSpec(1, hidden + (1,), activation, int(seeds[0])))
    rho.biases[-1][:] = 1.0
    psi = [
        mlp_init(MlpSpec(len(s), hidden + (len(s),), activation, int(seeds[1 + l])))
        for l, s in enumerate(feature_subsets)
    ]
    return ExtGnanParams(rho, psi)


def _shape_values(x: np.ndarray, params: ExtGnanParams, feature_subsets):
    """psi outputs for every node, blocks in partition order, plus tapes."""
    out = np.empty((x.shape[0], sum(len(s) for s in feature_subsets)))
    tapes, start = [], 0
    for net, subset in zip(params.psi, feature_subsets):
        y, tape = mlp_forward(net, x[:, list(subset)])
        out[:, start : start + len(subset)] = y
        tapes.append(tape)
        start += len(subset)
    return out, tapes


def distance_weights(g: Trajectory, params: ExtGnanParams) -> np.ndarray:
    """Matrix R with R[j, w] = rho(t_w - t_j)."""
    delta = g.times[None, :] - g.times[:, None]
    r, _ = mlp_forward(params.rho, delta.reshape(-1, 1))
    return r.reshape(delta.shape)


def node_reprs(g: Trajectory, params: ExtGnanParams, partition: PartitionSpec) -> np.ndarray:
    """Representations of all nodes of ``g``, shape (n, d)."""
    params.check(partition.feature_subsets)
    psi, _ = _shape_values(g.features, params, partition.feature_subsets)
    return distance_weights(g, params) @ psi


def node_repr(g: Trajectory, j: int, params: ExtGnanParams, partition: PartitionSpec) -> np.ndarray:
    if not 0 <= j < g.n_nodes:
        raise IndexError(f"node index {j} out of range for trajectory with {g.n_nodes} nodes")
    return node_reprs(g, params, partition)[j]


def graph_repr(g: Trajectory, params: ExtGnanParams, partition: PartitionSpec) -> np.ndarray:
    h, _ = encode_forward([g], params, partition.feature_subsets)
    return h[0]


@dataclass
class GraphBatch:
    """Nodes and ordered node pairs of several trajectories, flattened."""

    x: np.ndarray  # (N, d) node features
    pair_delta: np.ndarray  # (P,) t_w - t_j
    pair_w: np.ndarray  # (P,) global index of node w
    starts: np.ndarray  # (G,) first node of each graph
    node_graph: np.ndarray  # (N,)

    @property
    def n_graphs(self) -> int:
        return self.starts.size

    @classmethod
    def build(cls, graphs: Sequence[Trajectory]) -> "GraphBatch":
        xs, deltas, ws, starts, owner = [], [], [], [], []
        offset = 0
        for gi, g in enumerate(graphs):
            n = g.n_nodes
            xs.append(g.features)
            # pair (j, w) in row-major order: j outer, w inner
            deltas.append((g.times[None, :] - g.times[:, None]).reshape(-1))
            ws.append(np.tile(np.arange(n), n) + offset)
            starts.append(offset)
            owner.append(np.full(n, gi))
            offset += n
        return cls(
            np.concatenate(xs, axis=0),
            np.concatenate(deltas),
            np.concatenate(ws),
            np.array(starts, dtype=np.intp),
            np.concatenate(owner),
        )


@dataclass
class EncodeCache:
    batch: GraphBatch
    params: ExtGnanParams
    feature_subsets: tuple
    rho_tape: object
    psi_tapes: list
    psi: np.ndarray
    weight: np.ndarray


def encode_forward(graphs, params: ExtGnanParams, feature_subsets) -> tuple[np.ndarray, EncodeCache]:
    """Graph representations (G, d) for a list of trajectories or a prebuilt GraphBatch."""
    params.check(feature_subsets)
    batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.build(graphs)
    r, rho_tape = mlp_forward(params.rho, batch.pair_delta[:, None])
    # total weight each source node w receives: sum_j rho(t_w - t_j)
    weight = np.bincount(batch.pair_w, weights=r[:, 0], minlength=batch.x.shape[0])
    psi, psi_tapes = _shape_values(batch.x, params, feature_subsets)
    h = np.add.reduceat(weight[:, None] * psi, batch.starts, axis=0)
    return h, EncodeCache(batch, params, tuple(feature_subsets), rho_tape, psi_tapes, psi, weight)


def encode_backward(cache: EncodeCache, grad_h: np.ndarray) -> ExtGnanParams:
    """Gradients of ``sum(h * grad_h)`` w.r.t. the encoder parameters."""
    b = cache.batch
    up = grad_h[b.node_graph]  # (N, d)
    grad_psi = cache.weight[:, None] * up
    grad_weight = np.einsum("nd,nd->n", up, cache.psi)
    grad_r = grad_weight[b.pair_w][:, None]
    rho_grad = mlp_backward(cache.rho_tape, grad_r)
    rho = cache.params.rho.with_arrays(rho_grad.arrays())
    psi, start = [], 0
    for net, tape, subset in zip(cache.params.psi, cache.psi_tapes, cache.feature_subsets):
        g = mlp_backward(tape, grad_psi[:, start : start + len(subset)])
        psi.append(net.with_arrays(g.arrays()))
        start += len(subset)
    return ExtGnanParams(rho, psi)


def constant_rho(value: float = 1.0) -> MlpParams:
    """rho(delta) = value for every delta."""
    return mlp_from_arrays(MlpSpec(1, (1,), "identity"), [[[0.0]]], [[value]])


def identity_rho() -> MlpParams:
    """rho(delta) = delta."""
    return mlp_from_arrays(MlpSpec(1, (1,), "identity"), [[[1.0]]], [[0.0]])


def identity_psi(size: int) -> MlpParams:
    return mlp_from_arrays(MlpSpec(size, (size,), "identity"), [np.eye(size)], [np.zeros(size)])


def xor_gadget_params() -> ExtGnanParams:
    """Encoder for d=2 with one feature subset {0, 1} computing XOR.

    On binary inputs x1*x2 == relu(x1 + x2 - 1), so the shape network
    ``relu(x1) + relu(x2) - 2*relu(x1 + x2 - 1)`` equals x1 + x2 - 2*x1*x2
    exactly on {0,1}^2. Its second output is held at zero, so the entry sum
    of the node representation is the XOR value. rho is the constant 1.
    """
    psi = mlp_from_arrays(
        MlpSpec(2, (3, 2), "relu"),
        [[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [[1.0, 1.0, -2.0], [0.0, 0.0, 0.0]]],
        [[0.0, 0.0, -1.0], [0.0, 0.0]],
    )
    return ExtGnanParams(constant_rho(1.0), [psi])
