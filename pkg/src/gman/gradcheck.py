"""Finite-difference check of end-to-end model gradients on random toy problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PartitionSpec, Trajectory, TrajectorySet
from .mixer import GmanParams, init_gman
from .training import backward_sample

# denominators below this are FD round-off territory (eps * |loss| / h)
REL_FLOOR = 1e-5


@dataclass
class ToyProblem:
    sample: TrajectorySet
    params: GmanParams
    partition: PartitionSpec


def _random_groups(rng, items: list, max_groups: int | None = None) -> tuple[tuple, ...]:
    labels = rng.integers(0, max_groups or len(items), size=len(items))
    groups = [tuple(it for it, lab in zip(items, labels) if lab == g) for g in sorted(set(labels))]
    return tuple(groups)


def toy_problem(seed: int, max_channels: int = 3, max_nodes: int = 4, max_dim: int = 3, width: int = 5) -> ToyProblem:
    """Random partition, random model (all parameters perturbed) and one random labelled sample."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, max_channels + 1))
    channels = [f"c{i}" for i in range(m)]
    partition = PartitionSpec(_random_groups(rng, list(range(d))), _random_groups(rng, channels))
    params = init_gman(partition, seed, hidden_width=width, n_hidden=2)
    params = params.with_arrays([a + rng.uniform(-0.5, 0.5, a.shape) for a in params.arrays()])
    trajs = []
    for c in channels:
        n = int(rng.integers(1, max_nodes + 1))
        trajs.append(Trajectory(c, rng.uniform(0.0, 2.0, n), rng.standard_normal((n, d))))
    sample = TrajectorySet(f"toy{seed}", int(rng.integers(0, 2)), tuple(trajs))
    return ToyProblem(sample, params, partition)


def numeric_grads(sample, params: GmanParams, partition: PartitionSpec, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the sample's BCE loss over every parameter entry."""
    arrays = [a.copy() for a in params.arrays()]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = backward_sample(sample, params.with_arrays(arrays), partition)
            flat[i] = orig - h
            lm, _ = backward_sample(sample, params.with_arrays(arrays), partition)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check(problem: ToyProblem, h: float = 1e-5) -> float:
    _, grads = backward_sample(problem.sample, problem.params, problem.partition)
    numeric = numeric_grads(problem.sample, problem.params, problem.partition, h)
    return max_relative_error(grads.arrays(), numeric)


def run_suite(n_models: int = 20, seed: int = 0, h: float = 1e-5) -> list[float]:
    return [check(toy_problem(seed + k), h) for k in range(n_models)]
