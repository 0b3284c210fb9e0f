"""Synthetic datasets: the two XOR truth tables and a sparse multi-channel task."""

from __future__ import annotations

import numpy as np

from .data import Trajectory, TrajectorySet, ValidationError

BINARY_PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))

SPARSE_TRAJ_RULE = (
    "label = 1 iff mean(a) * mean(b) > 0, where mean(c) is the average of channel c's "
    "observed values; noise channels n0, n1, ... carry no label information"
)


def feature_xor() -> tuple[list[TrajectorySet], dict]:
    """Four single-node samples on channel 'x' with features (x1, x2); label x1 XOR x2."""
    samples = [
        TrajectorySet(f"fx{x1}{x2}", x1 ^ x2, (Trajectory("x", [0.0], [[float(x1), float(x2)]]),))
        for x1, x2 in BINARY_PAIRS
    ]
    return samples, {"task": "feature_xor", "rule": "label = x1 XOR x2 on a single node"}


def set_xor() -> tuple[list[TrajectorySet], dict]:
    """Four samples with single-node graphs 'g1', 'g2' carrying one binary feature each."""
    samples = [
        TrajectorySet(
            f"sx{x1}{x2}",
            x1 ^ x2,
            (Trajectory("g1", [0.0], [[float(x1)]]), Trajectory("g2", [0.0], [[float(x2)]])),
        )
        for x1, x2 in BINARY_PAIRS
    ]
    return samples, {"task": "set_xor", "rule": "label = x(g1) XOR x(g2)"}


def sparse_traj(
    n_samples: int = 1000,
    seed: int = 0,
    n_noise_channels: int = 1,
    max_nodes: int = 8,
    observe_rate: float = 0.5,
    missing_rate: float = 0.3,
    noise_sd: float = 0.5,
    horizon: float = 1.0,
) -> tuple[list[TrajectorySet], dict]:
    """Irregularly sampled channels where the label couples channels 'a' and 'b'.

    Each of 'a' and 'b' has a latent level of random sign and magnitude in
    [0.5, 1.5]; its observations are the level plus Gaussian noise at
    ``Binomial(max_nodes, observe_rate)`` (at least one) uniform times in
    [0, horizon]. Noise channels are pure noise and are dropped from a sample
    with probability ``missing_rate``. The label is a sign product of the two
    channel averages, which no sum of per-channel terms can represent.
    """
    if n_samples < 1 or max_nodes < 1 or n_noise_channels < 0:
        raise ValidationError("n_samples and max_nodes must be positive, n_noise_channels non-negative")
    if not (0.0 < observe_rate <= 1.0 and 0.0 <= missing_rate < 1.0 and noise_sd >= 0.0 and horizon > 0.0):
        raise ValidationError("observe_rate must be in (0, 1], missing_rate in [0, 1), noise_sd >= 0, horizon > 0")
    rng = np.random.default_rng(seed)
    width = len(str(n_samples - 1))

    def channel(name: str, level: float) -> Trajectory:
        n = max(1, int(rng.binomial(max_nodes, observe_rate)))
        t = np.sort(rng.uniform(0.0, horizon, n))
        x = level + noise_sd * rng.standard_normal(n)
        return Trajectory(name, t, x[:, None])

    samples = []
    for k in range(n_samples):
        levels = rng.choice([-1.0, 1.0], size=2) * rng.uniform(0.5, 1.5, size=2)
        a, b = channel("a", levels[0]), channel("b", levels[1])
        trajs = [a, b]
        for c in range(n_noise_channels):
            if rng.uniform() >= missing_rate:
                trajs.append(channel(f"n{c}", 0.0))
        label = int(a.features.mean() * b.features.mean() > 0.0)
        samples.append(TrajectorySet(f"s{k:0{width}d}", label, tuple(trajs)))
    meta = {
        "task": "sparse_traj",
        "rule": SPARSE_TRAJ_RULE,
        "options": {
            "n_samples": n_samples,
            "seed": seed,
            "n_noise_channels": n_noise_channels,
            "max_nodes": max_nodes,
            "observe_rate": observe_rate,
            "missing_rate": missing_rate,
            "noise_sd": noise_sd,
            "horizon": horizon,
        },
    }
    return samples, meta


TASKS = {"feature_xor": feature_xor, "set_xor": set_xor, "sparse_traj": sparse_traj}
