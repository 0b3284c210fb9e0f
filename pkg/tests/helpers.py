"""Shared builders for randomized test inputs and the acceptance summary."""

from gman import PartitionSpec, Trajectory, TrajectorySet

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def random_sample(rng, channels, d, max_nodes=4, set_id="r", label=None, times=None) -> TrajectorySet:
    trajs = []
    for c in channels:
        n = int(rng.integers(1, max_nodes + 1))
        t = rng.uniform(0.0, 3.0, n) if times is None else times(rng, n)
        trajs.append(Trajectory(c, t, rng.standard_normal((n, d))))
    return TrajectorySet(set_id, label, tuple(trajs))


def random_partition(rng, d, channels) -> PartitionSpec:
    def groups(items):
        labels = rng.integers(0, len(items), size=len(items))
        return tuple(tuple(it for it, lab in zip(items, labels) if lab == g) for g in sorted(set(labels)))

    return PartitionSpec(groups(list(range(d))), groups(list(channels)))
