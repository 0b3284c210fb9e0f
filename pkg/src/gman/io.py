"""File formats: JSONL datasets, partition/config JSON, checkpoints, reports.

Dataset files hold one sample per line::

    {"set_id": "s0", "label": 1, "graphs": [{"channel": "a", "nodes": [{"t": 0.5, "x": [1.2]}]}]}

An optional first line ``{"_meta": {...}}`` carries generator metadata.
Checkpoints store every float as C99 hex text (``float.hex``) so a reload is
bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset, NormStats, PartitionSpec, Trajectory, TrajectorySet, ValidationError
from .extgnan import ExtGnanParams
from .mixer import DeepSetParams, GmanParams
from .nn import MlpParams, MlpSpec
from .training import TrainConfig

CHECKPOINT_VERSION = 1


class FormatError(ValidationError):
    pass


def _reject_constant(name: str):
    raise ValueError(f"non-finite literal {name} is not allowed")


def _loads(text: str):
    return json.loads(text, parse_constant=_reject_constant)


def _finite_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_sample(record: dict, where: str = "") -> TrajectorySet:
    loc = f"{where}: " if where else ""
    if not isinstance(record, dict):
        raise FormatError(f"{loc}expected a JSON object")
    for key in ("set_id", "graphs"):
        if key not in record:
            raise FormatError(f"{loc}missing field {key!r}")
    label = record.get("label")
    if label is not None and label not in (0, 1):
        raise FormatError(f"{loc}label must be 0, 1 or null, got {label!r}")
    graphs = record["graphs"]
    if not isinstance(graphs, list) or not graphs:
        raise FormatError(f"{loc}'graphs' must be a non-empty list")
    seen, trajs, dim = set(), [], None
    for g in graphs:
        ch = g.get("channel")
        if not isinstance(ch, str):
            raise FormatError(f"{loc}graph without a string 'channel'")
        if ch in seen:
            raise FormatError(f"{loc}duplicate channel {ch!r}")
        seen.add(ch)
        nodes = g.get("nodes")
        if not isinstance(nodes, list) or not nodes:
            raise FormatError(f"{loc}channel {ch!r} has no nodes")
        times, xs = [], []
        for n in nodes:
            t, x = n.get("t"), n.get("x")
            if not _finite_number(t):
                raise FormatError(f"{loc}channel {ch!r}: timestamp {t!r} is not a finite number")
            if not isinstance(x, list) or not x or not all(_finite_number(v) for v in x):
                raise FormatError(f"{loc}channel {ch!r}: feature vector {x!r} is not a list of finite numbers")
            if dim is None:
                dim = len(x)
            elif len(x) != dim:
                raise FormatError(f"{loc}channel {ch!r}: ragged feature vector (length {len(x)}, expected {dim})")
            times.append(float(t))
            xs.append([float(v) for v in x])
        trajs.append(Trajectory(ch, times, xs))
    try:
        return TrajectorySet(str(record["set_id"]), label, tuple(trajs))
    except ValidationError as exc:
        raise FormatError(f"{loc}{exc}") from None


def sample_to_record(s: TrajectorySet) -> dict:
    return {
        "set_id": s.set_id,
        "label": s.label,
        "graphs": [
            {"channel": g.channel_id, "nodes": [{"t": float(t), "x": [float(v) for v in x]} for t, x in g.nodes()]}
            for g in s.trajectories
        ],
    }


def load_dataset(path) -> Dataset:
    samples, meta = [], {}
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = _loads(line)
            except ValueError as exc:
                raise FormatError(f"{where}: {exc}") from None
            if isinstance(record, dict) and "_meta" in record:
                if samples:
                    raise FormatError(f"{where}: metadata header must be the first record")
                meta = record["_meta"]
                continue
            s = parse_sample(record, where)
            if s.set_id in seen_ids:
                raise FormatError(f"{where}: duplicate set_id {s.set_id!r}")
            seen_ids.add(s.set_id)
            samples.append(s)
    try:
        return Dataset(samples, meta=meta)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def dump_dataset(samples: Iterable[TrajectorySet], path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for s in samples:
            fh.write(json.dumps(sample_to_record(s)) + "\n")


def load_partition(path) -> PartitionSpec:
    try:
        d = _loads(Path(path).read_text(encoding="utf-8"))
        return PartitionSpec.from_dict(d)
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: cannot read partition: {exc}") from None


def save_partition(partition: PartitionSpec, path) -> None:
    Path(path).write_text(json.dumps(partition.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_config(path) -> TrainConfig:
    try:
        d = _loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValidationError) as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- checkpoints --------------------------------------------------------------


def _enc_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in np.asarray(a, dtype=np.float64).reshape(-1)]}


def _dec_array(d: dict) -> np.ndarray:
    return np.array([float.fromhex(v) for v in d["hex"]], dtype=np.float64).reshape(d["shape"])


def _enc_net(p: MlpParams) -> dict:
    return {
        "spec": p.spec.to_dict(),
        "weights": [_enc_array(w) for w in p.weights],
        "biases": [_enc_array(b) for b in p.biases],
    }


def _dec_net(d: dict) -> MlpParams:
    return MlpParams(
        MlpSpec.from_dict(d["spec"]),
        [_dec_array(w) for w in d["weights"]],
        [_dec_array(b) for b in d["biases"]],
    )


@dataclass
class Checkpoint:
    params: GmanParams
    partition: PartitionSpec
    config: TrainConfig | None = None
    stats: NormStats | None = None


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    subsets = []
    for enc, ds in zip(ckpt.params.encoders, ckpt.params.deepsets):
        subsets.append(
            {
                "encoder": {"rho": _enc_net(enc.rho), "psi": [_enc_net(p) for p in enc.psi]},
                "deepset": None if ds is None else {"f": _enc_net(ds.f), "g": _enc_net(ds.g)},
            }
        )
    return {
        "format_version": CHECKPOINT_VERSION,
        "partition": ckpt.partition.to_dict(),
        "subsets": subsets,
        "config": None if ckpt.config is None else ckpt.config.to_dict(),
        "normalization": None
        if ckpt.stats is None
        else {"mean": _enc_array(ckpt.stats.mean), "std": _enc_array(ckpt.stats.std)},
    }


def checkpoint_from_dict(d: dict) -> Checkpoint:
    version = d.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint format_version {version!r} is not supported (expected {CHECKPOINT_VERSION})")
    partition = PartitionSpec.from_dict(d["partition"])
    encoders, deepsets = [], []
    for s in d["subsets"]:
        e = s["encoder"]
        encoders.append(ExtGnanParams(_dec_net(e["rho"]), [_dec_net(p) for p in e["psi"]]))
        ds = s["deepset"]
        deepsets.append(None if ds is None else DeepSetParams(_dec_net(ds["f"]), _dec_net(ds["g"])))
    params = GmanParams(encoders, deepsets)
    params.check(partition)
    cfg = None if d.get("config") is None else TrainConfig.from_dict(d["config"])
    norm = d.get("normalization")
    stats = None if norm is None else NormStats(_dec_array(norm["mean"]), _dec_array(norm["std"]))
    return Checkpoint(params, partition, cfg, stats)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_to_dict(ckpt)) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    try:
        d = _loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    try:
        return checkpoint_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None


# -- reports ------------------------------------------------------------------


def report_svg(report: dict) -> str:
    """Horizontal bar chart of graph totals and set contributions."""
    bars = [(g["channel_id"], g["total"]) for g in report["graphs"]]
    bars += [("{" + ",".join(s["channels"]) + "}", s["total"]) for s in report["sets"]]
    row, label_w, half = 22, 140, 200
    height = row * (len(bars) + 2)
    scale = max([abs(v) for _, v in bars] + [1e-12])
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{label_w + 2 * half + 80}" height="{height}">',
        f'<text x="4" y="16" font-family="monospace" font-size="12">'
        f'{_xml(report["set_id"])}: score {report["raw_score"]:.4g}</text>',
        f'<line x1="{label_w + half}" y1="{row}" x2="{label_w + half}" y2="{height}" stroke="#444"/>',
    ]
    for k, (name, v) in enumerate(bars):
        y = row * (k + 1) + 4
        w = half * abs(v) / scale
        x = label_w + half - (w if v < 0 else 0)
        color = "#c0392b" if v < 0 else "#2471a3"
        lines.append(f'<text x="4" y="{y + 13}" font-family="monospace" font-size="12">{_xml(name)}</text>')
        lines.append(f'<rect x="{x:.2f}" y="{y}" width="{w:.2f}" height="{row - 6}" fill="{color}"/>')
        lines.append(
            f'<text x="{label_w + 2 * half + 4}" y="{y + 13}" font-family="monospace" font-size="12">{v:.4g}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _xml(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
