"""``gman`` command line: synth, train, predict, explain, eval, gradcheck.

Failures print one line ``error[<kind>]: <message>`` to stderr and exit with
a kind-specific code. ``GMAN_OUT_DIR`` overrides the output directory of
commands that write files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .data import Dataset, ValidationError, normalize, validate_partition
from .gradcheck import run_suite
from .interpret import IneligibleAttributionError, build_report, node_contributions
from .mixer import RoutingError, forward, predict_proba
from .nn import ShapeError
from .synth import TASKS
from .training import TrainConfig, TrainingDiverged, UndefinedMetricError, accuracy, auroc, evaluate, fit

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int, details: list[str] | None = None):
        super().__init__(message)
        self.kind, self.code, self.details = kind, code, details or []


def _out_dir(arg: str | None) -> Path:
    base = os.environ.get("GMAN_OUT_DIR") or arg or "."
    p = Path(base)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _out_file(arg: str | None, default_name: str) -> Path:
    """Output path; with GMAN_OUT_DIR set only the file name of ``arg`` is kept."""
    name = Path(arg).name if arg else default_name
    env = os.environ.get("GMAN_OUT_DIR")
    if env:
        return _out_dir(env) / name
    if arg:
        Path(arg).parent.mkdir(parents=True, exist_ok=True)
        return Path(arg)
    return Path(default_name)


def _write(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _apply_stats(ds: Dataset, stats) -> Dataset:
    if stats is None:
        return ds
    if len(stats.mean) != ds.feature_dim:
        raise CliError("validation", f"checkpoint expects {len(stats.mean)} features, data has {ds.feature_dim}", EXIT_VALIDATION)
    return normalize(ds, stats)


def cmd_synth(args) -> int:
    task = TASKS[args.task]
    if args.task == "sparse_traj":
        samples, meta = task(
            n_samples=args.n_samples,
            seed=args.seed,
            n_noise_channels=args.noise_channels,
            max_nodes=args.max_nodes,
            observe_rate=args.observe_rate,
            missing_rate=args.missing_rate,
            noise_sd=args.noise_sd,
        )
    else:
        samples, meta = task()
    path = _out_file(args.out, f"{args.task}.jsonl")
    io.dump_dataset(samples, path, meta)
    print(f"wrote {len(samples)} samples to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    train = io.load_dataset(args.dataset)
    partition = io.load_partition(args.partition)
    config = io.load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    val = io.load_dataset(args.val) if args.val else None
    if len(train) == 0:
        raise CliError("validation", f"{args.dataset}: dataset is empty", EXIT_VALIDATION)
    channels = train.channels | (val.channels if val else set())
    violations = validate_partition(partition, train.feature_dim, channels)
    if violations:
        raise CliError("validation", f"{args.partition}: invalid partition", EXIT_VALIDATION, violations)
    if val is None and config.val_fraction > 0:
        train, val = train.split(config.val_fraction, config.seed)
    stats = None
    if config.normalize:
        train = normalize(train)
        stats = train.stats
        if val is not None:
            val = normalize(val, stats)
    out = _out_dir(args.out)
    try:
        result = fit(train, val, partition, config)
    except TrainingDiverged as exc:
        io.save_checkpoint(io.Checkpoint(exc.params, partition, config, stats), out / "checkpoint_last_good.json")
        _write(out / "train_log.jsonl", [json.dumps(r, sort_keys=True) for r in exc.records])
        raise CliError("diverged", str(exc), EXIT_DIVERGED) from None
    io.save_checkpoint(io.Checkpoint(result.params, partition, config, stats), out / "checkpoint.json")
    final = evaluate(train.samples, result.params, partition)
    summary = {
        "final": True,
        "best_epoch": result.best_epoch,
        "best_val_metric": result.best_metric,
        "train_loss": final["loss"],
        "train_accuracy": final["accuracy"],
    }
    if val is not None:
        v = evaluate(val.samples, result.params, partition)
        summary.update(val_loss=v["loss"], val_accuracy=v["accuracy"], val_auroc=v["auroc"])
    _write(out / "train_log.jsonl", result.log_lines() + [json.dumps(summary, sort_keys=True)])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _predict_records(ckpt: io.Checkpoint, ds: Dataset) -> list[dict]:
    records = []
    covered = {c for s in ckpt.partition.graph_subsets for c in s}
    d = ckpt.partition.feature_dim
    if len(ds) and ds.feature_dim != d:
        raise CliError("validation", f"dataset has {ds.feature_dim} features, checkpoint expects {d}", EXIT_VALIDATION)
    ds = _apply_stats(ds, ckpt.stats) if len(ds) else ds
    ok = []
    for s in ds.samples:
        unknown = sorted(set(s.channels) - covered)
        if unknown:
            records.append({"set_id": s.set_id, "skipped": True, "reason": f"unknown channels {unknown}"})
        else:
            ok.append(s)
            records.append(None)
    scores = np.concatenate([forward(ok[k : k + 256], ckpt.params, ckpt.partition)[0] for k in range(0, len(ok), 256)]) if ok else []
    it = iter(zip(ok, scores))
    for i, r in enumerate(records):
        if r is None:
            s, score = next(it)
            p = predict_proba(float(score))
            records[i] = {"set_id": s.set_id, "score": float(score), "probability": p, "predicted_label": int(p >= 0.5)}
    return records


def cmd_predict(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    ds = io.load_dataset(args.dataset)
    records = _predict_records(ckpt, ds)
    records.sort(key=lambda r: r["set_id"])
    path = _out_file(args.out, "predictions.jsonl")
    _write(path, [json.dumps(r, sort_keys=True) for r in records])
    skipped = sum(1 for r in records if r.get("skipped"))
    print(f"wrote {len(records)} predictions ({skipped} skipped) to {path}")
    return EXIT_OK


def cmd_explain(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    ds = _apply_stats(io.load_dataset(args.dataset), ckpt.stats)
    matches = [s for s in ds.samples if s.set_id == args.sample]
    if not matches:
        raise CliError("validation", f"sample {args.sample!r} not found in {args.dataset}", EXIT_VALIDATION)
    sample = matches[0]
    if args.channel:
        node_contributions(sample, args.channel, ckpt.params, ckpt.partition)
    report = build_report(sample, ckpt.params, ckpt.partition).to_dict()
    path = _out_file(args.out, f"explain_{sample.set_id}.json")
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote report to {path} (residual {report['completeness_residual']:.3g})")
    if args.svg is not None:
        svg_path = _out_file(args.svg, path.name) if args.svg else path.with_suffix(".svg")
        svg_path.write_text(io.report_svg(report), encoding="utf-8")
        print(f"wrote chart to {svg_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    ds = io.load_dataset(args.dataset)
    records = [r for r in _predict_records(ckpt, ds) if not r.get("skipped")]
    labels_by_id = {s.set_id: s.label for s in ds.samples}
    if any(labels_by_id[r["set_id"]] is None for r in records):
        raise CliError("validation", "evaluation needs labels on every sample", EXIT_VALIDATION)
    if not records:
        raise CliError("validation", "no scorable samples", EXIT_VALIDATION)
    scores = [r["score"] for r in records]
    labels = [labels_by_id[r["set_id"]] for r in records]
    out = {"n_samples": len(records)}
    if args.metric in ("accuracy", "all"):
        out["accuracy"] = accuracy(predict_proba(np.array(scores)), labels)
    if args.metric in ("auroc", "all"):
        try:
            out["auroc"] = auroc(scores, labels)
        except UndefinedMetricError as exc:
            raise CliError("metric", str(exc), EXIT_VALIDATION) from None
    if args.json:
        print(json.dumps(out, sort_keys=True))
    else:
        for k, v in out.items():
            if k != "n_samples":
                print(f"{k}: {v:.6f} (n={out['n_samples']})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errs = run_suite(args.n_models, args.seed, args.h)
    worst = max(errs)
    ok = worst <= args.tol
    if args.json:
        print(json.dumps({"n_models": len(errs), "max_relative_error": worst, "tol": args.tol, "passed": ok}))
    else:
        for k, e in enumerate(errs):
            print(f"model {args.seed + k}: max relative error {e:.3e}")
        print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} (tol {args.tol:g})")
    if not ok:
        raise CliError("gradcheck", f"max relative error {worst:.3e} exceeds {args.tol:g}", EXIT_GRADCHECK)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gman", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("task", choices=sorted(TASKS))
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-samples", type=int, default=1000)
    s.add_argument("--noise-channels", type=int, default=1)
    s.add_argument("--max-nodes", type=int, default=8)
    s.add_argument("--observe-rate", type=float, default=0.5)
    s.add_argument("--missing-rate", type=float, default=0.3)
    s.add_argument("--noise-sd", type=float, default=0.5)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="fit a model")
    s.add_argument("dataset")
    s.add_argument("--partition", required=True)
    s.add_argument("--config")
    s.add_argument("--val", help="validation dataset (default: split by config.val_fraction)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("predict", help="score a dataset")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("explain", help="attribution report for one sample")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--sample", required=True)
    s.add_argument("--channel", help="also require node-level attribution for this channel")
    s.add_argument("--out")
    s.add_argument("--svg", nargs="?", const="", default=None, help="also write a bar chart (default: next to the report)")
    s.set_defaults(fn=cmd_explain)

    s = sub.add_parser("eval", help="compute metrics")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--metric", choices=["accuracy", "auroc", "all"], default="all")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    s.add_argument("--n-models", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        err = exc
    except IneligibleAttributionError as exc:
        err = CliError("ineligible", str(exc), EXIT_VALIDATION)
    except (RoutingError, ShapeError, ValidationError) as exc:
        err = CliError("validation", str(exc), EXIT_VALIDATION, getattr(exc, "violations", []))
    except OSError as exc:
        err = CliError("io", str(exc), EXIT_ERROR)
    print(f"error[{err.kind}]: {err}", file=sys.stderr)
    for v in err.details:
        print(f"  - {v}", file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
