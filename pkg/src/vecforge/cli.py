"""Command-line surface: toy training, fusion, forgetting, and evaluation.

Exit codes are a stable scripting contract: 0 success, 2 usage/invalid
arguments, 3 I/O failure, 4 architecture/compatibility error, 5 numeric
error.  Every command writes a JSON run manifest beside its outputs; outputs
themselves are byte-deterministic given identical inputs, flags, and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__, importance, masking, merge, store, toynn
from .errors import (
    AlreadyNormalized,
    BaseMismatch,
    CorruptHeader,
    DtypeMismatch,
    EmptyBatch,
    EmptyInput,
    EmptyLayer,
    EmptyTensor,
    InvalidHyper,
    InvalidMask,
    InvalidMeta,
    InvalidP,
    InvalidRate,
    InvalidSpec,
    IoFailure,
    NonFiniteValue,
    NotNormalized,
    OffsetOverlap,
    SchemaMismatch,
    ShapeMismatch,
    TooFewTasks,
    TruncatedPayload,
    VecforgeError,
)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_COMPAT = 4
EXIT_NUMERIC = 5

_USAGE_ERRORS = (
    InvalidSpec,
    InvalidHyper,
    InvalidP,
    InvalidRate,
    InvalidMeta,
    InvalidMask,
    TooFewTasks,
    EmptyInput,
    EmptyBatch,
    EmptyTensor,
    EmptyLayer,
)
_IO_ERRORS = (IoFailure, CorruptHeader, TruncatedPayload, OffsetOverlap)
_COMPAT_ERRORS = (
    SchemaMismatch,
    BaseMismatch,
    DtypeMismatch,
    ShapeMismatch,
    NotNormalized,
    AlreadyNormalized,
)

METRIC_FLAGS = {"LP": "lp", "Amp": "amp", "Mixed": "mixed"}


def _classify(exc: Exception) -> int:
    if isinstance(exc, _USAGE_ERRORS):
        return EXIT_USAGE
    if isinstance(exc, _IO_ERRORS):
        return EXIT_IO
    if isinstance(exc, _COMPAT_ERRORS):
        return EXIT_COMPAT
    if isinstance(exc, (NonFiniteValue, FloatingPointError, ZeroDivisionError)):
        return EXIT_NUMERIC
    return EXIT_USAGE


def _write_manifest(out_path: Path, command: str, config: dict, inputs: dict,
                    outputs: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_ms": int((time.monotonic() - started) * 1000),
        "version": __version__,
    }
    store.atomic_write_bytes(
        out_path, json.dumps(manifest, sort_keys=True, indent=2).encode() + b"\n"
    )


def _load_params(path: str):
    ps, kind, meta = store.load(path)
    if kind != "params":
        raise InvalidMeta(f"{path} does not hold model parameters (kind={kind})")
    return ps, meta


def _load_batch(path: str):
    ps, kind, meta = store.load(path)
    batch = toynn.paramset_to_batch(ps)
    return batch, meta.get("task_id", Path(path).stem)


def _recipe(op: str, config: dict, input_digests: list[str]) -> str:
    return json.dumps(
        {"op": op, "config": config, "inputs": input_digests},
        sort_keys=True,
        separators=(",", ":"),
    )


# ---------------------------------------------------------------- train-toy


def _benchmark_spec_from_json(path: str | None) -> toynn.BenchmarkSpec:
    if path is None:
        return toynn.BenchmarkSpec()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"spec {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidSpec("benchmark spec must be a JSON object")
    allowed = set(toynn.BenchmarkSpec.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise InvalidSpec(f"unknown benchmark spec keys: {sorted(unknown)}")
    if "task_ids" in raw:
        raw["task_ids"] = tuple(raw["task_ids"])
    try:
        return toynn.BenchmarkSpec(**raw)
    except TypeError as exc:
        raise InvalidSpec(str(exc)) from exc


def cmd_train_toy(args) -> int:
    started = time.monotonic()
    spec = _benchmark_spec_from_json(args.spec)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise IoFailure(f"output directory {out_dir} is not writable: {exc}") from exc

    run = toynn.build_benchmark(spec, args.seed)
    config = {"seed": args.seed, "spec": spec.__dict__ | {"task_ids": list(spec.task_ids)}}
    recipe = _recipe("train_toy", config, [])
    outputs = []

    def emit(name: str, ps, meta: dict):
        path = out_dir / f"{name}{store.EXTENSION}"
        store.save(path, ps, "params", meta | {"recipe": recipe})
        outputs.append(str(path))
        print(f"{path}  {ps.content_digest()}")

    emit("base", run.base, {"task_id": "base"})
    for tid, fine in zip(run.task_ids, run.finetuned):
        emit(tid, fine, {"task_id": tid})
    for tid, train, test in zip(run.task_ids, run.trains, run.tests):
        emit(f"{tid}.train", toynn.batch_to_paramset(train), {"task_id": tid, "role": "train"})
        emit(f"{tid}.test", toynn.batch_to_paramset(test), {"task_id": tid, "role": "test"})
    emit(
        "mixture.test",
        toynn.batch_to_paramset(run.mixture_test()),
        {"task_id": "mixture", "role": "test"},
    )

    _write_manifest(
        out_dir / "train-toy.manifest.json", "train-toy", config, {}, outputs, started
    )
    return 0


# --------------------------------------------------------------------- fuse


def _merge_config(args) -> merge.MergeConfig:
    return merge.MergeConfig(
        p=args.p,
        lam=args.lam,
        gamma=getattr(args, "gamma", 1.0),
        metric=METRIC_FLAGS[args.metric],
        ties_trim_ratio=args.ties_ratio,
        dare_drop_rate=args.dare_rate,
        seed=args.seed,
        importance_samples=args.importance_samples,
    )


def _resolve_importance(args, cfg, task_params, task_ids):
    """Importance maps per task: loaded from files or computed from fixtures."""
    if args.importance:
        if len(args.importance) != len(task_params):
            raise InvalidMeta("need exactly one --importance file per --task")
        ims = []
        for path, tid in zip(args.importance, task_ids):
            im = importance.load_importance(path)
            if not im.task_id:
                im = importance.ImportanceMap(
                    im.scores, im.metric, im.normalized, tid, im.sample_count
                )
            ims.append(im)
        return ims
    if cfg.metric == "amp":
        return [
            importance.amp_importance(params, tid)
            for params, tid in zip(task_params, task_ids)
        ]
    if not args.samples:
        raise InvalidHyper(
            f"--metric {args.metric} needs --importance files or --samples fixtures"
        )
    if len(args.samples) != len(task_params):
        raise InvalidHyper("need exactly one --samples fixture per --task")
    ims = []
    for path, params, tid in zip(args.samples, task_params, task_ids):
        batch, _ = _load_batch(path)
        picked = importance.importance_samples(batch, cfg.importance_samples, cfg.seed)
        ims.append(importance.compute_importance(cfg.metric, params, picked, tid))
    return ims


def _normalized(ims):
    return [im if im.normalized else importance.normalize_per_layer(im) for im in ims]


def cmd_fuse(args) -> int:
    started = time.monotonic()
    if len(args.task) < 2:
        raise TooFewTasks("fusion needs at least 2 --task checkpoints")
    cfg = _merge_config(args)
    pre, _ = _load_params(args.pre)
    task_params, task_ids = [], []
    for path in args.task:
        ps, meta = _load_params(path)
        task_params.append(ps)
        task_ids.append(meta.get("task_id") or Path(path).stem)
    deltas = [
        merge.task_vector(ps, pre, tid) for ps, tid in zip(task_params, task_ids)
    ]

    config = {
        "baseline": args.baseline,
        "p": cfg.p,
        "lam": cfg.lam,
        "metric": cfg.metric,
        "ties_trim_ratio": cfg.ties_trim_ratio,
        "dare_drop_rate": cfg.dare_drop_rate,
        "seed": cfg.seed,
        "importance_samples": cfg.importance_samples,
        "tasks": task_ids,
    }
    inputs = {args.pre: pre.content_digest()} | {
        path: ps.content_digest() for path, ps in zip(args.task, task_params)
    }
    outputs = [args.out]
    selection_rows = None

    if args.baseline == "none":
        ims = _normalized(_resolve_importance(args, cfg, task_params, task_ids))
        fused, masks = merge.sta_fuse(pre, deltas, ims, cfg, return_masks=True)
        selection_rows = masking.selection_stats(masks)
    elif args.baseline == "avg":
        fused = merge.baseline_average(task_params)
    elif args.baseline == "ta":
        fused = merge.baseline_task_arithmetic(pre, deltas, cfg.lam)
    elif args.baseline == "ties":
        fused = merge.baseline_ties(pre, deltas, cfg.ties_trim_ratio, cfg.lam)
    elif args.baseline == "dare+ta":
        seeds = [cfg.seed + i for i in range(len(deltas))]
        dropped = [
            merge.baseline_dare(tv, cfg.dare_drop_rate, s)
            for tv, s in zip(deltas, seeds)
        ]
        fused = merge.baseline_task_arithmetic(pre, dropped, cfg.lam)
    else:
        raise InvalidHyper(f"unknown baseline {args.baseline!r}")

    recipe = _recipe(f"fuse/{args.baseline}", config, sorted(inputs.values()))
    store.save(args.out, fused, "params", {"task_id": "", "recipe": recipe})
    print(f"{args.out}  {fused.content_digest()}")

    if selection_rows is not None:
        csv_path = str(Path(args.out).with_suffix("")) + ".selection.csv"
        store.atomic_write_bytes(csv_path, masking.stats_to_csv(selection_rows).encode())
        outputs.append(csv_path)
        print(f"selection rates: {csv_path}")

    _write_manifest(Path(str(args.out) + ".manifest.json"), "fuse", config, inputs, outputs, started)
    return 0


# ------------------------------------------------------------------- forget


def cmd_forget(args) -> int:
    started = time.monotonic()
    cfg = _merge_config(args)
    model, _ = _load_params(args.model)
    pre, _ = _load_params(args.pre)
    task_ps, task_meta = _load_params(args.task)
    tid = task_meta.get("task_id") or Path(args.task).stem
    delta = merge.task_vector(task_ps, pre, tid)

    config = {
        "baseline": args.baseline,
        "p": cfg.p,
        "gamma": cfg.gamma,
        "metric": cfg.metric,
        "seed": cfg.seed,
        "importance_samples": cfg.importance_samples,
        "task": tid,
    }
    inputs = {
        args.model: model.content_digest(),
        args.pre: pre.content_digest(),
        args.task: task_ps.content_digest(),
    }

    if args.baseline == "none":
        args_importance = [args.importance] if args.importance else []
        args_samples = [args.samples] if args.samples else []
        shim = argparse.Namespace(
            importance=args_importance, samples=args_samples, metric=args.metric
        )
        (im,) = _normalized(_resolve_importance(shim, cfg, [task_ps], [tid]))
        forgotten = merge.sta_forget(model, delta, im, cfg)
    elif args.baseline == "ta":
        forgotten = merge.baseline_ta_forget(model, delta, cfg.gamma)
    else:
        raise InvalidHyper(f"unknown baseline {args.baseline!r}")

    recipe = _recipe(f"forget/{args.baseline}", config, sorted(inputs.values()))
    store.save(args.out, forgotten, "params", {"task_id": "", "recipe": recipe})
    print(f"{args.out}  {forgotten.content_digest()}")
    _write_manifest(Path(str(args.out) + ".manifest.json"), "forget", config, inputs, [args.out], started)
    return 0


# --------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    started = time.monotonic()
    model, _ = _load_params(args.model)
    rows = []
    inputs = {args.model: model.content_digest()}
    for path in args.data:
        batch, tid = _load_batch(path)
        rows.append((tid, toynn.evaluate(model, batch)))
        inputs[path] = store.load(path)[0].content_digest()
    lines = ["task_id,accuracy"]
    lines += [f"{tid},{acc}" for tid, acc in rows]
    lines.append(f"average,{sum(acc for _, acc in rows) / len(rows)}")
    report = "\n".join(lines) + "\n"
    store.atomic_write_bytes(args.report, report.encode())
    sys.stdout.write(report)
    _write_manifest(
        Path(str(args.report) + ".manifest.json"), "eval", {}, inputs, [args.report], started
    )
    return 0


# ------------------------------------------------------------------ parsing


def _add_merge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p", type=float, default=0.7, help="quantile hyperparameter")
    p.add_argument("--metric", choices=sorted(METRIC_FLAGS), default="LP")
    p.add_argument("--lam", type=float, default=0.4, help="task-arithmetic coefficient")
    p.add_argument("--ties-ratio", type=float, default=0.8, dest="ties_ratio")
    p.add_argument("--dare-rate", type=float, default=0.9, dest="dare_rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--importance-samples", type=int, default=32, dest="importance_samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vecforge",
        description="Training-free model merging and task forgetting on task vectors.",
    )
    parser.add_argument("--version", action="version", version=f"vecforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train-toy", help="build the synthetic multi-task benchmark")
    p_train.add_argument("--spec", default=None, help="benchmark spec JSON (optional)")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.set_defaults(fn=cmd_train_toy)

    p_fuse = sub.add_parser("fuse", help="merge fine-tuned models into one")
    p_fuse.add_argument("--pre", required=True, help="pretrained base checkpoint")
    p_fuse.add_argument("--task", nargs="+", required=True, help="fine-tuned checkpoints")
    p_fuse.add_argument("--importance", nargs="*", default=[], help="importance containers")
    p_fuse.add_argument("--samples", nargs="*", default=[], help="dataset fixtures for importance")
    p_fuse.add_argument(
        "--baseline", choices=["none", "avg", "ta", "ties", "dare+ta"], default="none"
    )
    p_fuse.add_argument("--out", required=True)
    _add_merge_flags(p_fuse)
    p_fuse.set_defaults(fn=cmd_fuse)

    p_forget = sub.add_parser("forget", help="remove one task's ability from a model")
    p_forget.add_argument("--model", required=True, help="model to edit")
    p_forget.add_argument("--pre", required=True, help="pretrained base checkpoint")
    p_forget.add_argument("--task", required=True, help="fine-tuned checkpoint of the target task")
    p_forget.add_argument("--importance", default=None)
    p_forget.add_argument("--samples", default=None)
    p_forget.add_argument("--baseline", choices=["none", "ta"], default="none")
    p_forget.add_argument("--gamma", type=float, default=1.0)
    p_forget.add_argument("--out", required=True)
    _add_merge_flags(p_forget)
    p_forget.set_defaults(fn=cmd_forget)

    p_eval = sub.add_parser("eval", help="accuracy report over dataset fixtures")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", nargs="+", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VecforgeError as exc:
        print(f"vecforge: error: {exc}", file=sys.stderr)
        return _classify(exc)


if __name__ == "__main__":
    sys.exit(main())
