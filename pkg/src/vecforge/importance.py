"""Per-parameter importance scoring and per-layer normalization.

Three metrics are supported: ``lp`` (loss preservation: |theta * grad|
accumulated over per-sample gradients), ``amp`` (squared magnitude), and
``mixed`` (the lp accumulation scaled elementwise by theta^2, so that
mixed == lp * amp holds exactly).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import store
from .errors import AlreadyNormalized, InvalidMeta
from .tensor import ParamSet, reduce_minmax
from .toynn import SampleBatch, backward

METRICS = ("lp", "amp", "mixed")


@dataclass(frozen=True)
class ImportanceMap:
    scores: ParamSet
    metric: str
    normalized: bool
    task_id: str = ""
    sample_count: int = 0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown importance metric {self.metric!r}")
        for name, arr in self.scores.items():
            if np.any(arr < 0):
                raise ValueError(f"negative importance in {name!r}")
            if self.normalized and np.any(arr > 1):
                raise ValueError(f"normalized importance above 1 in {name!r}")


def _accumulated_lp_scores(params: ParamSet, samples: SampleBatch) -> dict[str, np.ndarray]:
    # Per-sample gradients, summed in sample order; a single batched gradient
    # would let opposite-sign contributions cancel inside the absolute value.
    totals = {name: np.zeros_like(arr) for name, arr in params.items()}
    for j in range(len(samples)):
        grads = backward(params, samples.take(np.array([j])))
        for name, arr in params.items():
            totals[name] += np.abs(arr * grads[name])
    return totals


def lp_importance(params: ParamSet, samples: SampleBatch, task_id: str = "") -> ImportanceMap:
    """Loss-preservation importance accumulated over a small sample set."""
    scores = ParamSet(_accumulated_lp_scores(params, samples), copy=False)
    return ImportanceMap(scores, "lp", False, task_id, len(samples))


def amp_importance(params: ParamSet, task_id: str = "") -> ImportanceMap:
    """Squared-magnitude importance (no samples required)."""
    return ImportanceMap(params.map(lambda n, a: a * a), "amp", False, task_id, 0)


def mixed_importance(params: ParamSet, samples: SampleBatch, task_id: str = "") -> ImportanceMap:
    """Loss-preservation accumulation scaled by squared magnitude."""
    lp = _accumulated_lp_scores(params, samples)
    scores = params.map(lambda n, a: lp[n] * (a * a))
    return ImportanceMap(scores, "mixed", False, task_id, len(samples))


def compute_importance(
    metric: str, params: ParamSet, samples: SampleBatch | None, task_id: str = ""
) -> ImportanceMap:
    if metric == "amp":
        return amp_importance(params, task_id)
    if samples is None:
        raise ValueError(f"metric {metric!r} needs a sample batch")
    if metric == "lp":
        return lp_importance(params, samples, task_id)
    if metric == "mixed":
        return mixed_importance(params, samples, task_id)
    raise ValueError(f"unknown importance metric {metric!r}")


def normalize_per_layer(im: ImportanceMap) -> ImportanceMap:
    """Min-max normalize each named tensor into [0, 1].

    Constant tensors map to 0.5 everywhere: a neutral value, so a degenerate
    layer neither always wins nor always loses cross-task comparisons.
    """
    if im.normalized:
        raise AlreadyNormalized("importance map is already normalized")

    def norm(name: str, arr: np.ndarray) -> np.ndarray:
        lo, hi = reduce_minmax(arr)
        if hi == lo:
            return np.full_like(arr, 0.5)
        return (arr - lo) / (hi - lo)

    return replace(im, scores=im.scores.map(norm), normalized=True)


def importance_samples(train: SampleBatch, count: int, seed: int) -> SampleBatch:
    """First ``count`` training samples after a seeded shuffle."""
    perm = np.random.default_rng(seed).permutation(len(train))
    return train.take(perm[: min(count, len(train))])


def save_importance(path, im: ImportanceMap) -> None:
    store.save(
        path,
        im.scores,
        "importance",
        {
            "metric": im.metric,
            "normalized": im.normalized,
            "task_id": im.task_id,
            "sample_count": im.sample_count,
        },
    )


def load_importance(path) -> ImportanceMap:
    ps, kind, meta = store.load(path)
    if kind != "importance":
        raise InvalidMeta(f"{path} is not an importance container")
    return ImportanceMap(
        ps,
        meta.get("metric") or "lp",
        bool(meta.get("normalized", False)),
        meta.get("task_id", ""),
        int(meta.get("sample_count", 0)),
    )
