"""Model fusion and task forgetting on (optionally sparsified) task vectors.

The importance-masked route keeps the fusion coefficient fixed at 1; the
baselines (weight averaging, task arithmetic, TIES, DARE preprocessing)
implement their published update rules for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import store
from .errors import (
    BaseMismatch,
    InvalidHyper,
    InvalidMeta,
    InvalidRate,
    SchemaMismatch,
    TooFewTasks,
)
from .importance import ImportanceMap
from .masking import MaskSet, apply_mask, cross_masks, cross_threshold, forget_threshold
from .tensor import ParamSet, check_p, require_same_schema

METRIC_CHOICES = ("lp", "amp", "mixed")


@dataclass(frozen=True)
class TaskVector:
    """Delta between a fine-tuned model and the pretrained base it came from."""

    delta: ParamSet
    task_id: str
    base_digest: str
    sparsity: float = 0.0


@dataclass(frozen=True)
class MergeConfig:
    p: float = 0.7
    lam: float = 0.4
    gamma: float = 1.0
    metric: str = "lp"
    ties_trim_ratio: float = 0.8
    dare_drop_rate: float = 0.9
    seed: int = 0
    importance_samples: int = 32

    def __post_init__(self):
        check_p(self.p)
        if not (0.0 <= self.ties_trim_ratio <= 1.0):
            raise InvalidHyper("ties_trim_ratio must lie in [0, 1]")
        if not (0.0 <= self.dare_drop_rate < 1.0):
            raise InvalidRate("dare_drop_rate must lie in [0, 1)")
        if self.metric not in METRIC_CHOICES:
            raise InvalidHyper(f"unknown metric {self.metric!r}")
        if self.metric != "amp" and self.importance_samples < 1:
            raise InvalidHyper("importance_samples must be >= 1 for gradient metrics")


def _zero_fraction(ps: ParamSet) -> float:
    zeros = sum(int(a.size) - int(np.count_nonzero(a)) for _, a in ps.items())
    return zeros / ps.total_elements()


def task_vector(fine: ParamSet, pre: ParamSet, task_id: str) -> TaskVector:
    """Elementwise fine - pre, stamped with the base's content digest."""
    require_same_schema(fine, pre, "fine-tuned and pretrained models")
    delta = fine.zip_map(pre, lambda n, f, p: f - p)
    return TaskVector(delta, task_id, pre.content_digest(), _zero_fraction(delta))


def recompose(pre: ParamSet, delta: TaskVector) -> ParamSet:
    require_same_schema(pre, delta.delta, "base and task vector")
    return pre.zip_map(delta.delta, lambda n, p, d: p + d)


def _check_bases(pre: ParamSet, deltas: Sequence[TaskVector]) -> None:
    base = pre.content_digest()
    for tv in deltas:
        if tv.base_digest != base:
            raise BaseMismatch(
                f"task vector {tv.task_id!r} was built from a different pretrained base"
            )


def _sum_deltas(deltas: Sequence[TaskVector]) -> ParamSet:
    acc = deltas[0].delta
    for tv in deltas[1:]:
        acc = acc.zip_map(tv.delta, lambda n, a, b: a + b)
    return acc


def sta_fuse(
    pre: ParamSet,
    deltas: Sequence[TaskVector],
    ims: Sequence[ImportanceMap],
    cfg: MergeConfig,
    mask_override: MaskSet | None = None,
    return_masks: bool = False,
):
    """Importance-masked fusion at coefficient 1.

    Pipeline: cross-task thresholds -> indicator masks -> masked deltas ->
    summed in list order -> added to the base.  ``mask_override`` is a
    testing hook that replaces the computed masks.
    """
    if len(deltas) < 2:
        raise TooFewTasks("fusion needs at least 2 task vectors")
    if len(ims) != len(deltas):
        raise SchemaMismatch("need exactly one importance map per task vector")
    for tv, im in zip(deltas, ims):
        if tv.task_id != im.task_id:
            raise SchemaMismatch(
                f"importance map {im.task_id!r} not aligned with task vector {tv.task_id!r}"
            )
        require_same_schema(pre, tv.delta, "base and task vector")
    _check_bases(pre, deltas)

    masks = mask_override
    if masks is None:
        masks = cross_masks(ims, cross_threshold(ims, cfg.p))
    masked = [apply_mask(tv, m) for tv, m in zip(deltas, masks.masks)]
    fused = pre.zip_map(_sum_deltas(masked), lambda n, p, d: p + d)
    if return_masks:
        return fused, masks
    return fused


def sta_forget(
    model_k: ParamSet,
    delta_i: TaskVector,
    im_i: ImportanceMap,
    cfg: MergeConfig,
    return_masks: bool = False,
):
    """Subtract the per-layer importance-masked task vector from a model."""
    require_same_schema(model_k, delta_i.delta, "model and task vector")
    masks = cross_masks([im_i], forget_threshold(im_i, cfg.p))
    masked = apply_mask(delta_i, masks.masks[0])
    forgotten = model_k.zip_map(masked.delta, lambda n, m, d: m - d)
    if return_masks:
        return forgotten, masks
    return forgotten


def baseline_average(models: Sequence[ParamSet]) -> ParamSet:
    """Elementwise arithmetic mean of N >= 2 architecture-compatible models."""
    if len(models) < 2:
        raise TooFewTasks("averaging needs at least 2 models")
    acc = models[0]
    for m in models[1:]:
        acc = acc.zip_map(m, lambda n, a, b: a + b)
    count = len(models)
    return acc.map(lambda n, a: a / count)


def baseline_task_arithmetic(
    pre: ParamSet, deltas: Sequence[TaskVector], lam: float = 0.4
) -> ParamSet:
    """pre + lam * sum of task vectors (summed in list order)."""
    if not deltas:
        raise TooFewTasks("task arithmetic needs at least 1 task vector")
    for tv in deltas:
        require_same_schema(pre, tv.delta, "base and task vector")
    _check_bases(pre, deltas)
    total = _sum_deltas(deltas)
    return pre.zip_map(total, lambda n, p, d: p + lam * d)


def baseline_ta_forget(model: ParamSet, delta: TaskVector, gamma: float = 1.0) -> ParamSet:
    """model - gamma * task vector."""
    require_same_schema(model, delta.delta, "model and task vector")
    return model.zip_map(delta.delta, lambda n, m, d: m - gamma * d)


def _trim_small_magnitudes(delta: ParamSet, trim_ratio: float) -> ParamSet:
    """Zero the bottom trim_ratio fraction (by |value|, stable rank over the
    whole task vector) of a delta."""
    names = delta.names()
    flat = np.concatenate([delta[n].reshape(-1) for n in names])
    drop = int(trim_ratio * flat.size)
    if drop > 0:
        order = np.argsort(np.abs(flat), kind="stable")
        flat = flat.copy()
        flat[order[:drop]] = 0.0
    out = {}
    cursor = 0
    for n in names:
        arr = delta[n]
        out[n] = flat[cursor : cursor + arr.size].reshape(arr.shape).astype(arr.dtype)
        cursor += arr.size
    return ParamSet(out, copy=False)


def baseline_ties(
    pre: ParamSet,
    deltas: Sequence[TaskVector],
    trim_ratio: float = 0.8,
    lam: float = 0.4,
) -> ParamSet:
    """Trim small magnitudes, elect a per-position sign, disjoint-mean merge.

    Positions whose trimmed values sum to zero elect no sign and contribute
    nothing; otherwise the mean runs over the values matching the elected
    sign only.
    """
    if len(deltas) < 2:
        raise TooFewTasks("TIES needs at least 2 task vectors")
    for tv in deltas:
        require_same_schema(pre, tv.delta, "base and task vector")
    _check_bases(pre, deltas)
    if not (0.0 <= trim_ratio <= 1.0):
        raise InvalidHyper("trim_ratio must lie in [0, 1]")

    trimmed = [_trim_small_magnitudes(tv.delta, trim_ratio) for tv in deltas]

    def merge_tensor(name: str, p: np.ndarray) -> np.ndarray:
        stack = np.stack([t[name] for t in trimmed])
        elected = np.sign(stack.sum(axis=0))
        matches = (stack * elected) > 0
        counts = matches.sum(axis=0)
        total = (stack * matches).sum(axis=0)
        merged = np.divide(total, counts, out=np.zeros_like(p), where=counts > 0)
        return p + lam * merged

    return pre.map(merge_tensor)


def baseline_dare(delta: TaskVector, drop_rate: float, seed: int) -> TaskVector:
    """Random drop of delta entries at ``drop_rate``; survivors rescaled by
    1/(1-drop_rate) so the delta stays unbiased in expectation."""
    if not (0.0 <= drop_rate < 1.0):
        raise InvalidRate("drop_rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    scale = 1.0 / (1.0 - drop_rate)
    out = {}
    for name, arr in delta.delta.items():
        keep = rng.random(arr.shape) >= drop_rate
        out[name] = np.where(keep, arr * scale, 0.0).astype(arr.dtype)
    dropped = ParamSet(out, copy=False)
    return TaskVector(dropped, delta.task_id, delta.base_digest, _zero_fraction(dropped))


def save_task_vector(path, tv: TaskVector) -> None:
    store.save(
        path,
        tv.delta,
        "taskvec",
        {"task_id": tv.task_id, "base_digest": tv.base_digest, "sparsity": tv.sparsity},
    )


def load_task_vector(path) -> TaskVector:
    ps, kind, meta = store.load(path)
    if kind != "taskvec":
        raise InvalidMeta(f"{path} is not a task-vector container")
    return TaskVector(
        ps, meta.get("task_id", ""), meta.get("base_digest", ""), float(meta.get("sparsity", 0.0))
    )
