"""Threshold matrices and binary masks over task-vector importance.

Fusion thresholds are per-position interpolated quantiles across the N
tasks' normalized importance values; forgetting thresholds are per-layer
constants from a model's own importance.  Masks keep strictly-above-threshold
positions only, so ties drop.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _kernels, parallel, store
from .errors import NotNormalized, SchemaMismatch, TooFewTasks
from .importance import ImportanceMap
from .tensor import ParamSet, check_p, require_same_schema

if TYPE_CHECKING:
    from .merge import TaskVector

CROSS_TASK = "cross_task"
PER_LAYER = "per_layer"


@dataclass(frozen=True)
class ThresholdMap:
    thresholds: ParamSet
    mode: str
    p: float


@dataclass(frozen=True)
class MaskSet:
    masks: tuple[ParamSet, ...]
    task_ids: tuple[str, ...]
    p: float
    mode: str


def _check_aligned(ims: Sequence[ImportanceMap]) -> None:
    for im in ims:
        if not im.normalized:
            raise NotNormalized(
                f"importance map for {im.task_id!r} must be normalized first"
            )
    first = ims[0].scores
    for im in ims[1:]:
        require_same_schema(first, im.scores, "importance maps")


def cross_threshold(ims: Sequence[ImportanceMap], p: float) -> ThresholdMap:
    """Per-position p-quantile of the N tasks' importance values."""
    p = check_p(p)
    if len(ims) < 2:
        raise TooFewTasks("cross-task thresholds need at least 2 importance maps")
    _check_aligned(ims)

    def per_tensor(name: str) -> np.ndarray:
        ref = ims[0].scores[name]
        stack = np.ascontiguousarray(
            np.stack([im.scores[name].reshape(-1) for im in ims]), dtype=np.float64
        )
        q = _kernels.quantile_across(stack, p)
        return q.reshape(ref.shape).astype(ref.dtype)

    out = parallel.tensor_map(per_tensor, ims[0].scores.names())
    return ThresholdMap(ParamSet(out, copy=False), CROSS_TASK, p)


def forget_threshold(im: ImportanceMap, p: float) -> ThresholdMap:
    """Per-layer constant threshold: the p-quantile of that layer's own values."""
    p = check_p(p)
    _check_aligned([im])

    def per_tensor(name: str) -> np.ndarray:
        arr = im.scores[name]
        q = _kernels.quantile_flat(
            np.ascontiguousarray(arr.reshape(-1), dtype=np.float64), p
        )
        return np.full(arr.shape, q, dtype=arr.dtype)

    out = parallel.tensor_map(per_tensor, im.scores.names())
    return ThresholdMap(ParamSet(out, copy=False), PER_LAYER, p)


def cross_masks(ims: Sequence[ImportanceMap], thresholds: ThresholdMap) -> MaskSet:
    """Indicator masks: 1 where importance strictly exceeds the threshold."""
    _check_aligned(ims)
    require_same_schema(ims[0].scores, thresholds.thresholds, "importance and thresholds")
    masks = tuple(
        im.scores.zip_map(
            thresholds.thresholds, lambda n, s, t: (s > t).astype(s.dtype)
        )
        for im in ims
    )
    return MaskSet(masks, tuple(im.task_id for im in ims), thresholds.p, thresholds.mode)


def apply_mask(delta: "TaskVector", mask: ParamSet) -> "TaskVector":
    """Zero out unselected positions of a task vector, updating its sparsity."""
    require_same_schema(delta.delta, mask, "task vector and mask")
    masked = delta.delta.zip_map(mask, lambda n, d, m: d * m)
    zeros = sum(int(arr.size) - int(np.count_nonzero(arr)) for _, arr in masked.items())
    return dataclasses.replace(
        delta, delta=masked, sparsity=zeros / masked.total_elements()
    )


def selection_stats(masks: MaskSet) -> list[tuple[str, str, float]]:
    """Kept fraction per (task, tensor): rows for the selection-rate report."""
    rows = []
    for task_id, mask in zip(masks.task_ids, masks.masks):
        for name, arr in mask.items():
            rows.append((task_id, name, int(np.count_nonzero(arr)) / arr.size))
    return rows


def stats_to_csv(rows: list[tuple[str, str, float]]) -> str:
    lines = ["task_id,tensor,kept_fraction"]
    lines += [f"{task},{tensor},{frac}" for task, tensor, frac in rows]
    return "\n".join(lines) + "\n"


def save_masks(path_for_task, masks: MaskSet) -> list[str]:
    """Persist each task's mask; ``path_for_task(task_id)`` names the file."""
    paths = []
    for task_id, mask in zip(masks.task_ids, masks.masks):
        path = path_for_task(task_id)
        store.save(
            path, mask, "mask", {"task_id": task_id, "p": masks.p, "mode": masks.mode}
        )
        paths.append(str(path))
    return paths
