"""Dense tensor values and the primitives every other module builds on.

Tensors are C-contiguous float32/float64 numpy arrays.  A :class:`ParamSet`
is an immutable, lexicographically ordered mapping of tensor names to such
arrays; two ParamSets share an architecture iff their schema digests match.
"""

from __future__ import annotations

import hashlib
import json
from typing import Callable, Iterator, Mapping

import numpy as np

from . import _kernels
from .errors import (
    DtypeMismatch,
    EmptyInput,
    EmptyTensor,
    InvalidP,
    NonFiniteValue,
    ShapeMismatch,
)

DTYPE_CODES = {np.dtype(np.float32): "F32", np.dtype(np.float64): "F64"}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def as_tensor(values, dtype=None) -> np.ndarray:
    """Coerce to a C-contiguous float32/float64 array, validating finiteness."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.dtype not in DTYPE_CODES:
        if dtype is None and np.issubdtype(arr.dtype, np.number):
            arr = np.ascontiguousarray(arr, dtype=np.float64)
        else:
            raise DtypeMismatch(f"unsupported dtype {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("tensor contains NaN or Inf")
    return arr


class ParamSet:
    """Named, ordered map of dense tensors (model weights, deltas, scores, masks)."""

    __slots__ = ("_entries", "_schema_digest")

    def __init__(self, entries: Mapping[str, np.ndarray], copy: bool = True):
        items = {}
        for name in sorted(entries):
            if not isinstance(name, str) or not name:
                raise ValueError(f"tensor name must be a non-empty string, got {name!r}")
            arr = as_tensor(entries[name])
            if arr is entries[name] and copy:
                arr = arr.copy()
            arr.flags.writeable = False
            items[name] = arr
        if not items:
            raise EmptyInput("ParamSet must contain at least one tensor")
        self._entries = items
        self._schema_digest = None

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def items(self):
        return self._entries.items()

    def total_elements(self) -> int:
        return sum(arr.size for arr in self._entries.values())

    def schema(self) -> list[tuple[str, str, tuple[int, ...]]]:
        """Ordered (name, dtype-code, shape) triples defining the architecture."""
        return [
            (name, DTYPE_CODES[arr.dtype], tuple(arr.shape))
            for name, arr in self._entries.items()
        ]

    @property
    def schema_digest(self) -> str:
        if self._schema_digest is None:
            blob = json.dumps(
                [[n, c, list(s)] for n, c, s in self.schema()],
                separators=(",", ":"),
            ).encode()
            self._schema_digest = hashlib.sha256(blob).hexdigest()
        return self._schema_digest

    def content_digest(self) -> str:
        """Digest over schema plus little-endian payload bytes."""
        h = hashlib.sha256(self.schema_digest.encode())
        for name, arr in self._entries.items():
            h.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
        return h.hexdigest()

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet({n: fn(n, a) for n, a in self._entries.items()}, copy=False)

    def zip_map(
        self, other: "ParamSet", fn: Callable[[str, np.ndarray, np.ndarray], np.ndarray]
    ) -> "ParamSet":
        require_same_schema(self, other)
        return ParamSet(
            {n: fn(n, a, other[n]) for n, a in self._entries.items()}, copy=False
        )


def require_same_schema(a: ParamSet, b: ParamSet, what: str = "ParamSets") -> None:
    from .errors import SchemaMismatch

    if a.schema_digest != b.schema_digest:
        raise SchemaMismatch(f"{what} have incompatible architectures")


def ew_binary(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add/sub/mul of two same-shape, same-dtype tensors."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise DtypeMismatch(f"dtypes {a.dtype} and {b.dtype} differ")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown op {op!r}")


def reduce_minmax(t: np.ndarray) -> tuple[float, float]:
    """Exact (min, max) over all elements of a non-empty tensor."""
    if t.size == 0:
        raise EmptyTensor("cannot reduce an empty tensor")
    return float(np.min(t)), float(np.max(t))


def check_p(p: float) -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise InvalidP(f"quantile parameter must lie in [0, 1], got {p}")
    return p


def quantile_interpolated(values, p: float) -> float:
    """Interpolated p-quantile of a non-empty value sequence.

    With the values sorted ascending and 1-indexed, the quantile sits at
    position ``1 + (len - 1) * p``; fractional positions interpolate
    linearly between the two neighbouring order statistics.
    """
    p = check_p(p)
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise EmptyInput("quantile of an empty value sequence")
    return _kernels.quantile_flat(arr, p)
