"""Single-file binary container for parameter-set shaped artifacts.

Layout: ``[u64 little-endian header length][UTF-8 JSON header][raw payload]``.
The header maps each tensor name to ``{dtype, shape, data_offsets}`` plus a
reserved ``__meta__`` object carrying artifact kind and provenance.  Offsets
are relative to the payload region and tile it exactly, in lexicographic
name order.  Header keys are serialized sorted and without whitespace, and
the payload is little-endian IEEE-754, so identical inputs produce
byte-identical files.  Digest algorithm: SHA-256 (frozen).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    InvalidMask,
    InvalidMeta,
    IoFailure,
    NonFiniteValue,
    OffsetOverlap,
    TruncatedPayload,
)
from .tensor import CODE_DTYPES, DTYPE_CODES, ParamSet

EXTENSION = ".tnsr"
KINDS = ("params", "taskvec", "importance", "mask")

_META_KEY = "__meta__"


def schema_digest(ps: ParamSet) -> str:
    """Hex digest identifying the ordered (name, dtype, shape) architecture."""
    return ps.schema_digest


def content_digest(ps: ParamSet) -> str:
    return ps.content_digest()


def _check_mask_values(ps: ParamSet) -> None:
    for name, arr in ps.items():
        bad = (arr != 0.0) & (arr != 1.0)
        if np.any(bad):
            raise InvalidMask(f"mask tensor {name!r} contains values outside {{0, 1}}")


def dump_bytes(ps: ParamSet, kind: str, meta: dict | None = None) -> bytes:
    """Serialize a ParamSet-shaped artifact to container bytes."""
    if kind not in KINDS:
        raise InvalidMeta(f"unknown artifact kind {kind!r}")
    meta = dict(meta or {})
    meta["kind"] = kind
    meta.setdefault("task_id", "")
    meta.setdefault("base_digest", "")
    meta.setdefault("metric", None)
    if kind == "taskvec" and not (meta["task_id"] and meta["base_digest"]):
        raise InvalidMeta("task vectors require task_id and base_digest metadata")
    if kind == "mask":
        _check_mask_values(ps)

    header: dict = {_META_KEY: meta}
    payload = bytearray()
    for name, arr in ps.items():
        begin = len(payload)
        payload += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        header[name] = {
            "dtype": DTYPE_CODES[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [begin, len(payload)],
        }
    try:
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    except (TypeError, ValueError) as exc:
        raise InvalidMeta(f"metadata is not JSON-serializable: {exc}") from exc
    return struct.pack("<Q", len(header_bytes)) + header_bytes + bytes(payload)


def load_bytes(data: bytes) -> tuple[ParamSet, str, dict]:
    """Parse container bytes back into (ParamSet, kind, meta), validating layout."""
    if len(data) < 8:
        raise CorruptHeader("container shorter than the length prefix")
    (header_len,) = struct.unpack("<Q", data[:8])
    if header_len > len(data) - 8:
        raise CorruptHeader("declared header length exceeds file size")
    try:
        header = json.loads(data[8 : 8 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or _META_KEY not in header:
        raise CorruptHeader("header missing the __meta__ object")
    meta = header.pop(_META_KEY)
    kind = meta.get("kind") if isinstance(meta, dict) else None
    if kind not in KINDS:
        raise CorruptHeader(f"unknown artifact kind {kind!r}")

    payload = data[8 + header_len :]
    entries = {}
    cursor = 0
    for name in sorted(header):
        desc = header[name]
        try:
            code = desc["dtype"]
            shape = tuple(int(d) for d in desc["shape"])
            begin, end = (int(v) for v in desc["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptHeader(f"malformed descriptor for tensor {name!r}") from exc
        if code not in CODE_DTYPES:
            raise CorruptHeader(f"unknown dtype code {code!r}")
        if any(d < 1 for d in shape):
            raise CorruptHeader(f"non-positive dimension in shape of {name!r}")
        dtype = CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if begin != cursor or end - begin != nbytes:
            raise OffsetOverlap(
                f"offsets of {name!r} do not tile the payload region contiguously"
            )
        if end > len(payload):
            raise TruncatedPayload(f"payload ends before tensor {name!r}")
        arr = np.frombuffer(payload[begin:end], dtype=dtype.newbyteorder("<"))
        arr = np.ascontiguousarray(arr.astype(dtype)).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"tensor {name!r} contains NaN or Inf")
        entries[name] = arr
        cursor = end
    if cursor != len(payload):
        raise CorruptHeader("payload has trailing bytes beyond the last offset")

    ps = ParamSet(entries, copy=False)
    if kind == "mask":
        _check_mask_values(ps)
    return ps, kind, meta


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def save(path: str | Path, ps: ParamSet, kind: str, meta: dict | None = None) -> None:
    atomic_write_bytes(path, dump_bytes(ps, kind, meta))


def load(path: str | Path) -> tuple[ParamSet, str, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return load_bytes(data)
