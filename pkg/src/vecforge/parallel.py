"""Per-tensor worker pool, capped by the VECFORGE_THREADS env var (0 = auto).

Tensors are independent in every pipeline here, so scheduling order cannot
change results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def thread_cap() -> int:
    raw = os.environ.get("VECFORGE_THREADS", "0").strip() or "0"
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = min(8, os.cpu_count() or 1)
    return cap


def tensor_map(fn: Callable[[str], T], names: Iterable[str]) -> dict[str, T]:
    """Apply ``fn`` to each tensor name; results keyed by name."""
    names = list(names)
    cap = thread_cap()
    if cap == 1 or len(names) <= 1:
        return {name: fn(name) for name in names}
    with ThreadPoolExecutor(max_workers=min(cap, len(names))) as pool:
        return dict(zip(names, pool.map(fn, names)))
