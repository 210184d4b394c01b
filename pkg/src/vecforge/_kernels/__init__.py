"""Kernel backend selection.

The compiled extension is preferred; the numpy lane is the fallback.  Set
``VECFORGE_KERNELS=python`` (or ``c``) to force a lane, e.g. for the
benchmark or to cross-check the two implementations.
"""

import os

from . import pykernels


def _load_backend():
    choice = os.environ.get("VECFORGE_KERNELS", "").strip().lower()
    if choice == "python":
        return pykernels
    try:
        from . import _ckernels
    except ImportError:
        if choice == "c":
            raise ImportError(
                "VECFORGE_KERNELS=c but the compiled extension is not built"
            ) from None
        return pykernels
    return _ckernels


_impl = _load_backend()

BACKEND = _impl.BACKEND
quantile_flat = _impl.quantile_flat
quantile_across = _impl.quantile_across


def available_backends():
    """Names of the kernel lanes importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("c")
    return names
