"""Training-free model merging and task forgetting via importance-masked
task vectors, with baselines and a self-contained toy benchmark."""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend  # noqa: F401
from .tensor import ParamSet  # noqa: F401
