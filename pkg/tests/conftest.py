import numpy as np
import pytest

from vecforge import toynn
from vecforge.tensor import ParamSet


@pytest.fixture(scope="session")
def small_bench():
    """A fast 2-task benchmark for unit tests (full-size runs live in acceptance)."""
    spec = toynn.BenchmarkSpec(num_tasks=2, train_size=512, test_size=128)
    return toynn.build_benchmark(spec, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(seed: int, names=("a", "b.weight"), shape=(3, 4)) -> ParamSet:
    r = np.random.default_rng(seed)
    return ParamSet({n: r.standard_normal(shape) for n in names})


def random_mlp_instance(seed: int, d=4, h=5, c=3, n=8):
    r = np.random.default_rng(seed)
    params = toynn.init_mlp(d, h, c, seed)
    batch = toynn.SampleBatch(r.standard_normal((n, d)), r.integers(0, c, n))
    return params, batch
