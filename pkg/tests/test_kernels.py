"""Cross-checks between the compiled and numpy kernel lanes."""

import numpy as np
import pytest

from vecforge._kernels import available_backends, pykernels

BACKENDS = {"python": pykernels}
if "c" in available_backends():
    from vecforge._kernels import _ckernels

    BACKENDS["c"] = _ckernels

P_GRID = [0.0, 1e-9, 1 / 3, 0.5, 0.7, 0.9999999, 1.0]


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


def test_compiled_lane_present():
    # The build is expected to produce the extension in CI; the package
    # itself still works without it.
    assert "python" in available_backends()


class TestQuantileFlat:
    @pytest.mark.parametrize("p", P_GRID)
    def test_lanes_bitwise_equal(self, p):
        r = np.random.default_rng(42)
        for size in (1, 2, 3, 7, 100, 1001):
            values = np.ascontiguousarray(r.standard_normal(size))
            results = {name: impl.quantile_flat(values, p) for name, impl in BACKENDS.items()}
            vals = list(results.values())
            assert all(v == vals[0] for v in vals)

    @pytest.mark.parametrize("p", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_matches_numpy_linear_method(self, backend, p):
        r = np.random.default_rng(3)
        values = np.ascontiguousarray(r.standard_normal(257))
        got = backend.quantile_flat(values, p)
        want = float(np.quantile(values, p, method="linear"))
        assert got == pytest.approx(want, rel=1e-12)

    def test_input_not_mutated(self, backend):
        values = np.array([3.0, 1.0, 2.0])
        backend.quantile_flat(values, 0.5)
        assert np.array_equal(values, [3.0, 1.0, 2.0])


class TestQuantileAcross:
    @pytest.mark.parametrize("p", P_GRID)
    def test_lanes_bitwise_equal(self, p):
        r = np.random.default_rng(7)
        for n, m in ((2, 64), (3, 101), (6, 1024)):
            stack = np.ascontiguousarray(r.standard_normal((n, m)))
            results = [impl.quantile_across(stack, p) for impl in BACKENDS.values()]
            for other in results[1:]:
                assert np.array_equal(results[0], other)

    def test_matches_per_column_flat(self, backend):
        r = np.random.default_rng(11)
        stack = np.ascontiguousarray(r.standard_normal((4, 33)))
        got = backend.quantile_across(stack, 0.7)
        want = [backend.quantile_flat(np.ascontiguousarray(stack[:, j]), 0.7)
                for j in range(stack.shape[1])]
        assert np.array_equal(got, np.array(want))

    def test_readonly_input_accepted(self, backend):
        stack = np.arange(12, dtype=np.float64).reshape(3, 4)
        stack.flags.writeable = False
        out = backend.quantile_across(stack, 1.0)
        assert np.array_equal(out, stack[2])
