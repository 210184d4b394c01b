import numpy as np
import pytest

from vecforge import errors, masking, merge
from vecforge.importance import ImportanceMap
from vecforge.tensor import ParamSet


def norm_map(task_id, **tensors):
    ps = ParamSet({k: np.asarray(v, dtype=float) for k, v in tensors.items()})
    return ImportanceMap(ps, "lp", True, task_id, 1)


def raw_map(task_id, **tensors):
    ps = ParamSet({k: np.asarray(v, dtype=float) for k, v in tensors.items()})
    return ImportanceMap(ps, "lp", False, task_id, 1)


class TestCrossThreshold:
    def test_two_task_interpolation(self):
        ims = [norm_map("a", w=[0.9, 0.3]), norm_map("b", w=[0.1, 0.8])]
        tm = masking.cross_threshold(ims, 0.7)
        assert tm.thresholds["w"] == pytest.approx([0.66, 0.65], rel=1e-12)
        assert tm.mode == masking.CROSS_TASK

    def test_p_zero_is_elementwise_min(self, rng):
        ims = [norm_map(t, w=rng.random(16)) for t in "abc"]
        tm = masking.cross_threshold(ims, 0.0)
        stack = np.stack([im.scores["w"] for im in ims])
        assert np.array_equal(tm.thresholds["w"], stack.min(axis=0))

    def test_p_one_is_elementwise_max(self, rng):
        ims = [norm_map(t, w=rng.random(16)) for t in "abc"]
        tm = masking.cross_threshold(ims, 1.0)
        stack = np.stack([im.scores["w"] for im in ims])
        assert np.array_equal(tm.thresholds["w"], stack.max(axis=0))

    def test_rejects_single_task(self):
        with pytest.raises(errors.TooFewTasks):
            masking.cross_threshold([norm_map("a", w=[0.5])], 0.7)

    def test_rejects_unnormalized(self):
        with pytest.raises(errors.NotNormalized):
            masking.cross_threshold([raw_map("a", w=[1.0]), raw_map("b", w=[2.0])], 0.7)

    def test_rejects_schema_mismatch(self):
        with pytest.raises(errors.SchemaMismatch):
            masking.cross_threshold(
                [norm_map("a", w=[0.5, 0.5]), norm_map("b", w=[0.5, 0.5, 0.5])], 0.7
            )

    def test_rejects_bad_p(self):
        ims = [norm_map("a", w=[0.5]), norm_map("b", w=[0.5])]
        with pytest.raises(errors.InvalidP):
            masking.cross_threshold(ims, 1.5)


class TestCrossMasks:
    def test_winner_and_loser(self):
        ims = [norm_map("a", w=[0.9, 0.1]), norm_map("b", w=[0.1, 0.9])]
        ms = masking.cross_masks(ims, masking.cross_threshold(ims, 0.7))
        assert np.array_equal(ms.masks[0]["w"], [1.0, 0.0])
        assert np.array_equal(ms.masks[1]["w"], [0.0, 1.0])

    def test_ties_drop_everywhere(self):
        ims = [norm_map("a", w=[0.5, 0.5]), norm_map("b", w=[0.5, 0.5])]
        ms = masking.cross_masks(ims, masking.cross_threshold(ims, 0.7))
        for mask in ms.masks:
            assert np.array_equal(mask["w"], [0.0, 0.0])

    def test_p_one_masks_nothing(self, rng):
        ims = [norm_map(t, w=rng.random(32)) for t in "ab"]
        ms = masking.cross_masks(ims, masking.cross_threshold(ims, 1.0))
        for mask in ms.masks:
            assert np.array_equal(mask["w"], np.zeros(32))

    def test_coverage_between_one_and_n_minus_one(self, rng):
        # Distinct values with 0 < p < 1: the max always survives, the min never.
        for p in (0.3, 0.5, 0.7):
            ims = [norm_map(t, w=rng.permutation(64) / 64.0) for t in "abcd"]
            ms = masking.cross_masks(ims, masking.cross_threshold(ims, p))
            kept = sum(mask["w"] for mask in ms.masks)
            assert kept.min() >= 1
            assert kept.max() <= 3


class TestForgetThreshold:
    def test_layer_quantile_fills_constant(self):
        im = norm_map("a", w=[0.0, 0.25, 0.5, 0.75, 1.0])
        tm = masking.forget_threshold(im, 0.7)
        assert tm.mode == masking.PER_LAYER
        assert tm.thresholds["w"] == pytest.approx(np.full(5, 0.7), rel=1e-12)

    def test_five_element_example(self):
        # raw [0..4] normalizes to [0, .25, .5, .75, 1]; the 0.7 quantile of
        # the raw layer is 2.8, so raw values {3, 4} are the strict survivors.
        from vecforge.importance import normalize_per_layer

        im = normalize_per_layer(raw_map("a", w=[0, 1, 2, 3, 4]))
        ms = masking.cross_masks([im], masking.forget_threshold(im, 0.7))
        assert np.array_equal(ms.masks[0]["w"], [0, 0, 0, 1, 1])

    def test_p_zero_keeps_all_but_min(self):
        im = norm_map("a", w=[0.0, 0.5, 1.0])
        ms = masking.cross_masks([im], masking.forget_threshold(im, 0.0))
        assert np.array_equal(ms.masks[0]["w"], [0, 1, 1])

    def test_single_element_layer_always_drops(self):
        im = norm_map("a", w=[0.5])
        ms = masking.cross_masks([im], masking.forget_threshold(im, 0.7))
        assert np.array_equal(ms.masks[0]["w"], [0.0])

    def test_scale_invariance_of_forgetting_masks(self, rng):
        from vecforge.importance import normalize_per_layer

        raw = rng.random(128) * 3.0
        for c in (0.01, 1.0, 250.0):
            im = normalize_per_layer(raw_map("a", w=raw * c))
            ms = masking.cross_masks([im], masking.forget_threshold(im, 0.6))
            if c == 0.01:
                reference = ms.masks[0]["w"]
            else:
                assert np.array_equal(ms.masks[0]["w"], reference)


class TestApplyMask:
    def make_tv(self, values):
        return merge.TaskVector(
            ParamSet({"w": np.asarray(values, float)}), "t", "digest", 0.0
        )

    def test_all_ones_identity(self):
        tv = self.make_tv([2.0, -3.0])
        out = masking.apply_mask(tv, ParamSet({"w": np.ones(2)}))
        assert np.array_equal(out.delta["w"], tv.delta["w"])
        assert out.sparsity == 0.0
        assert (out.task_id, out.base_digest) == ("t", "digest")

    def test_all_zeros(self):
        out = masking.apply_mask(self.make_tv([2.0, -3.0]), ParamSet({"w": np.zeros(2)}))
        assert np.array_equal(out.delta["w"], [0.0, 0.0])
        assert out.sparsity == 1.0

    def test_partial(self):
        out = masking.apply_mask(
            self.make_tv([2.0, -3.0]), ParamSet({"w": np.array([0.0, 1.0])})
        )
        assert np.array_equal(out.delta["w"], [0.0, -3.0])
        assert out.sparsity == 0.5


class TestSelectionStats:
    def test_all_ones_fraction_one(self):
        ms = masking.MaskSet((ParamSet({"w": np.ones(8)}),), ("a",), 0.7, "cross_task")
        assert masking.selection_stats(ms) == [("a", "w", 1.0)]

    def test_two_task_rows_sum_to_one(self, rng):
        # distinct importances, N=2: exactly one task wins each position
        ims = [
            norm_map("a", w=rng.permutation(256) / 256.0, v=rng.permutation(64) / 64.0),
            norm_map("b", w=rng.permutation(256) / 256.0, v=rng.permutation(64) / 64.0),
        ]
        ms = masking.cross_masks(ims, masking.cross_threshold(ims, 0.7))
        rows = masking.selection_stats(ms)
        by_tensor = {}
        for task, tensor, frac in rows:
            by_tensor.setdefault(tensor, 0.0)
            by_tensor[tensor] += frac
        # power-of-two tensor sizes make the float fractions exact
        assert by_tensor == {"w": 1.0, "v": 1.0}

    def test_forgetting_kept_fraction_tracks_one_minus_p(self, rng):
        m = 1000
        im = norm_map("a", w=rng.permutation(m) / float(m - 1))
        for p in (0.3, 0.5, 0.7, 0.9):
            ms = masking.cross_masks([im], masking.forget_threshold(im, p))
            (row,) = masking.selection_stats(ms)
            assert abs(row[2] - (1 - p)) <= 2 / m

    def test_csv_format(self):
        rows = [("a", "w", 0.5), ("b", "w", 0.5)]
        csv = masking.stats_to_csv(rows)
        assert csv.splitlines()[0] == "task_id,tensor,kept_fraction"
        assert csv.splitlines()[1] == "a,w,0.5"


class TestMaskPersistence:
    def test_masks_save_as_mask_kind(self, tmp_path, rng):
        ims = [norm_map(t, w=rng.random(16)) for t in "ab"]
        ms = masking.cross_masks(ims, masking.cross_threshold(ims, 0.7))
        paths = masking.save_masks(lambda tid: tmp_path / f"{tid}.mask.tnsr", ms)
        from vecforge import store

        ps, kind, meta = store.load(paths[0])
        assert kind == "mask"
        assert meta["p"] == 0.7
        assert np.array_equal(ps["w"], ms.masks[0]["w"])
