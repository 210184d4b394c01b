import json
import struct

import numpy as np
import pytest

from vecforge import errors, store
from vecforge.tensor import ParamSet

from conftest import random_params


def roundtrip(ps, kind="params", meta=None):
    return store.load_bytes(store.dump_bytes(ps, kind, meta))


class TestRoundTrip:
    @pytest.mark.parametrize("kind", ["params", "importance"])
    def test_values_names_meta_survive(self, kind):
        ps = ParamSet(
            {
                "layer1.weight": np.random.default_rng(0).standard_normal((4, 3)),
                "layer1.bias": np.zeros(3, dtype=np.float32),
            }
        )
        back, got_kind, meta = roundtrip(ps, kind, {"task_id": "t", "metric": "lp"})
        assert got_kind == kind
        assert meta["task_id"] == "t"
        assert back.names() == ps.names()
        for name in ps:
            assert back[name].dtype == ps[name].dtype
            assert np.array_equal(back[name], ps[name])

    def test_taskvec_roundtrip(self):
        ps = random_params(3)
        back, kind, meta = roundtrip(ps, "taskvec", {"task_id": "a", "base_digest": "d" * 64})
        assert (kind, meta["task_id"], meta["base_digest"]) == ("taskvec", "a", "d" * 64)
        assert back.content_digest() == ps.content_digest()

    def test_mask_roundtrip(self):
        mask = ParamSet({"m": np.array([0.0, 1.0, 1.0, 0.0])})
        back, kind, _ = roundtrip(mask, "mask", {"task_id": "a"})
        assert np.array_equal(back["m"], mask["m"])

    def test_save_is_deterministic(self):
        ps = random_params(5)
        meta = {"task_id": "x", "base_digest": "y"}
        assert store.dump_bytes(ps, "taskvec", meta) == store.dump_bytes(ps, "taskvec", meta)

    def test_file_roundtrip(self, tmp_path):
        ps = random_params(9)
        path = tmp_path / f"m{store.EXTENSION}"
        store.save(path, ps, "params")
        back, kind, _ = store.load(path)
        assert kind == "params"
        assert back.content_digest() == ps.content_digest()


class TestValidation:
    def test_mask_with_fractional_value_rejected(self):
        bad = ParamSet({"m": np.array([0.0, 0.5])})
        with pytest.raises(errors.InvalidMask):
            store.dump_bytes(bad, "mask", {})

    def test_taskvec_requires_provenance(self):
        with pytest.raises(errors.InvalidMeta):
            store.dump_bytes(random_params(1), "taskvec", {"task_id": "t"})

    def test_unknown_kind(self):
        with pytest.raises(errors.InvalidMeta):
            store.dump_bytes(random_params(1), "weights", {})

    def test_truncated_payload(self):
        blob = store.dump_bytes(random_params(2), "params")
        with pytest.raises(errors.TruncatedPayload):
            store.load_bytes(blob[:-8])

    def test_header_length_exceeding_file(self):
        blob = store.dump_bytes(random_params(2), "params")
        bad = struct.pack("<Q", len(blob) * 2) + blob[8:]
        with pytest.raises(errors.CorruptHeader):
            store.load_bytes(bad)

    def test_garbage_header(self):
        bad = struct.pack("<Q", 4) + b"nope" + b"\x00" * 16
        with pytest.raises(errors.CorruptHeader):
            store.load_bytes(bad)

    def test_trailing_payload_bytes(self):
        blob = store.dump_bytes(random_params(2), "params")
        with pytest.raises(errors.CorruptHeader):
            store.load_bytes(blob + b"\x00" * 4)

    def test_nan_payload_rejected(self):
        ps = ParamSet({"x": np.zeros(2)})
        blob = bytearray(store.dump_bytes(ps, "params"))
        blob[-8:] = struct.pack("<d", float("nan"))
        with pytest.raises(errors.NonFiniteValue):
            store.load_bytes(bytes(blob))


def _build_raw(header: dict, payload: bytes) -> bytes:
    body = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return struct.pack("<Q", len(body)) + body + payload


class TestHandBuiltContainers:
    META = {"kind": "params", "task_id": "", "base_digest": "", "metric": None}

    def test_two_tensor_file_loads_in_name_order(self):
        # "b" precedes "z" lexicographically; offsets tile the payload.
        payload = struct.pack("<4d", 1.0, 2.0, 3.0, 4.0)
        header = {
            "__meta__": self.META,
            "z": {"dtype": "F64", "shape": [1], "data_offsets": [24, 32]},
            "b": {"dtype": "F64", "shape": [3], "data_offsets": [0, 24]},
        }
        ps, kind, _ = store.load_bytes(_build_raw(header, payload))
        assert ps.names() == ("b", "z")
        assert np.array_equal(ps["b"], [1.0, 2.0, 3.0])
        assert np.array_equal(ps["z"], [4.0])

    def test_overlapping_offsets_rejected(self):
        payload = struct.pack("<4d", 1.0, 2.0, 3.0, 4.0)
        header = {
            "__meta__": self.META,
            "a": {"dtype": "F64", "shape": [3], "data_offsets": [0, 24]},
            "b": {"dtype": "F64", "shape": [2], "data_offsets": [16, 32]},
        }
        with pytest.raises(errors.OffsetOverlap):
            store.load_bytes(_build_raw(header, payload))

    def test_gap_between_offsets_rejected(self):
        payload = struct.pack("<4d", 1.0, 2.0, 3.0, 4.0)
        header = {
            "__meta__": self.META,
            "a": {"dtype": "F64", "shape": [1], "data_offsets": [0, 8]},
            "b": {"dtype": "F64", "shape": [1], "data_offsets": [24, 32]},
        }
        with pytest.raises(errors.OffsetOverlap):
            store.load_bytes(_build_raw(header, payload))

    def test_size_not_matching_shape_rejected(self):
        payload = struct.pack("<2d", 1.0, 2.0)
        header = {
            "__meta__": self.META,
            "a": {"dtype": "F64", "shape": [3], "data_offsets": [0, 16]},
        }
        with pytest.raises(errors.OffsetOverlap):
            store.load_bytes(_build_raw(header, payload))

    def test_fuzzed_offset_mutations_never_load_silently(self):
        ps = random_params(21, names=("n1", "n2"), shape=(2, 2))
        blob = store.dump_bytes(ps, "params")
        (hl,) = struct.unpack("<Q", blob[:8])
        header = json.loads(blob[8 : 8 + hl])
        payload = blob[8 + hl :]
        r = np.random.default_rng(0)
        for _ in range(50):
            mutated = json.loads(json.dumps(header))
            name = r.choice(["n1", "n2"])
            field = r.choice(["begin", "end"])
            bump = int(r.integers(-16, 17)) or 8
            offs = mutated[name]["data_offsets"]
            offs[0 if field == "begin" else 1] += bump
            try:
                back, _, _ = store.load_bytes(_build_raw(mutated, payload))
            except errors.VecforgeError:
                continue
            # A mutation that still loads must not silently change values.
            assert back.content_digest() == ps.content_digest()


class TestDigests:
    def test_schema_digest_stable_across_save(self, tmp_path):
        ps = random_params(2)
        path = tmp_path / "x.tnsr"
        store.save(path, ps, "params")
        back, _, _ = store.load(path)
        assert store.schema_digest(back) == store.schema_digest(ps)
