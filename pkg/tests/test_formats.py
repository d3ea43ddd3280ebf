import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualpath.errors import FormatError, ParseError, TruncationError
from dualpath.formats import (
    load_dataset,
    load_model,
    model_bytes,
    read_model_bytes,
    save_dataset,
    save_model,
)
from dualpath.nn import PatchBatch, init_params, params_equal


def f32_net(dims, hidden="dual", tied=False, seed=0):
    """Random network whose parameters are exactly representable in float32."""
    rng = np.random.default_rng(seed)
    p = init_params(dims, hidden, rng, tied=tied)
    vec = rng.normal(size=p.n_params).astype(np.float32).astype(np.float64)
    return p.with_vector(vec)


def small_batch(n=37, d_in=9, d_out=4, seed=0):
    rng = np.random.default_rng(seed)
    return PatchBatch(rng.normal(size=(n, d_in)).astype(np.float32),
                      rng.normal(size=(n, d_out)).astype(np.float32),
                      rng.uniform(size=n).astype(np.float32))


class TestDataset:
    def test_roundtrip_bitwise(self, tmp_path):
        b = small_batch()
        save_dataset(b, tmp_path / "d.dpds")
        c = load_dataset(tmp_path / "d.dpds")
        assert c.X.tobytes() == b.X.tobytes()
        assert c.Y.tobytes() == b.Y.tobytes()
        assert c.dc.tobytes() == b.dc.tobytes()
        save_dataset(c, tmp_path / "e.dpds")
        assert (tmp_path / "d.dpds").read_bytes() == (tmp_path / "e.dpds").read_bytes()

    def test_layout(self, tmp_path):
        b = PatchBatch(np.array([[1.0, 2.0]]), np.array([[3.0]]), np.array([4.0]))
        save_dataset(b, tmp_path / "d.dpds")
        data = (tmp_path / "d.dpds").read_bytes()
        assert data == b"DPDS" + struct.pack("<IQII", 1, 1, 2, 1) + struct.pack("<4f", 1, 2, 3, 4)

    def test_bad_magic(self, tmp_path):
        save_dataset(small_batch(), tmp_path / "d.dpds")
        data = bytearray((tmp_path / "d.dpds").read_bytes())
        data[0:4] = b"XXXX"
        (tmp_path / "d.dpds").write_bytes(bytes(data))
        with pytest.raises(FormatError) as info:
            load_dataset(tmp_path / "d.dpds")
        assert info.value.offset == 0

    def test_truncated(self, tmp_path):
        save_dataset(small_batch(), tmp_path / "d.dpds")
        data = (tmp_path / "d.dpds").read_bytes()
        (tmp_path / "t.dpds").write_bytes(data[:-3])
        with pytest.raises(TruncationError):
            load_dataset(tmp_path / "t.dpds")
        (tmp_path / "h.dpds").write_bytes(data[:10])
        with pytest.raises(TruncationError):
            load_dataset(tmp_path / "h.dpds")

    def test_trailing_bytes(self, tmp_path):
        save_dataset(small_batch(), tmp_path / "d.dpds")
        with open(tmp_path / "d.dpds", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(ParseError):
            load_dataset(tmp_path / "d.dpds")


class TestModel:
    @pytest.mark.parametrize("dims,hidden,tied", [
        ([9, 6, 4], "dual", False),
        ([9, 5, 9], "rectifier", True),
        ([9, 5, 9], "dual", True),
        ([4, 3, 3, 2], "tanh", False),
    ])
    def test_roundtrip_bitwise(self, tmp_path, dims, hidden, tied):
        p = f32_net(dims, hidden, tied)
        save_model(p, tmp_path / "m.dprn")
        q = load_model(tmp_path / "m.dprn")
        assert params_equal(p, q)
        assert model_bytes(q) == (tmp_path / "m.dprn").read_bytes()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 12), min_size=2, max_size=4))
    def test_roundtrip_property(self, seed, dims):
        p = f32_net(dims, "dual", seed=seed)
        assert params_equal(read_model_bytes(model_bytes(p)), p)

    def test_header_is_canonical_json(self):
        data = model_bytes(f32_net([3, 2, 1]))
        assert data[:4] == b"DPRN"
        _, version, hlen = struct.unpack_from("<4sII", data)
        header = data[12:12 + hlen]
        parsed = json.loads(header)
        assert version == 1
        assert header == json.dumps(parsed, sort_keys=True, separators=(",", ":")).encode()
        assert parsed["n_params"] == (len(data) - 12 - hlen) // 4

    def test_bad_magic_and_version(self):
        data = bytearray(model_bytes(f32_net([3, 2, 1])))
        with pytest.raises(FormatError):
            read_model_bytes(b"NOPE" + bytes(data[4:]))
        data[4] = 9
        with pytest.raises(FormatError) as info:
            read_model_bytes(bytes(data))
        assert info.value.offset == 4

    def test_truncated_and_trailing(self):
        data = model_bytes(f32_net([3, 2, 1]))
        with pytest.raises(TruncationError):
            read_model_bytes(data[:-1])
        with pytest.raises(TruncationError):
            read_model_bytes(data[:20])
        with pytest.raises(ParseError):
            read_model_bytes(data + b"\0")

    def test_bad_json(self):
        data = model_bytes(f32_net([3, 2, 1]))
        hlen = struct.unpack_from("<I", data, 8)[0]
        broken = data[:12] + b"{" + b" " * (hlen - 1) + data[12 + hlen:]
        with pytest.raises(ParseError) as info:
            read_model_bytes(broken)
        assert info.value.offset == 12

    def test_non_finite_parameter(self):
        data = bytearray(model_bytes(f32_net([3, 2, 1])))
        data[-4:] = struct.pack("<f", float("nan"))
        with pytest.raises(ParseError) as info:
            read_model_bytes(bytes(data))
        assert info.value.offset == len(data) - 4
