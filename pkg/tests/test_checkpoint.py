"""Checkpoint format: byte-level layout, round-trips, rejection paths."""

import struct

import numpy as np
import pytest

from idnsr.checkpoint import (
    FORMAT_VERSION,
    RESUME_MAGIC,
    WEIGHT_MAGIC,
    ResumeState,
    load_params,
    load_resume,
    save_params,
    save_resume,
)
from idnsr.errors import DataError, ShapeError, UsageError
from idnsr.layers import Tape, backward
from idnsr.model import IdnConfig, ModelParams, idn_forward, init_params, layer_specs
from idnsr.tensor import Tensor


def decode_weight_file(raw: bytes):
    """Independent struct-by-struct reader used as a layout oracle."""
    assert raw[:4] == b"IDNW"
    (version,) = struct.unpack_from("<I", raw, 4)
    fields = struct.unpack_from("<7If", raw, 8)
    offset = 8 + struct.calcsize("<7If")
    records = []
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        shape = struct.unpack_from("<4I", raw, offset)
        offset += 16
        count = int(np.prod(shape))
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        records.append((name, data.reshape(shape)))
    assert offset == len(raw)
    return version, fields, records


class TestWeightRoundTrip:

    def test_round_trip_bitwise(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=5)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        loaded, config = load_params(path)
        assert config.scale == tiny_config.scale
        assert config.num_dblocks == tiny_config.num_dblocks
        assert config.d3 == tiny_config.d3
        assert config.d == tiny_config.d
        assert config.s == tiny_config.s
        assert config.groups == tiny_config.groups
        assert config.feat_channels == tiny_config.feat_channels
        assert config.rblock_kernel == tiny_config.rblock_kernel
        # the slope survives as its float32 quantization
        assert config.lrelu_slope == float(np.float32(tiny_config.lrelu_slope))
        assert loaded.names() == params.names()
        for (name_a, t_a), (name_b, t_b) in zip(params.named_tensors(),
                                                loaded.named_tensors()):
            assert name_a == name_b
            np.testing.assert_array_equal(t_a.data, t_b.data)

    def test_loaded_params_forward_bitwise(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=6)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        loaded, config = load_params(path)
        x = Tensor(np.random.default_rng(6).random((2, 1, 9, 9)).astype(np.float32))
        out_a = idn_forward(x, params, tiny_config)
        out_b = idn_forward(x, loaded, config)
        np.testing.assert_array_equal(out_a.data, out_b.data)

    def test_save_is_deterministic(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=7)
        a, b = tmp_path / "a.idn", tmp_path / "b.idn"
        save_params(a, params, tiny_config)
        save_params(b, params, tiny_config)
        assert a.read_bytes() == b.read_bytes()

    def test_save_load_save_idempotent(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=8)
        first, second = tmp_path / "a.idn", tmp_path / "b.idn"
        save_params(first, params, tiny_config)
        loaded, config = load_params(first)
        save_params(second, loaded, config)
        assert first.read_bytes() == second.read_bytes()

    def test_kernel_size_recovered_from_record(self, tmp_path):
        config = IdnConfig(scale=3, num_dblocks=1, d3=8, d=2, s=4, groups=2,
                           feat_channels=8, rblock_kernel=9)
        params = init_params(config, seed=9)
        path = tmp_path / "w.idn"
        save_params(path, params, config)
        _, loaded_config = load_params(path)
        assert loaded_config.rblock_kernel == 9


class TestWeightLayout:

    def test_header_bytes(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=10)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        raw = path.read_bytes()
        assert raw[:4] == WEIGHT_MAGIC == b"IDNW"
        version, fields, _ = decode_weight_file(raw)
        assert version == FORMAT_VERSION == 1
        assert fields[:7] == (2, 1, 8, 2, 4, 2, 8)
        assert fields[7] == np.float32(0.05)

    def test_records_match_independent_decoder(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=11)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        _, _, records = decode_weight_file(path.read_bytes())
        expected = params.named_tensors()
        assert [name for name, _ in records] == [name for name, _ in expected]
        for (_, got), (_, tensor) in zip(records, expected):
            np.testing.assert_array_equal(got, tensor.data)

    def test_record_order_is_weight_then_bias_per_layer(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=12)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        _, _, records = decode_weight_file(path.read_bytes())
        names = [name for name, _ in records]
        layers = list(layer_specs(tiny_config).keys())
        assert names == [f"{layer}.{part}" for layer in layers
                         for part in ("weight", "bias")]


class TestWeightRejection:

    @pytest.fixture
    def saved(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=13)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        return path

    def test_rejects_bad_magic(self, saved):
        raw = bytearray(saved.read_bytes())
        raw[:4] = b"XXXX"
        saved.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            load_params(saved)

    def test_rejects_unknown_version(self, saved):
        raw = bytearray(saved.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        saved.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            load_params(saved)

    def test_rejects_truncation(self, saved):
        raw = saved.read_bytes()
        saved.write_bytes(raw[:-10])
        with pytest.raises(DataError):
            load_params(saved)

    def test_rejects_trailing_garbage(self, saved):
        saved.write_bytes(saved.read_bytes() + b"\x00" * 8)
        with pytest.raises(DataError):
            load_params(saved)

    def test_rejects_tampered_record_name(self, saved):
        raw = saved.read_bytes().replace(b"fblock.conv1.weight",
                                         b"fblock.convX.weight", 1)
        saved.write_bytes(raw)
        with pytest.raises(DataError):
            load_params(saved)

    def test_save_rejects_config_mismatch(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=14)
        wider = IdnConfig(scale=2, num_dblocks=1, d3=16, d=4, s=4, groups=2,
                          feat_channels=16)
        with pytest.raises(ShapeError):
            save_params(tmp_path / "w.idn", params, wider)

    def test_rejects_nonexistent_path(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_params(tmp_path / "missing.idn")


class TestResumeSidecar:

    def make_state(self, tiny_config):
        rng = np.random.default_rng(20)
        rng.random(100)
        params = init_params(tiny_config, seed=20)
        adam_m = {name: rng.random(t.shape).astype(np.float32)
                  for name, t in params.named_tensors()}
        adam_v = {name: rng.random(t.shape).astype(np.float32)
                  for name, t in params.named_tensors()}
        return ResumeState(iteration=12345, phase="mae_train", adam_t=77,
                           rng_state=rng.bit_generator.state,
                           adam_m=adam_m, adam_v=adam_v)

    def test_round_trip(self, tiny_config, tmp_path):
        state = self.make_state(tiny_config)
        path = tmp_path / "r.idn"
        save_resume(path, state)
        loaded = load_resume(path)
        assert loaded.iteration == 12345
        assert loaded.phase == "mae_train"
        assert loaded.adam_t == 77
        assert loaded.rng_state == state.rng_state
        assert set(loaded.adam_m) == set(state.adam_m)
        for name in state.adam_m:
            np.testing.assert_array_equal(loaded.adam_m[name], state.adam_m[name])
            np.testing.assert_array_equal(loaded.adam_v[name], state.adam_v[name])

    def test_rng_stream_continues_bitwise(self, tiny_config, tmp_path):
        state = self.make_state(tiny_config)
        reference = np.random.default_rng()
        reference.bit_generator.state = state.rng_state
        expected = reference.random(50)

        path = tmp_path / "r.idn"
        save_resume(path, state)
        resumed = np.random.default_rng()
        resumed.bit_generator.state = load_resume(path).rng_state
        np.testing.assert_array_equal(resumed.random(50), expected)

    def test_magic_and_version(self, tiny_config, tmp_path):
        path = tmp_path / "r.idn"
        save_resume(path, self.make_state(tiny_config))
        raw = path.read_bytes()
        assert raw[:4] == RESUME_MAGIC == b"IDNR"
        assert struct.unpack_from("<I", raw, 4)[0] == FORMAT_VERSION

    def test_rejects_weight_file(self, tiny_config, tmp_path):
        params = init_params(tiny_config, seed=21)
        path = tmp_path / "w.idn"
        save_params(path, params, tiny_config)
        with pytest.raises(DataError):
            load_resume(path)

    def test_rejects_truncation(self, tiny_config, tmp_path):
        path = tmp_path / "r.idn"
        save_resume(path, self.make_state(tiny_config))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DataError):
            load_resume(path)

    def test_rejects_non_pcg64_state(self, tiny_config, tmp_path):
        state = self.make_state(tiny_config)
        state.rng_state = {"bit_generator": "MT19937"}
        with pytest.raises(UsageError):
            save_resume(tmp_path / "r.idn", state)

    def test_rejects_unpaired_moments(self, tiny_config, tmp_path):
        state = self.make_state(tiny_config)
        state.adam_v = dict(state.adam_v)
        del state.adam_v["rblock.bias"]
        with pytest.raises(ShapeError):
            save_resume(tmp_path / "r.idn", state)
