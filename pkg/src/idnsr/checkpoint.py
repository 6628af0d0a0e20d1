"""Binary weight checkpoints and the training resume sidecar.

Weight file layout (little-endian throughout):

    magic   b"IDNW"
    version u32 (currently 1)
    config  scale, num_dblocks, d3, d, s, groups, feat_channels as u32,
            lrelu_slope as f32
    then one record per tensor, canonical layer order, weight before bias:
            name_len u32, name UTF-8, shape 4 x u32, raw '<f4' data

The reconstruction kernel size is not stored; it is recovered from the
"rblock.weight" record shape. Readers reject unknown magic or version.

The resume sidecar (magic b"IDNR") carries everything needed to continue a
run bit-exactly: global iteration, phase name, optimizer step count, the
PCG64 generator state, and the Adam moment tensors in the same record
encoding as the weight file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .errors import DataError, ShapeError, UsageError
from .layers import LayerParams
from .model import IdnConfig, ModelParams, layer_specs
from .tensor import Tensor

WEIGHT_MAGIC = b"IDNW"
RESUME_MAGIC = b"IDNR"
FORMAT_VERSION = 1

_CONFIG_STRUCT = struct.Struct("<7If")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def _write_record(fh, name: str, data: np.ndarray) -> None:
    if data.ndim != 4:
        raise ShapeError(f"record {name!r} must be 4-d, got {data.ndim}-d")
    encoded = name.encode("utf-8")
    fh.write(_U32.pack(len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<4I", *data.shape))
    fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_record(fh) -> Tuple[str, np.ndarray]:
    (name_len,) = _U32.unpack(_read_exact(fh, 4))
    if name_len == 0 or name_len > 256:
        raise DataError(f"implausible record name length {name_len}")
    name = _read_exact(fh, name_len).decode("utf-8")
    shape = struct.unpack("<4I", _read_exact(fh, 16))
    count = int(np.prod(shape, dtype=np.int64))
    raw = _read_exact(fh, 4 * count)
    data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    return name, data


def save_params(path, params: ModelParams, config: IdnConfig) -> None:
    """Write weights in the binary checkpoint format; params must match config."""
    specs = layer_specs(config)
    if list(params.layers.keys()) != list(specs.keys()):
        raise ShapeError(
            f"parameter names {list(params.layers.keys())} do not match the"
            f" configured layers {list(specs.keys())}")
    for name, spec in specs.items():
        lp = params[name]
        if lp.weight.shape != spec.weight_shape or lp.bias.shape != spec.bias_shape:
            raise ShapeError(f"layer {name!r} shaped {lp.weight.shape}, config"
                             f" wants {spec.weight_shape}")
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(_U32.pack(FORMAT_VERSION))
        fh.write(_CONFIG_STRUCT.pack(config.scale, config.num_dblocks, config.d3,
                                     config.d, config.s, config.groups,
                                     config.feat_channels,
                                     np.float32(config.lrelu_slope)))
        for name, tensor in params.named_tensors():
            _write_record(fh, name, tensor.data)


def load_params(path) -> Tuple[ModelParams, IdnConfig]:
    """Read a weight checkpoint back into (params, config).

    The file must contain exactly the canonical record sequence for its own
    config block; anything else (unknown magic/version, missing or reordered
    records, shape drift, trailing bytes) raises DataError.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != WEIGHT_MAGIC:
            raise DataError(f"not a weight checkpoint (magic {magic!r})")
        (version,) = _U32.unpack(_read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        fields = _CONFIG_STRUCT.unpack(_read_exact(fh, _CONFIG_STRUCT.size))
        scale, num_dblocks, d3, d, s, groups, feat_channels = fields[:7]
        slope = float(np.float32(fields[7]))

        records = []
        while True:
            probe = fh.read(1)
            if probe == b"":
                break
            fh.seek(-1, 1)
            records.append(_read_record(fh))

    by_name = dict(records)
    if len(by_name) != len(records):
        raise DataError("duplicate record names in checkpoint")
    rblock_w = by_name.get("rblock.weight")
    if rblock_w is None:
        raise DataError("checkpoint has no rblock.weight record")
    if rblock_w.shape[2] != rblock_w.shape[3]:
        raise DataError(f"rblock kernel not square: {rblock_w.shape}")
    kernel = int(rblock_w.shape[2])

    config = IdnConfig(scale=int(scale), num_dblocks=int(num_dblocks), d3=int(d3),
                       d=int(d), s=int(s), groups=int(groups), lrelu_slope=slope,
                       rblock_kernel=kernel, feat_channels=int(feat_channels))
    specs = layer_specs(config)
    expected = [f"{layer}.{part}" for layer in specs for part in ("weight", "bias")]
    got = [name for name, _ in records]
    if got != expected:
        raise DataError(f"record names {got} do not match the canonical"
                        f" sequence {expected}")

    layers: Dict[str, LayerParams] = {}
    for layer, spec in specs.items():
        weight = by_name[f"{layer}.weight"]
        bias = by_name[f"{layer}.bias"]
        if weight.shape != spec.weight_shape or bias.shape != spec.bias_shape:
            raise DataError(f"layer {layer!r} stored as {weight.shape}/{bias.shape},"
                            f" config demands {spec.weight_shape}/{spec.bias_shape}")
        layers[layer] = LayerParams(Tensor(weight), Tensor(bias))
    return ModelParams(layers), config


@dataclass
class ResumeState:
    """Everything beyond the weights needed to continue a training run."""
    iteration: int
    phase: str
    adam_t: int
    rng_state: dict
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]


def _pack_rng(state: dict) -> bytes:
    if state.get("bit_generator") != "PCG64":
        raise UsageError(f"only PCG64 generator state is supported,"
                         f" got {state.get('bit_generator')!r}")
    inner = state["state"]
    return (int(inner["state"]).to_bytes(16, "little")
            + int(inner["inc"]).to_bytes(16, "little")
            + _U32.pack(int(state["has_uint32"]))
            + _U32.pack(int(state["uinteger"])))


def _unpack_rng(buf: bytes) -> dict:
    return {
        "bit_generator": "PCG64",
        "state": {"state": int.from_bytes(buf[:16], "little"),
                  "inc": int.from_bytes(buf[16:32], "little")},
        "has_uint32": _U32.unpack(buf[32:36])[0],
        "uinteger": _U32.unpack(buf[36:40])[0],
    }


def save_resume(path, state: ResumeState) -> None:
    if state.iteration < 0 or state.adam_t < 0:
        raise UsageError("iteration and adam_t must be non-negative")
    if set(state.adam_m.keys()) != set(state.adam_v.keys()):
        raise ShapeError("adam moment dictionaries must share keys")
    phase = state.phase.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(RESUME_MAGIC)
        fh.write(_U32.pack(FORMAT_VERSION))
        fh.write(_U64.pack(state.iteration))
        fh.write(_U32.pack(len(phase)))
        fh.write(phase)
        fh.write(_U64.pack(state.adam_t))
        fh.write(_pack_rng(state.rng_state))
        fh.write(_U32.pack(2 * len(state.adam_m)))
        for name in state.adam_m:
            _write_record(fh, f"{name}.m", state.adam_m[name])
            _write_record(fh, f"{name}.v", state.adam_v[name])


def load_resume(path) -> ResumeState:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != RESUME_MAGIC:
            raise DataError(f"not a resume sidecar (magic {magic!r})")
        (version,) = _U32.unpack(_read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported resume version {version}")
        (iteration,) = _U64.unpack(_read_exact(fh, 8))
        (phase_len,) = _U32.unpack(_read_exact(fh, 4))
        if phase_len > 64:
            raise DataError(f"implausible phase name length {phase_len}")
        phase = _read_exact(fh, phase_len).decode("utf-8")
        (adam_t,) = _U64.unpack(_read_exact(fh, 8))
        rng_state = _unpack_rng(_read_exact(fh, 40))
        (n_records,) = _U32.unpack(_read_exact(fh, 4))
        adam_m: Dict[str, np.ndarray] = {}
        adam_v: Dict[str, np.ndarray] = {}
        for _ in range(n_records):
            name, data = _read_record(fh)
            if name.endswith(".m"):
                adam_m[name[:-2]] = data
            elif name.endswith(".v"):
                adam_v[name[:-2]] = data
            else:
                raise DataError(f"moment record {name!r} lacks .m/.v suffix")
        if fh.read(1) != b"":
            raise DataError("trailing bytes after resume records")
    if set(adam_m.keys()) != set(adam_v.keys()):
        raise DataError("resume sidecar has unpaired moment records")
    return ResumeState(iteration=int(iteration), phase=phase, adam_t=int(adam_t),
                       rng_state=rng_state, adam_m=adam_m, adam_v=adam_v)
