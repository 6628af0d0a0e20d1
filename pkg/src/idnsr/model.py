"""The super-resolution network: FBlock, stacked DBlocks, RBlock.

Geometry conventions (fixed here, relied on by dataset alignment and eval):

  * All 3x3 convolutions use pad 1, so spatial size is constant inside blocks.
  * Train mode: the reconstruction transposed conv uses pad (k-1)/2, which for
    stride m turns an h-wide input into m*h - m + 1 columns -- the label size
    the patch pipeline produces. The bicubic skip is computed at m*h and
    center-cropped by floor((m-1)/2) leading / ceil((m-1)/2) trailing pixels.
  * Infer mode: pad floor((k-m)/2), then trim the (k-m) mod 2 leading rows and
    columns, giving exactly (m*h, m*w). The trim amounts are chosen so that an
    output pixel sees the same kernel taps relative to its high-res position
    as it did during training; without that, a trained checkpoint would be
    applied half a pixel out of phase at inference time.

In infer mode the skip and the final addition are carried out in float64 no
matter what the network computes in, so a zero residual reproduces the plain
bicubic upscale bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .imaging import resize_matrix
from .layers import (
    ConvSpec,
    LayerParams,
    Tape,
    add,
    channel_concat,
    channel_slice,
    conv2d,
    crop2d,
    leaky_relu,
    sep_linear2d,
    transposed_conv2d,
)
from .tensor import Tensor


@dataclass(frozen=True)
class IdnConfig:
    scale: int
    num_dblocks: int = 4
    d3: int = 64
    d: int = 16
    s: int = 4
    groups: int = 4
    lrelu_slope: float = 0.05
    rblock_kernel: int = 17
    feat_channels: int = 64

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.num_dblocks < 1:
            raise ConfigError("num_dblocks must be >= 1")
        if self.d3 < 1 or self.feat_channels < 1 or self.d < 0:
            raise ConfigError("channel counts must be positive")
        if self.d3 % self.s:
            raise ConfigError(f"d3={self.d3} must be divisible by s={self.s}")
        if self.d2 < 1:
            raise ConfigError(f"d3 - 2*d = {self.d2} must be >= 1")
        if self.d3 // self.s + self.feat_channels != self.d6:
            raise ConfigError(
                f"residual widths differ: d3/s + feat = {self.d3 // self.s + self.feat_channels}"
                f" but d6 = {self.d6}; the distilled/retained concat cannot add to P2")
        for name, width in (("d1", self.d1), ("d2", self.d2),
                            ("rest", self.rest_channels), ("d4", self.d4)):
            if width % self.groups:
                raise ConfigError(f"{name}={width} not divisible by groups={self.groups}")
        if not 0.0 <= self.lrelu_slope < 1.0:
            raise ConfigError("lrelu_slope must be in [0,1)")
        if self.rblock_kernel < self.scale:
            raise ConfigError("rblock_kernel must be >= scale")
        if self.rblock_kernel % 2 == 0:
            raise ConfigError("rblock_kernel must be odd (train geometry needs pad (k-1)/2)")

    # widths forced by the fixed deltas: D3-D1 = D1-D2 = d and D6-D4 = D4-D5 = d, D4 = D3
    @property
    def d1(self) -> int:
        return self.d3 - self.d

    @property
    def d2(self) -> int:
        return self.d3 - 2 * self.d

    @property
    def d4(self) -> int:
        return self.d3

    @property
    def d5(self) -> int:
        return self.d3 - self.d

    @property
    def d6(self) -> int:
        return self.d3 + self.d

    @property
    def slice_channels(self) -> int:
        return self.d3 // self.s

    @property
    def rest_channels(self) -> int:
        return self.d3 - self.d3 // self.s


def layer_specs(config: IdnConfig) -> Dict[str, ConvSpec]:
    """Canonical (name -> ConvSpec) map; the name order is the checkpoint contract."""
    c = config
    specs: Dict[str, ConvSpec] = {
        "fblock.conv1": ConvSpec(1, c.feat_channels, 3, 3, pad=1),
        "fblock.conv2": ConvSpec(c.feat_channels, c.feat_channels, 3, 3, pad=1),
    }
    for k in range(1, c.num_dblocks + 1):
        specs[f"dblock{k}.enh.conv1"] = ConvSpec(c.feat_channels, c.d1, 3, 3, pad=1)
        specs[f"dblock{k}.enh.conv2"] = ConvSpec(c.d1, c.d2, 3, 3, pad=1, groups=c.groups)
        specs[f"dblock{k}.enh.conv3"] = ConvSpec(c.d2, c.d3, 3, 3, pad=1)
        specs[f"dblock{k}.enh.conv4"] = ConvSpec(c.rest_channels, c.d4, 3, 3, pad=1, groups=c.groups)
        specs[f"dblock{k}.enh.conv5"] = ConvSpec(c.d4, c.d5, 3, 3, pad=1)
        specs[f"dblock{k}.enh.conv6"] = ConvSpec(c.d5, c.d6, 3, 3, pad=1)
        specs[f"dblock{k}.comp"] = ConvSpec(c.d6, c.feat_channels, 1, 1)
    specs["rblock"] = ConvSpec(c.feat_channels, 1, c.rblock_kernel, c.rblock_kernel,
                               stride=c.scale, pad=(c.rblock_kernel - 1) // 2)
    return specs


@dataclass
class ModelParams:
    """Named weight/bias collection in canonical layer order."""
    layers: Dict[str, LayerParams]

    def __getitem__(self, name: str) -> LayerParams:
        return self.layers[name]

    def names(self):
        return list(self.layers.keys())

    def named_tensors(self):
        """(name, tensor) pairs: '<layer>.weight' then '<layer>.bias', canonical order."""
        out = []
        for name, lp in self.layers.items():
            out.append((f"{name}.weight", lp.weight))
            out.append((f"{name}.bias", lp.bias))
        return out

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({n: LayerParams(lp.weight.astype(dtype), lp.bias.astype(dtype))
                            for n, lp in self.layers.items()})

    def copy(self) -> "ModelParams":
        return ModelParams({n: LayerParams(lp.weight.copy(), lp.bias.copy())
                            for n, lp in self.layers.items()})


def init_params(config: IdnConfig, seed: int, dtype=np.float32) -> ModelParams:
    """He-initialized weights (variance 2/fan_in, fan_in = in/groups * kh * kw), zero biases."""
    rng = np.random.default_rng(seed)
    params: Dict[str, LayerParams] = {}
    for name, spec in layer_specs(config).items():
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_h * spec.kernel_w
        std = np.sqrt(2.0 / fan_in)
        weight = (rng.standard_normal(spec.weight_shape) * std).astype(dtype)
        bias = np.zeros(spec.bias_shape, dtype=dtype)
        params[name] = LayerParams(Tensor(weight), Tensor(bias))
    return ModelParams(params)


def count_params(params: ModelParams) -> int:
    return sum(t.size for _, t in params.named_tensors())


def weighted_layer_count(config: IdnConfig) -> int:
    return len(layer_specs(config))


# ---------------------------------------------------------------------------
# forwards
# ---------------------------------------------------------------------------

def fblock_forward(x: Tensor, params: ModelParams, config: IdnConfig,
                   tape: Optional[Tape] = None) -> Tensor:
    """Two 3x3 convs with LReLU: 1-channel luminance -> feat_channels trunk."""
    if x.shape[1] != 1:
        raise ShapeError(f"feature extraction expects a 1-channel input, got {x.shape[1]}")
    c = config
    specs = layer_specs(c)
    out = conv2d(x, specs["fblock.conv1"], params["fblock.conv1"], tape)
    out = leaky_relu(out, c.lrelu_slope, tape)
    out = conv2d(out, specs["fblock.conv2"], params["fblock.conv2"], tape)
    return leaky_relu(out, c.lrelu_slope, tape)


def enhancement_forward(b_prev: Tensor, unit_params: Sequence[LayerParams],
                        config: IdnConfig, tape: Optional[Tape] = None) -> Tensor:
    """Distillation: short path keeps d3/s raw channels beside the trunk, the
    remaining d3 - d3/s go through three more convs; the two meet in a residual add."""
    c = config
    if b_prev.shape[1] != c.feat_channels:
        raise ShapeError(f"enhancement expects {c.feat_channels} channels, got {b_prev.shape[1]}")
    if len(unit_params) != 6:
        raise UsageError("enhancement unit needs exactly 6 layer params")
    widths = [
        ConvSpec(c.feat_channels, c.d1, 3, 3, pad=1),
        ConvSpec(c.d1, c.d2, 3, 3, pad=1, groups=c.groups),
        ConvSpec(c.d2, c.d3, 3, 3, pad=1),
        ConvSpec(c.rest_channels, c.d4, 3, 3, pad=1, groups=c.groups),
        ConvSpec(c.d4, c.d5, 3, 3, pad=1),
        ConvSpec(c.d5, c.d6, 3, 3, pad=1),
    ]
    p1 = b_prev
    for spec, lp in zip(widths[:3], unit_params[:3]):
        p1 = leaky_relu(conv2d(p1, spec, lp, tape), c.lrelu_slope, tape)
    retained, rest = channel_slice(p1, 1.0 / c.s, tape)
    shortcut = channel_concat(retained, b_prev, tape)
    p2 = rest
    for spec, lp in zip(widths[3:], unit_params[3:]):
        p2 = leaky_relu(conv2d(p2, spec, lp, tape), c.lrelu_slope, tape)
    return add(p2, shortcut, tape)


def compression_forward(p: Tensor, unit_params: LayerParams, config: IdnConfig,
                        tape: Optional[Tape] = None) -> Tensor:
    """1x1 conv distilling d6 channels back to the trunk width, with LReLU."""
    c = config
    if p.shape[1] != c.d6:
        raise ShapeError(f"compression expects {c.d6} channels, got {p.shape[1]}")
    spec = ConvSpec(c.d6, c.feat_channels, 1, 1)
    return leaky_relu(conv2d(p, spec, unit_params, tape), c.lrelu_slope, tape)


def idn_forward(x: Tensor, params: ModelParams, config: IdnConfig, mode: str = "train",
                tape: Optional[Tape] = None, capture: Optional[dict] = None) -> Tensor:
    """Full network: learned residual plus bicubic skip.

    Train mode keeps the input dtype and produces (m*h - m + 1) per side.
    Infer mode produces exactly (m*h, m*w) in float64 (see module docstring),
    accepts input of either precision (the conv trunk casts to the parameter
    dtype internally, the skip always uses the caller's samples), and does not
    support gradient recording.
    """
    if mode not in ("train", "infer"):
        raise UsageError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" and tape is not None:
        raise UsageError("gradients are recorded in train mode only")
    c = config
    m = c.scale
    k = c.rblock_kernel
    n, _, h, w = x.shape

    net_x = x
    if mode == "infer":
        param_dtype = next(iter(params.layers.values())).weight.dtype
        if x.dtype != param_dtype:
            net_x = x.astype(param_dtype)

    b = fblock_forward(net_x, params, config, tape)
    for i in range(1, c.num_dblocks + 1):
        unit = [params[f"dblock{i}.enh.conv{j}"] for j in range(1, 7)]
        p = enhancement_forward(b, unit, config, tape)
        if capture is not None:
            capture[f"enh{i}"] = p
        b = compression_forward(p, params[f"dblock{i}.comp"], config, tape)
        if capture is not None:
            capture[f"comp{i}"] = b

    if mode == "train":
        rspec = ConvSpec(c.feat_channels, 1, k, k, stride=m, pad=(k - 1) // 2)
        residual = transposed_conv2d(b, rspec, params["rblock"], tape)
        skip = sep_linear2d(x, resize_matrix(h, m * h), resize_matrix(w, m * w), tape)
        lead = (m - 1) // 2
        trail = m - 1 - lead
        if m > 1:
            skip = crop2d(skip, lead, trail, lead, trail, tape)
        return add(residual, skip, tape)

    q = (k - m) // 2
    e = (k - m) % 2
    rspec = ConvSpec(c.feat_channels, 1, k, k, stride=m, pad=q)
    residual = transposed_conv2d(b, rspec, params["rblock"])
    if e:
        residual = crop2d(residual, e, 0, e, 0)
    skip = resize_matrix(h, m * h) @ x.data.astype(np.float64) @ resize_matrix(w, m * w).T
    return Tensor(residual.data.astype(np.float64) + skip)
