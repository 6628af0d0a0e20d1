"""Layer forward/backward kernels and the reverse-mode tape.

The production convolution lowers each (grouped) convolution to a per-group
GEMM through im2col; transposed convolution reuses the same machinery in the
adjoint direction (matmul into column space, then a scatter-accumulate
col2im). A naive per-element oracle for both lives in the test tree and is
the ground truth every equivalence test compares against.

Conventions fixed here for the whole package:
  - cross-correlation (no kernel flip), zero padding;
  - weight layout (out_channels, in_channels/groups, kh, kw) for both
    convolution directions; bias shaped (1, out_channels, 1, 1);
  - channel_slice keeps the FIRST c/s channels in its retained part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Tuple

import numpy as np

from .errors import ShapeError, StateError, UsageError
from .tensor import Tensor


# ---------------------------------------------------------------------------
# specs and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0
    groups: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "groups"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvSpec.{name} must be >= 1")
        if self.pad < 0:
            raise ShapeError("ConvSpec.pad must be >= 0")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible "
                f"by groups={self.groups}")

    @property
    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    @property
    def bias_shape(self) -> tuple:
        return (1, self.out_channels, 1, 1)


@dataclass
class LayerParams:
    weight: Tensor
    bias: Tensor


def _check_params(spec: ConvSpec, params: LayerParams, x: Tensor) -> None:
    if params.weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {params.weight.shape} != {spec.weight_shape}")
    if params.bias.shape != spec.bias_shape:
        raise ShapeError(f"bias shape {params.bias.shape} != {spec.bias_shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if params.weight.dtype != x.dtype or params.bias.dtype != x.dtype:
        raise ShapeError("parameter dtype does not match input dtype")


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

# A node's fn maps the gradients of its outputs to (input-or-parameter, grad)
# contributions. Gradients accumulate with += when a tensor fans out.
BackwardFn = Callable[[Tuple[np.ndarray, ...]], List[Tuple[Tensor, np.ndarray]]]


@dataclass
class GradNode:
    outputs: Tuple[Tensor, ...]
    fn: BackwardFn
    name: str = ""


@dataclass
class Tape:
    nodes: List[GradNode] = field(default_factory=list)

    def record(self, outputs: Tuple[Tensor, ...], fn: BackwardFn, name: str = "") -> None:
        self.nodes.append(GradNode(outputs, fn, name))

    @property
    def final_output(self) -> Tensor:
        if not self.nodes:
            raise StateError("tape is empty; run a forward pass first")
        return self.nodes[-1].outputs[0]


def backward(tape: Tape, loss_grad: Tensor) -> dict:
    """Reverse the tape once, in exact reverse order of recording.

    Returns a map keyed by tensor identity: parameters, the network input,
    and every intermediate that received a gradient. Outputs that never fed
    the loss contribute zeros.
    """
    final = tape.final_output
    if loss_grad.shape != final.shape:
        raise ShapeError(f"loss grad shape {loss_grad.shape} != output shape {final.shape}")
    if loss_grad.dtype != final.dtype:
        raise ShapeError("loss grad dtype does not match output dtype")
    grads: dict = {final: loss_grad.data.copy()}
    for node in reversed(tape.nodes):
        out_grads = [grads.get(o) for o in node.outputs]
        if all(g is None for g in out_grads):
            continue
        full = tuple(
            g if g is not None else np.zeros(o.shape, dtype=o.dtype)
            for g, o in zip(out_grads, node.outputs))
        for target, contrib in node.fn(full):
            existing = grads.get(target)
            grads[target] = contrib if existing is None else existing + contrib
    return {t: Tensor(g) for t, g in grads.items()}


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """(n,c,H,W) zero-padded input -> (n, c*kh*kw, ho*wo) column matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return cols, ho, wo


def _col2im(cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-accumulate columns back onto the padded grid."""
    n = cols.shape[0]
    blocks = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += blocks[:, :, i, j]
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} larger than padded input {size + 2 * pad}")
    if span % stride:
        raise ShapeError(f"non-integral output size: ({size}+2*{pad}-{kernel})/{stride}")
    return span // stride + 1


def _conv2d_fwd(x, w, b, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(n, cin, ho * wo)
    else:
        cols, ho, wo = _im2col(xp, kh, kw, stride)
    kdim = cg * kh * kw
    cog = cout // groups
    if groups == 1:
        out = np.matmul(w.reshape(cout, kdim), cols)
    else:
        parts = [np.matmul(w[g * cog:(g + 1) * cog].reshape(cog, kdim),
                           cols[:, g * kdim:(g + 1) * kdim])
                 for g in range(groups)]
        out = np.concatenate(parts, axis=1)
    return out.reshape(n, cout, ho, wo) + b.reshape(1, cout, 1, 1)


def _conv2d_bwd(x, w, go, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    _, _, ho, wo = go.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(n, cin, ho * wo)
    else:
        cols, _, _ = _im2col(xp, kh, kw, stride)
    go_mat = go.reshape(n, cout, ho * wo)
    kdim = cg * kh * kw
    cog = cout // groups
    gw = np.empty_like(w)
    gcols_parts = []
    for g in range(groups):
        go_g = go_mat[:, g * cog:(g + 1) * cog]
        cols_g = cols[:, g * kdim:(g + 1) * kdim]
        gw_g = np.matmul(go_g, cols_g.transpose(0, 2, 1)).sum(axis=0)
        gw[g * cog:(g + 1) * cog] = gw_g.reshape(cog, cg, kh, kw)
        w_g = w[g * cog:(g + 1) * cog].reshape(cog, kdim)
        gcols_parts.append(np.matmul(w_g.T, go_g))
    gcols = gcols_parts[0] if groups == 1 else np.concatenate(gcols_parts, axis=1)
    if kh == 1 and kw == 1 and stride == 1:
        gxp = gcols.reshape(n, cin, h + 2 * pad, wd + 2 * pad)
    else:
        gxp = _col2im(gcols, cin, h + 2 * pad, wd + 2 * pad, kh, kw, stride, ho, wo)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    gb = go.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
    return gx, gw, gb


def conv2d(x: Tensor, spec: ConvSpec, params: LayerParams, tape: Tape = None) -> Tensor:
    """Cross-correlation with zero padding and channel groups."""
    _check_params(spec, params, x)
    w, b = params.weight.data, params.bias.data
    out = Tensor(_conv2d_fwd(x.data, w, b, spec.stride, spec.pad, spec.groups))
    if tape is not None:
        x_in, weight, bias = x, params.weight, params.bias

        def fn(out_grads):
            gx, gw, gb = _conv2d_bwd(x_in.data, weight.data, out_grads[0],
                                     spec.stride, spec.pad, spec.groups)
            return [(x_in, gx), (weight, gw), (bias, gb)]

        tape.record((out,), fn, "conv2d")
    return out


# ---------------------------------------------------------------------------
# transposed convolution
# ---------------------------------------------------------------------------

def _tconv_reshaped_weight(w, groups):
    """Per-group (cin/g, cout/g*kh*kw) matrices for the scatter direction."""
    cout, cg, kh, kw = w.shape
    cog = cout // groups
    return [w[g * cog:(g + 1) * cog].transpose(1, 0, 2, 3).reshape(cg, cog * kh * kw)
            for g in range(groups)]


def _tconv2d_fwd(x, w, b, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    cg = cin // groups
    full_h = stride * (h - 1) + kh
    full_w = stride * (wd - 1) + kw
    wr = _tconv_reshaped_weight(w, groups)
    x_mat = x.reshape(n, cin, h * wd)
    parts = [np.matmul(wr[g].T, x_mat[:, g * cg:(g + 1) * cg]) for g in range(groups)]
    cols = parts[0] if groups == 1 else np.concatenate(parts, axis=1)
    out = _col2im(cols, cout, full_h, full_w, kh, kw, stride, h, wd)
    if pad:
        out = out[:, :, pad:full_h - pad, pad:full_w - pad]
    return out + b.reshape(1, cout, 1, 1)


def _tconv2d_bwd(x, w, go, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    cg = cin // groups
    cog = cout // groups
    gop = np.pad(go, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else go
    cols, ho, wo = _im2col(gop, kh, kw, stride)  # ho == h, wo == wd by construction
    wr = _tconv_reshaped_weight(w, groups)
    x_mat = x.reshape(n, cin, h * wd)
    kdim = cog * kh * kw
    gx = np.empty_like(x)
    gw = np.empty_like(w)
    for g in range(groups):
        cols_g = cols[:, g * kdim:(g + 1) * kdim]
        gx[:, g * cg:(g + 1) * cg] = np.matmul(wr[g], cols_g).reshape(n, cg, h, wd)
        gw_g = np.matmul(cols_g, x_mat[:, g * cg:(g + 1) * cg].transpose(0, 2, 1)).sum(axis=0)
        gw[g * cog:(g + 1) * cog] = gw_g.reshape(cog, kh, kw, cg).transpose(0, 3, 1, 2)
    gb = go.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
    return gx, gw, gb


def transposed_conv2d(x: Tensor, spec: ConvSpec, params: LayerParams, tape: Tape = None) -> Tensor:
    """Scatter-accumulate (gradient-of-conv) upsampling convolution."""
    _check_params(spec, params, x)
    if spec.kernel_h < spec.stride or spec.kernel_w < spec.stride:
        raise ShapeError("transposed conv requires kernel >= stride")
    out_h = spec.stride * (x.shape[2] - 1) + spec.kernel_h - 2 * spec.pad
    out_w = spec.stride * (x.shape[3] - 1) + spec.kernel_w - 2 * spec.pad
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"transposed conv output size {out_h}x{out_w} not positive")
    out = Tensor(_tconv2d_fwd(x.data, params.weight.data, params.bias.data,
                              spec.stride, spec.pad, spec.groups))
    if tape is not None:
        x_in, weight, bias = x, params.weight, params.bias

        def fn(out_grads):
            gx, gw, gb = _tconv2d_bwd(x_in.data, weight.data, out_grads[0],
                                      spec.stride, spec.pad, spec.groups)
            return [(x_in, gx), (weight, gw), (bias, gb)]

        tape.record((out,), fn, "transposed_conv2d")
    return out


# ---------------------------------------------------------------------------
# pointwise and structural ops
# ---------------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float, tape: Tape = None) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise UsageError(f"leaky_relu slope must be in [0,1), got {slope}")
    mask = x.data >= 0
    out = Tensor(np.where(mask, x.data, x.dtype.type(slope) * x.data))
    if tape is not None:
        x_in = x

        def fn(out_grads):
            return [(x_in, np.where(mask, out_grads[0], x_in.dtype.type(slope) * out_grads[0]))]

        tape.record((out,), fn, "leaky_relu")
    return out


def channel_slice(x: Tensor, fraction, tape: Tape = None):
    """Split channels into (first c/s, remaining c - c/s); fraction must be 1/s."""
    frac = fraction if isinstance(fraction, Fraction) else Fraction(fraction).limit_denominator(4096)
    if frac.numerator != 1 or frac.denominator < 2:
        raise UsageError(f"slice fraction must be 1/s with s >= 2, got {fraction}")
    s = frac.denominator
    c = x.shape[1]
    if c % s:
        raise ShapeError(f"{c} channels not divisible by s={s}")
    keep = c // s
    first = Tensor(x.data[:, :keep].copy())
    rest = Tensor(x.data[:, keep:].copy())
    if tape is not None:
        x_in = x

        def fn(out_grads):
            return [(x_in, np.concatenate(out_grads, axis=1))]

        tape.record((first, rest), fn, "channel_slice")
    return first, rest


def channel_concat(a: Tensor, b: Tensor, tape: Tape = None) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat needs matching n/h/w: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError("concat dtype mismatch")
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    if tape is not None:
        ca = a.shape[1]
        a_in, b_in = a, b

        def fn(out_grads):
            g = out_grads[0]
            return [(a_in, g[:, :ca]), (b_in, g[:, ca:])]

        tape.record((out,), fn, "channel_concat")
    return out


def add(a: Tensor, b: Tensor, tape: Tape = None) -> Tensor:
    """Tape-aware elementwise addition (residual joins)."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError("add dtype mismatch")
    out = Tensor(a.data + b.data)
    if tape is not None:
        a_in, b_in = a, b

        def fn(out_grads):
            return [(a_in, out_grads[0]), (b_in, out_grads[0].copy())]

        tape.record((out,), fn, "add")
    return out


def crop2d(x: Tensor, top: int, bottom: int, left: int, right: int, tape: Tape = None) -> Tensor:
    """Remove border rows/columns; backward zero-pads them back."""
    n, c, h, w = x.shape
    if min(top, bottom, left, right) < 0 or top + bottom >= h or left + right >= w:
        raise ShapeError(f"crop ({top},{bottom},{left},{right}) exceeds {h}x{w}")
    out = Tensor(x.data[:, :, top:h - bottom, left:w - right].copy())
    if tape is not None:
        x_in = x

        def fn(out_grads):
            return [(x_in, np.pad(out_grads[0], ((0, 0), (0, 0), (top, bottom), (left, right))))]

        tape.record((out,), fn, "crop2d")
    return out


def sep_linear2d(x: Tensor, row_weights: np.ndarray, col_weights: np.ndarray,
                 tape: Tape = None) -> Tensor:
    """y = Wr @ x @ Wc^T per (n, c) plane, for fixed (non-learned) matrices.

    This is how the bicubic skip connection enters the tape: resize expressed
    as two constant weight matrices, so input gradients flow through it.
    """
    if row_weights.shape[1] != x.shape[2] or col_weights.shape[1] != x.shape[3]:
        raise ShapeError(
            f"resize matrices {row_weights.shape}/{col_weights.shape} do not fit input {x.shape}")
    wr = row_weights.astype(x.dtype, copy=False)
    wc = col_weights.astype(x.dtype, copy=False)
    out = Tensor(np.matmul(np.matmul(wr, x.data), wc.T))
    if tape is not None:
        x_in = x

        def fn(out_grads):
            return [(x_in, np.matmul(np.matmul(wr.T, out_grads[0]), wc))]

        tape.record((out,), fn, "sep_linear2d")
    return out
