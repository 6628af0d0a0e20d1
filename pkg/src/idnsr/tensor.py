"""Dense 4-D tensor type (NCHW) and the elementwise/reduction primitives.

All numeric data in this package travels as a Tensor: a contiguous float32 or
float64 array laid out batch x channel x height x width, with width fastest.
There is deliberately no broadcasting; every shape mismatch is an error so
that miswired channel arithmetic surfaces immediately instead of being
silently stretched.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense NCHW array.

    Treat tensors as immutable once constructed; the optimizer is the only
    component that mutates ``data`` in place. Identity (``is``) is the notion
    of sameness used by the autograd tape, so Tensor defines neither __eq__
    nor __hash__ beyond the defaults.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        if data.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n,c,h,w), got {data.ndim}-D")
        if data.dtype.type not in DTYPES:
            raise ShapeError(f"tensor dtype must be float32 or float64, got {data.dtype}")
        if any(dim < 1 for dim in data.shape):
            raise ShapeError(f"tensor dims must be >= 1, got {data.shape}")
        self.data = np.ascontiguousarray(data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def create(shape, fill=0.0, dtype=np.float32) -> Tensor:
    """Build a tensor of the given 4-tuple shape.

    ``fill`` is either a scalar (replicated) or a flat value sequence whose
    length must equal the product of the shape (row-major, w fastest).
    """
    if len(shape) != 4:
        raise ShapeError(f"shape must have 4 components, got {len(shape)}")
    if any(int(dim) < 1 for dim in shape):
        raise ShapeError(f"shape components must be >= 1, got {tuple(shape)}")
    shape = tuple(int(dim) for dim in shape)
    if np.isscalar(fill):
        data = np.full(shape, fill, dtype=dtype)
    else:
        values = np.asarray(fill, dtype=dtype).ravel()
        expected = int(np.prod(shape))
        if values.size != expected:
            raise ShapeError(f"value list has {values.size} elements, shape needs {expected}")
        data = values.reshape(shape)
    return Tensor(data)


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    """out[i] = a[i] + b[i]; shapes and dtypes must match exactly."""
    _check_same(a, b)
    return Tensor(a.data + b.data)


def channel_mean(a: Tensor) -> Tensor:
    """Arithmetic mean over the channel axis; output shape (n, 1, h, w)."""
    return Tensor(a.data.mean(axis=1, keepdims=True))
