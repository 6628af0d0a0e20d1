"""Image I/O, YCbCr conversion, and a reference-grade bicubic resizer.

The resizer matches the convention SR benchmarks are scored against: cubic
convolution kernel with a = -0.5, half-pixel-centered source mapping, kernel
stretched (antialiased) on downscale, per-sample weight normalization, and
source-index clamping at the borders. Resizes are expressed as dense per-axis
weight matrices so the same arithmetic can be replayed inside the network's
skip connection.

Color path: BT.601 studio-swing YCbCr on the 8-bit scale; planes live in
[0,1] as float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ShapeError, UsageError

# Studio-swing RGB->YCbCr on 8-bit scale: [Y,Cb,Cr] = offset + M @ [r,g,b], rgb in [0,1].
_YCBCR_MATRIX = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
])
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


@dataclass
class ImageRGB:
    """8-bit interleaved RGB image; data shaped (h, w, 3), dtype uint8."""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3 or self.data.dtype != np.uint8:
            raise ShapeError(f"ImageRGB needs (h,w,3) uint8 data, got {self.data.shape} {self.data.dtype}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError("image dimensions must be >= 1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ImagePlane:
    """Single-channel float image in [0,1]; tag records its color provenance."""
    data: np.ndarray
    tag: str = "gray"

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeError(f"ImagePlane needs 2-D data, got {self.data.ndim}-D")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError("image dimensions must be >= 1")
        if self.tag not in ("Y", "Cb", "Cr", "gray"):
            raise UsageError(f"unknown plane tag {self.tag!r}")
        self.data = np.asarray(self.data, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_png(path):
    """Read an 8-bit grayscale or RGB PNG; anything else is rejected."""
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise DataError(f"{path}: not a PNG file (format={img.format})")
            if img.mode == "RGB":
                return ImageRGB(np.asarray(img, dtype=np.uint8))
            if img.mode == "L":
                return ImagePlane(np.asarray(img, dtype=np.float64) / 255.0, "gray")
            raise DataError(f"{path}: unsupported PNG mode {img.mode!r} (need 8-bit L or RGB)")
    except FileNotFoundError:
        raise DataError(f"{path}: no such file")
    except UnidentifiedImageError:
        raise DataError(f"{path}: not an image file")


def save_png(path, image) -> None:
    """Write ImageRGB losslessly or an ImagePlane quantized to the 8-bit grid."""
    if isinstance(image, ImageRGB):
        Image.fromarray(image.data, "RGB").save(path, format="PNG")
    elif isinstance(image, ImagePlane):
        samples = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(samples, "L").save(path, format="PNG")
    else:
        raise UsageError(f"cannot save object of type {type(image).__name__}")


def load_luminance(path) -> ImagePlane:
    """Load a PNG and return its luminance: Y of YCbCr for color, as-is for gray."""
    img = load_png(path)
    if isinstance(img, ImageRGB):
        return rgb_to_ycbcr(img)[0]
    return img


# ---------------------------------------------------------------------------
# color conversion
# ---------------------------------------------------------------------------

def rgb_to_ycbcr(image: ImageRGB):
    """BT.601 studio-swing conversion; returns (Y, Cb, Cr) planes in [0,1]."""
    rgb = image.data.astype(np.float64) / 255.0
    channels = np.tensordot(rgb, _YCBCR_MATRIX, axes=([2], [1])) + _YCBCR_OFFSET
    channels = np.clip(channels / 255.0, 0.0, 1.0)
    return (ImagePlane(channels[:, :, 0], "Y"),
            ImagePlane(channels[:, :, 1], "Cb"),
            ImagePlane(channels[:, :, 2], "Cr"))


def ycbcr_to_rgb(y: ImagePlane, cb: ImagePlane, cr: ImagePlane) -> ImageRGB:
    if y.data.shape != cb.data.shape or y.data.shape != cr.data.shape:
        raise ShapeError("Y/Cb/Cr planes must share dimensions")
    stacked = np.stack([y.data, cb.data, cr.data], axis=2) * 255.0 - _YCBCR_OFFSET
    rgb = np.tensordot(stacked, _YCBCR_INVERSE, axes=([2], [1]))
    return ImageRGB(np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# bicubic resize
# ---------------------------------------------------------------------------

def _cubic(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel, a = -0.5, support [-2, 2]."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    return np.where(t <= 1.0, 1.5 * t3 - 2.5 * t2 + 1.0,
                    np.where(t < 2.0, -0.5 * t3 + 2.5 * t2 - 4.0 * t + 2.0, 0.0))


@lru_cache(maxsize=128)
def resize_matrix(in_size: int, out_size: int, antialias: bool = True) -> np.ndarray:
    """Dense (out_size, in_size) float64 weight matrix for one axis.

    Rows sum to 1; border taps falling outside the source are clamped onto the
    edge sample (their weight accumulates there). The cached array is shared;
    callers must not mutate it.
    """
    if out_size < 1 or in_size < 1:
        raise UsageError("resize sizes must be >= 1")
    if out_size == in_size:
        return np.eye(in_size)
    scale = out_size / in_size
    if antialias and scale < 1.0:
        width = 4.0 / scale
        stretch = scale
    else:
        width = 4.0
        stretch = 1.0
    taps = int(np.ceil(width)) + 2
    u = (np.arange(out_size) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0)
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = stretch * _cubic(stretch * (u[:, None] - idx))
    weights /= weights.sum(axis=1, keepdims=True)
    cols = np.clip(idx.astype(np.int64), 0, in_size - 1)
    rows = np.repeat(np.arange(out_size), taps)
    matrix = np.zeros((out_size, in_size))
    np.add.at(matrix, (rows, cols.ravel()), weights.ravel())
    matrix.setflags(write=False)
    return matrix


def bicubic_resize(plane: ImagePlane, out_h: int, out_w: int, antialias: bool = True) -> ImagePlane:
    """Separable bicubic resize of a [0,1] plane; output clamped to [0,1]."""
    if out_h < 1 or out_w < 1:
        raise UsageError(f"output size {out_h}x{out_w} must be >= 1 per axis")
    in_h, in_w = plane.data.shape
    if out_h == in_h and out_w == in_w:
        return ImagePlane(plane.data.copy(), plane.tag)
    rows = resize_matrix(in_h, out_h, antialias)
    cols = resize_matrix(in_w, out_w, antialias)
    out = rows @ plane.data @ cols.T
    return ImagePlane(np.clip(out, 0.0, 1.0), plane.tag)
