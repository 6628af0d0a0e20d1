"""Fidelity metrics on luminance planes and the delimited report format.

PSNR and SSIM are computed after shaving a configurable border (defaults to
the upscale factor per the usual SR protocol). SSIM is the single-scale
variant: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, peak 1.0 on
[0,1] data, population (not sample) moments, averaged over positions where
the window fits entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, UsageError
from .imaging import ImagePlane

KNOWN_METRICS = ("psnr", "ssim")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class EvalProtocol:
    border_shave: int = 0
    bit_depth_peak: int = 255
    metrics: Tuple[str, ...] = ("psnr", "ssim")
    round_to_8bit: bool = False

    def __post_init__(self):
        if self.border_shave < 0:
            raise UsageError("border_shave must be >= 0")
        if self.bit_depth_peak < 1:
            raise UsageError("bit_depth_peak must be >= 1")
        unknown = [m for m in self.metrics if m not in KNOWN_METRICS]
        if unknown:
            raise UsageError(f"unknown metrics {unknown}; available:"
                             f" {list(KNOWN_METRICS)}")

    @classmethod
    def for_scale(cls, scale: int, **overrides) -> "EvalProtocol":
        return cls(border_shave=scale, **overrides)


def _prepared(a: ImagePlane, b: ImagePlane, protocol: EvalProtocol):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"plane shapes differ: {a.data.shape} vs {b.data.shape}")
    x, y = a.data, b.data
    s = protocol.border_shave
    if s:
        if 2 * s >= min(x.shape):
            raise UsageError(f"shave {s} leaves nothing of a"
                             f" {x.shape[0]}x{x.shape[1]} plane")
        x = x[s:-s, s:-s]
        y = y[s:-s, s:-s]
    if protocol.round_to_8bit:
        peak = protocol.bit_depth_peak
        x = np.rint(x * peak) / peak
        y = np.rint(y * peak) / peak
    return x, y


def psnr(a: ImagePlane, b: ImagePlane, protocol: EvalProtocol) -> float:
    """Peak signal-to-noise ratio in dB on the [0,1] scale; inf when equal."""
    x, y = _prepared(a, b, protocol)
    mse = float(np.mean(np.square(x - y)))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(offsets * offsets) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _filter_valid(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(plane, len(taps), axis=0) @ taps
    return sliding_window_view(rows, len(taps), axis=1) @ taps


def ssim(a: ImagePlane, b: ImagePlane, protocol: EvalProtocol) -> float:
    x, y = _prepared(a, b, protocol)
    if min(x.shape) < SSIM_WINDOW:
        raise UsageError(f"plane {x.shape} smaller than the {SSIM_WINDOW}x"
                         f"{SSIM_WINDOW} window after shaving")
    taps = _gaussian_taps(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, taps)
    mu_y = _filter_valid(y, taps)
    var_x = _filter_valid(x * x, taps) - mu_x * mu_x
    var_y = _filter_valid(y * y, taps) - mu_y * mu_y
    cov = _filter_valid(x * y, taps) - mu_x * mu_y
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(numerator / denominator))


def evaluate_pair(a: ImagePlane, b: ImagePlane,
                  protocol: EvalProtocol) -> Dict[str, float]:
    values = {}
    for name in protocol.metrics:
        values[name] = psnr(a, b, protocol) if name == "psnr" \
            else ssim(a, b, protocol)
    return values


def format_value(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.4f}"


def write_report(path, rows: Sequence[Tuple[str, Dict[str, float]]],
                 metrics: Optional[Sequence[str]] = None) -> None:
    """Tab-separated rows, one per image, then a `#mean` summary row."""
    if not rows:
        raise UsageError("report needs at least one row")
    if metrics is None:
        metrics = list(rows[0][1].keys())
    lines: List[str] = ["image\t" + "\t".join(metrics)]
    for name, values in rows:
        missing = [m for m in metrics if m not in values]
        if missing:
            raise UsageError(f"row {name!r} lacks metrics {missing}")
        lines.append(name + "\t" + "\t".join(format_value(values[m])
                                             for m in metrics))
    means = []
    for m in metrics:
        means.append(format_value(sum(values[m] for _, values in rows)
                                  / len(rows)))
    lines.append("#mean\t" + "\t".join(means))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
