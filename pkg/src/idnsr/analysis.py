"""Network introspection and timing: unit maps, residuals, benchmark.

The inspect artifacts visualize what the stacked blocks compute: per-unit
channel-mean activation maps (min-max normalized per map, raw range kept in
a sidecar) and the distribution of the residual the network must learn
(ground-truth HR minus the bicubic upscale) next to the residual it actually
produces. The benchmark times the bare forward pass, after decode and before
encode, with one untimed warmup per image.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ShapeError, UsageError
from .imaging import ImagePlane, bicubic_resize, load_luminance, save_png
from .model import IdnConfig, ModelParams, idn_forward
from .tensor import Tensor, channel_mean

HISTOGRAM_BINS = 64
HISTOGRAM_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class UnitMap:
    name: str
    plane: np.ndarray
    lo: float
    hi: float


def feature_map_summary(params: ModelParams, config: IdnConfig,
                        lr_plane: ImagePlane) -> List[UnitMap]:
    """Channel-mean map of every enhancement and compression unit output."""
    capture: Dict[str, Tensor] = {}
    x = Tensor(lr_plane.data[None, None])
    idn_forward(x, params, config, mode="infer", capture=capture)
    maps: List[UnitMap] = []
    for kind in ("enh", "comp"):
        for i in range(1, config.num_dblocks + 1):
            mean = channel_mean(capture[f"{kind}{i}"])
            plane = mean.data[0, 0].astype(np.float64)
            maps.append(UnitMap(name=f"{kind}{i}", plane=plane,
                                lo=float(plane.min()), hi=float(plane.max())))
    return maps


def save_unit_maps(maps: Sequence[UnitMap], out_dir,
                   prefix: str = "unit") -> Tuple[List[Path], Path]:
    """One normalized grayscale PNG per map plus a (min,max) sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: List[Path] = []
    lines: List[str] = []
    for unit in maps:
        span = unit.hi - unit.lo
        if span > 0:
            normalized = (unit.plane - unit.lo) / span
        else:
            normalized = np.zeros_like(unit.plane)
        path = out_dir / f"{prefix}_{unit.name}.png"
        save_png(path, ImagePlane(normalized, "gray"))
        paths.append(path)
        lines.append(f"{unit.name}\t{unit.lo:.8e}\t{unit.hi:.8e}")
    sidecar = out_dir / f"{prefix}_ranges.txt"
    sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths, sidecar


@dataclass(frozen=True)
class ResidualHistogram:
    bin_edges: np.ndarray
    gt_counts: np.ndarray
    model_counts: np.ndarray
    gt_residual: np.ndarray
    model_residual: np.ndarray


def residual_histogram(params: ModelParams, config: IdnConfig,
                       lr_plane: ImagePlane,
                       hr_plane: ImagePlane) -> ResidualHistogram:
    """Bin the true residual over bicubic and the one the network produces."""
    m = config.scale
    up = bicubic_resize(lr_plane, m * lr_plane.height, m * lr_plane.width)
    if up.data.shape != hr_plane.data.shape:
        raise ShapeError(f"HR plane is {hr_plane.data.shape}, bicubic upscale"
                         f" is {up.data.shape}")
    gt_residual = hr_plane.data - up.data

    sr = idn_forward(Tensor(lr_plane.data[None, None]), params, config,
                     mode="infer")
    model_residual = np.clip(sr.data[0, 0], 0.0, 1.0) - up.data
    model_residual = np.clip(model_residual, *HISTOGRAM_RANGE)

    edges = np.linspace(*HISTOGRAM_RANGE, HISTOGRAM_BINS + 1)
    gt_counts, _ = np.histogram(gt_residual, bins=edges)
    model_counts, _ = np.histogram(model_residual, bins=edges)
    return ResidualHistogram(bin_edges=edges, gt_counts=gt_counts,
                             model_counts=model_counts,
                             gt_residual=gt_residual,
                             model_residual=model_residual)


def save_residual_figure(hist: ResidualHistogram, path) -> Path:
    path = Path(path)
    centers = (hist.bin_edges[:-1] + hist.bin_edges[1:]) / 2.0
    width = hist.bin_edges[1] - hist.bin_edges[0]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, counts, title in ((axes[0], hist.gt_counts, "ground truth - bicubic"),
                              (axes[1], hist.model_counts, "network residual")):
        ax.bar(centers, counts, width=width * 0.9)
        ax.set_title(title)
        ax.set_xlabel("residual value")
        ax.set_xlim(*HISTOGRAM_RANGE)
    axes[0].set_ylabel("pixel count")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def save_residual_panels(hist: ResidualHistogram, out_dir,
                         prefix: str = "residual") -> list:
    """Write the two histograms as separate figures, one file per panel."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    centers = (hist.bin_edges[:-1] + hist.bin_edges[1:]) / 2.0
    width = hist.bin_edges[1] - hist.bin_edges[0]
    written = []
    panels = (("gt", hist.gt_counts, "ground truth - bicubic"),
              ("model", hist.model_counts, "network residual"))
    for tag, counts, title in panels:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        ax.bar(centers, counts, width=width * 0.9)
        ax.set_title(title)
        ax.set_xlabel("residual value")
        ax.set_ylabel("pixel count")
        ax.set_xlim(*HISTOGRAM_RANGE)
        fig.tight_layout()
        path = out_dir / f"{prefix}_{tag}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def save_histogram_table(hist: ResidualHistogram, path) -> Path:
    path = Path(path)
    lines = ["bin_lo\tbin_hi\tgt_count\tmodel_count"]
    for i in range(len(hist.gt_counts)):
        lines.append(f"{hist.bin_edges[i]:.6f}\t{hist.bin_edges[i + 1]:.6f}"
                     f"\t{int(hist.gt_counts[i])}\t{int(hist.model_counts[i])}")
    lines.append(f"#mean\t\t{int(hist.gt_counts.sum())}"
                 f"\t{int(hist.model_counts.sum())}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class ImageTiming:
    name: str
    samples: Tuple[float, ...]
    mean: float

    def __post_init__(self):
        if not self.samples or any(s <= 0 for s in self.samples):
            raise UsageError("timing samples must be positive")


@dataclass(frozen=True)
class TimingReport:
    images: Tuple[ImageTiming, ...]
    mean_seconds: float
    environment: str
    threads: Optional[int]
    repeats: int


def environment_descriptor(threads: Optional[int], dtype: str) -> str:
    version = f"{sys.version_info.major}.{sys.version_info.minor}"
    return (f"python {version}; numpy {np.__version__};"
            f" threads {threads if threads else 'default'}; dtype {dtype}")


def bench(params: ModelParams, config: IdnConfig, image_paths, repeats: int = 3,
          threads: Optional[int] = None, dtype: str = "f32") -> TimingReport:
    """Per-image forward-pass timings; decode and encode are excluded."""
    paths = [Path(p) for p in image_paths]
    if not paths:
        raise UsageError("bench needs at least one image")
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    images: List[ImageTiming] = []
    for path in paths:
        plane = load_luminance(path)
        x = Tensor(plane.data[None, None])
        idn_forward(x, params, config, mode="infer")
        samples = []
        for _ in range(repeats):
            started = time.perf_counter()
            idn_forward(x, params, config, mode="infer")
            samples.append(time.perf_counter() - started)
        images.append(ImageTiming(name=path.name, samples=tuple(samples),
                                  mean=sum(samples) / len(samples)))
    mean_seconds = sum(img.mean for img in images) / len(images)
    return TimingReport(images=tuple(images), mean_seconds=mean_seconds,
                        environment=environment_descriptor(threads, dtype),
                        threads=threads, repeats=repeats)


def write_timing_report(report: TimingReport, path) -> Path:
    path = Path(path)
    run_headers = "\t".join(f"run{i + 1}" for i in range(report.repeats))
    lines = [f"# {report.environment}",
             f"image\t{run_headers}\tmean"]
    for img in report.images:
        cells = "\t".join(f"{s:.6f}" for s in img.samples)
        lines.append(f"{img.name}\t{cells}\t{img.mean:.6f}")
    column_means = []
    for i in range(report.repeats):
        column_means.append(sum(img.samples[i] for img in report.images)
                            / len(report.images))
    cells = "\t".join(f"{v:.6f}" for v in column_means)
    lines.append(f"#mean\t{cells}\t{report.mean_seconds:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def save_timing_figure(report: TimingReport, path) -> Path:
    path = Path(path)
    names = [img.name for img in report.images]
    means = [img.mean for img in report.images]
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(names) + 2), 4))
    ax.bar(range(len(names)), means)
    ax.axhline(report.mean_seconds, linestyle="--", linewidth=1)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("forward seconds")
    ax.set_title(report.environment, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def save_metric_figure(rows: Sequence[Tuple[str, Dict[str, float]]],
                       metric: str, path) -> Path:
    """Bar chart of one metric across the evaluated images."""
    path = Path(path)
    names = [name for name, _ in rows]
    values = [row[metric] for _, row in rows]
    finite = [v for v in values if np.isfinite(v)]
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(names) + 2), 4))
    ax.bar(range(len(names)), [v if np.isfinite(v) else 0.0 for v in values])
    if finite:
        ax.axhline(sum(finite) / len(finite), linestyle="--", linewidth=1)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
