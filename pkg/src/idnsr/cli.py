"""Batch command line: train, sr, eval, inspect, bench.

Every command is a one-shot batch run driven entirely by flags and an
optional key=value config file; exit code 0 means all requested artifacts
were written. `--threads 1` pins the BLAS pool for bitwise-reproducible
runs (IDN_THREADS works as an environment fallback).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import (
    bench,
    feature_map_summary,
    residual_histogram,
    save_histogram_table,
    save_metric_figure,
    save_residual_panels,
    save_timing_figure,
    save_unit_maps,
    write_timing_report,
)
from .checkpoint import load_params, load_resume
from .config import RunConfig
from .dataset import PatchSampler, list_corpus, make_pair, read_manifest
from .errors import ConfigError, DataError, IdnError, UsageError
from .imaging import (
    ImagePlane,
    ImageRGB,
    bicubic_resize,
    load_luminance,
    load_png,
    rgb_to_ycbcr,
    save_png,
    ycbcr_to_rgb,
)
from .metrics import evaluate_pair, format_value, write_report
from .model import IdnConfig, ModelParams, idn_forward, init_params
from .tensor import Tensor
from .training import RESUME_NAME, WEIGHTS_NAME, train_loop

PRECISION_DTYPES = {"f32": np.float32, "f64": np.float64}


def _resolve_threads(args) -> Optional[int]:
    if args.threads is not None:
        value = args.threads
    else:
        raw = os.environ.get("IDN_THREADS")
        if raw is None:
            return None
        try:
            value = int(raw)
        except ValueError:
            raise UsageError(f"IDN_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def _load_checkpoint(path, precision: str) -> Tuple[ModelParams, IdnConfig]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} does not exist")
    params, config = load_params(path)
    dtype = PRECISION_DTYPES[precision]
    if dtype != np.float32:
        params = params.astype(dtype)
    return params, config


def _check_scale(config: IdnConfig, requested: Optional[int]) -> None:
    if requested is not None and requested != config.scale:
        raise ConfigError(f"checkpoint was trained for x{config.scale},"
                          f" but x{requested} was requested")


# ---------------------------------------------------------------------------
# upscalers shared by sr and eval
# ---------------------------------------------------------------------------

def _bicubic_plane(plane: ImagePlane, scale: int) -> ImagePlane:
    return bicubic_resize(plane, scale * plane.height, scale * plane.width)


def _make_upscaler(method: str, scale: int,
                   params: Optional[ModelParams],
                   config: Optional[IdnConfig]) -> Callable[[ImagePlane], ImagePlane]:
    if method == "bicubic":
        return lambda plane: _bicubic_plane(plane, scale)

    def through_network(plane: ImagePlane) -> ImagePlane:
        out = idn_forward(Tensor(plane.data[None, None]), params, config,
                          mode="infer")
        return ImagePlane(np.clip(out.data[0, 0], 0.0, 1.0), plane.tag)

    return through_network


def _upscale_image(image, scale: int, upscale_y):
    """Color goes Y-through-model with bicubic chroma; gray skips conversion."""
    if isinstance(image, ImageRGB):
        y, cb, cr = rgb_to_ycbcr(image)
        return ycbcr_to_rgb(upscale_y(y),
                            _bicubic_plane(cb, scale),
                            _bicubic_plane(cr, scale))
    return upscale_y(image)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args, threads: Optional[int]) -> int:
    rc = RunConfig.load(args.config, args.assignments,
                        {"model.scale": args.scale, "train.seed": args.seed})
    config = rc.model_config()
    schedule = rc.train_schedule()
    dtype = PRECISION_DTYPES[args.precision]

    if args.manifest is not None:
        paths = read_manifest(args.manifest)
    else:
        paths = list_corpus(args.data)
    sampler = PatchSampler(paths, config.scale, dtype=dtype)

    out_dir = Path(args.out)
    resume_state = None
    if args.resume:
        params, saved_config = _load_checkpoint(out_dir / WEIGHTS_NAME,
                                                args.precision)
        # the stored slope is f32-quantized, so compare in that precision
        wanted = replace(config, lrelu_slope=float(np.float32(config.lrelu_slope)))
        if saved_config != wanted:
            raise ConfigError(f"checkpoint in {out_dir} was built with a"
                              " different model configuration")
        resume_path = out_dir / RESUME_NAME
        if not resume_path.is_file():
            raise DataError(f"resume sidecar {resume_path} does not exist")
        resume_state = load_resume(resume_path)
    else:
        params = init_params(config, schedule.seed, dtype=dtype)

    result = train_loop(schedule, config, params, sampler, out_dir,
                        resume=resume_state, max_iters=args.iters)
    print(f"ran {result.iterations_run} iterations (now at"
          f" {result.final_iteration}/{schedule.total_iters});"
          f" weights in {result.weights_path}")
    return 0


def _input_paths(path) -> List[Path]:
    path = Path(path)
    if path.is_dir():
        return list_corpus(path)
    if path.is_file():
        return [path]
    raise DataError(f"input {path} does not exist")


def cmd_sr(args, threads: Optional[int]) -> int:
    rc = RunConfig.load(args.config, args.assignments,
                        {"model.scale": args.scale})
    requested = rc.get("model.scale")
    if args.method == "idn":
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required with --method idn")
        params, config = _load_checkpoint(args.checkpoint, args.precision)
        _check_scale(config, requested)
        scale = config.scale
    else:
        params, config = None, None
        if requested is None:
            raise UsageError("--method bicubic needs --scale (or model.scale)")
        scale = requested

    upscale_y = _make_upscaler(args.method, scale, params, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _input_paths(args.input):
        image = load_png(path)
        result = _upscale_image(image, scale, upscale_y)
        target = out_dir / f"{path.stem}_x{scale}.png"
        save_png(target, result)
        print(f"{path.name} -> {target}")
    return 0


def _paired_paths(gt_dir, lr_dir) -> List[Tuple[Path, Optional[Path]]]:
    gt_paths = list_corpus(gt_dir)
    if lr_dir is None:
        return [(p, None) for p in gt_paths]
    lr_paths = list_corpus(lr_dir)
    gt_names = {p.name for p in gt_paths}
    lr_names = {p.name for p in lr_paths}
    orphans = sorted(gt_names ^ lr_names)
    if orphans:
        raise DataError("unpaired files between the two directories: "
                        + ", ".join(orphans))
    lr_by_name = {p.name: p for p in lr_paths}
    return [(p, lr_by_name[p.name]) for p in gt_paths]


def _eval_pair(gt_path: Path, lr_path: Optional[Path],
               scale: int) -> Tuple[ImagePlane, ImagePlane]:
    """Return (lr, hr) luminance planes sized hr = scale * lr exactly."""
    hr = load_luminance(gt_path)
    if lr_path is None:
        pair = make_pair(hr, scale)
        if pair is None:
            raise DataError(f"{gt_path.name} is smaller than one x{scale} pixel")
        return pair.lr, pair.hr
    lr = load_luminance(lr_path)
    want_h, want_w = scale * lr.height, scale * lr.width
    if hr.height < want_h or hr.width < want_w:
        raise DataError(f"{gt_path.name} is {hr.height}x{hr.width}, too small"
                        f" for a {want_h}x{want_w} x{scale} ground truth")
    return lr, ImagePlane(hr.data[:want_h, :want_w].copy(), hr.tag)


def cmd_eval(args, threads: Optional[int]) -> int:
    rc = RunConfig.load(args.config, args.assignments,
                        {"model.scale": args.scale})
    requested = rc.get("model.scale")
    if args.method == "idn":
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required with --method idn")
        params, config = _load_checkpoint(args.checkpoint, args.precision)
        _check_scale(config, requested)
        scale = config.scale
    else:
        params, config = None, None
        if requested is None:
            raise UsageError("--method bicubic needs --scale (or model.scale)")
        scale = requested

    protocol = rc.eval_protocol(scale)
    upscale_y = _make_upscaler(args.method, scale, params, config)
    rows = []
    for gt_path, lr_path in _paired_paths(args.gt, args.lr):
        lr, hr = _eval_pair(gt_path, lr_path, scale)
        sr = upscale_y(lr)
        rows.append((gt_path.name, evaluate_pair(sr, hr, protocol)))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.tsv"
    write_report(report_path, rows, protocol.metrics)
    for metric in protocol.metrics:
        save_metric_figure(rows, metric, out_dir / f"{metric}.png")

    means = {m: sum(values[m] for _, values in rows) / len(rows)
             for m in protocol.metrics}
    summary = "  ".join(f"{m} {format_value(means[m])}"
                        for m in protocol.metrics)
    print(f"{len(rows)} images ({args.method}, x{scale}): {summary}")
    print(f"report in {report_path}")
    return 0


def cmd_inspect(args, threads: Optional[int]) -> int:
    params, config = _load_checkpoint(args.checkpoint, args.precision)
    _check_scale(config, args.scale)
    hr = load_luminance(args.image)
    pair = make_pair(hr, config.scale)
    if pair is None:
        raise DataError(f"{args.image} is smaller than one x{config.scale} pixel")

    out_dir = Path(args.out)
    maps = feature_map_summary(params, config, pair.lr)
    map_paths, sidecar = save_unit_maps(maps, out_dir)
    hist = residual_histogram(params, config, pair.lr, pair.hr)
    panel_paths = save_residual_panels(hist, out_dir)
    table_path = save_histogram_table(hist, out_dir / "residual_hist.tsv")

    print(f"wrote {len(map_paths)} unit maps ({sidecar.name} has the ranges),"
          f" {len(panel_paths)} histograms and {table_path.name} in {out_dir}")
    return 0


def cmd_bench(args, threads: Optional[int]) -> int:
    params, config = _load_checkpoint(args.checkpoint, args.precision)
    _check_scale(config, args.scale)
    paths = list_corpus(args.data)
    report = bench(params, config, paths, repeats=args.repeats,
                   threads=threads, dtype=args.precision)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = write_timing_report(report, out_dir / "timings.tsv")
    save_timing_figure(report, out_dir / "timings.png")
    print(report.environment)
    print(f"mean forward {report.mean_seconds:.6f}s over {len(report.images)}"
          f" images x {report.repeats} repeats; report in {report_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="key=value config file (dotted keys, strict)")
    common.add_argument("--set", dest="assignments", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--seed", type=int, help="training seed override")
    common.add_argument("--threads", type=int,
                        help="BLAS thread cap (default: IDN_THREADS or unlimited)")
    common.add_argument("--precision", choices=sorted(PRECISION_DTYPES),
                        default="f32", help="compute dtype (default f32)")

    parser = argparse.ArgumentParser(
        prog="idnsr",
        description="Single-image super-resolution with a distillation network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common],
                       help="train a model on a PNG corpus")
    p.add_argument("--scale", type=int, help="upscale factor (2, 3 or 4)")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", metavar="DIR", help="corpus directory")
    source.add_argument("--manifest", metavar="PATH",
                        help="text file listing corpus images")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="checkpoint/log directory")
    p.add_argument("--iters", type=int, metavar="N",
                   help="stop after N total iterations (0: init only)")
    p.add_argument("--resume", action="store_true",
                   help="continue from the sidecar in --out")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sr", parents=[common],
                       help="upscale a PNG file or directory")
    p.add_argument("--checkpoint", metavar="PATH", help="trained weights")
    p.add_argument("--input", required=True, metavar="PATH",
                   help="PNG file or directory of PNGs")
    p.add_argument("--out", default="idn_sr", metavar="DIR",
                   help="output directory (default idn_sr)")
    p.add_argument("--method", choices=("idn", "bicubic"), default="idn")
    p.add_argument("--scale", type=int,
                   help="upscale factor; checked against the checkpoint")
    p.set_defaults(handler=cmd_sr)

    p = sub.add_parser("eval", parents=[common],
                       help="PSNR/SSIM report against ground truths")
    p.add_argument("--gt", required=True, metavar="DIR",
                   help="ground-truth directory")
    p.add_argument("--lr", metavar="DIR",
                   help="matching LR inputs (default: degrade on the fly)")
    p.add_argument("--checkpoint", metavar="PATH", help="trained weights")
    p.add_argument("--method", choices=("idn", "bicubic"), default="idn")
    p.add_argument("--scale", type=int,
                   help="upscale factor; checked against the checkpoint")
    p.add_argument("--out", default="idn_eval", metavar="DIR",
                   help="report directory (default idn_eval)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("inspect", parents=[common],
                       help="unit feature maps and residual histograms")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--image", required=True, metavar="PATH",
                   help="ground-truth PNG to analyze")
    p.add_argument("--scale", type=int,
                   help="upscale factor; checked against the checkpoint")
    p.add_argument("--out", default="idn_inspect", metavar="DIR",
                   help="artifact directory (default idn_inspect)")
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("bench", parents=[common],
                       help="forward-pass timings over a directory")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="DIR",
                   help="directory of PNGs to time")
    p.add_argument("--repeats", type=int, default=3, metavar="N",
                   help="timed repeats per image (default 3)")
    p.add_argument("--scale", type=int,
                   help="upscale factor; checked against the checkpoint")
    p.add_argument("--out", default="idn_bench", metavar="DIR",
                   help="report directory (default idn_bench)")
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _resolve_threads(args)
        if threads is not None:
            with threadpool_limits(limits=threads):
                return args.handler(args, threads)
        return args.handler(args, None)
    except IdnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
