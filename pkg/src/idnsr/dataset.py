"""Training corpus: augmentation, LR/HR pair generation, patch cropping.

Augmentation produces 40 variants per source (5 rescales x 4 rotations x
2 flips, identity included) in a fixed order, rescale applied first. Pair
generation trims the HR plane bottom/right until divisible by the scale,
then downscales with the antialiased bicubic. Patch labels are exact crops:
the HR window starts at m times the LR corner and loses floor((m-1)/2)
leading / ceil((m-1)/2) trailing pixels per side, mirroring how the network
crops its bicubic skip in train mode.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .errors import DataError, UsageError
from .imaging import ImagePlane, bicubic_resize, load_luminance
from .tensor import Tensor
from .training import FINETUNE_PATCH, TRAIN_PATCH

RESCALES = (1.0, 0.9, 0.8, 0.7, 0.6)
ROTATIONS = (0, 90, 180, 270)
FLIPS = (False, True)


def variant_settings() -> List[Tuple[float, int, bool]]:
    """All 40 (rescale, rotation, hflip) combinations in canonical order."""
    return [(rescale, rotation, hflip)
            for rescale in RESCALES
            for rotation in ROTATIONS
            for hflip in FLIPS]


def rescale_plane(plane: ImagePlane, factor: float) -> ImagePlane:
    if factor <= 0 or factor > 1:
        raise UsageError(f"rescale factor must be in (0, 1], got {factor}")
    if factor == 1.0:
        return ImagePlane(plane.data.copy(), plane.tag)
    out_h = math.ceil(plane.height * factor)
    out_w = math.ceil(plane.width * factor)
    return bicubic_resize(plane, out_h, out_w)


def orient_plane(plane: ImagePlane, rotation: int, hflip: bool) -> ImagePlane:
    if rotation not in ROTATIONS:
        raise UsageError(f"rotation must be one of {ROTATIONS}, got {rotation}")
    data = np.rot90(plane.data, rotation // 90)
    if hflip:
        data = np.fliplr(data)
    return ImagePlane(np.ascontiguousarray(data), plane.tag)


@dataclass(frozen=True)
class AugmentedImage:
    source_id: str
    rescale: float
    rotation: int
    hflip: bool
    plane: ImagePlane


def augment(plane: ImagePlane, source_id: str = "") -> List[AugmentedImage]:
    """All 40 augmentation variants of one plane, deterministic order."""
    out = []
    for rescale in RESCALES:
        scaled = rescale_plane(plane, rescale)
        for rotation in ROTATIONS:
            for hflip in FLIPS:
                out.append(AugmentedImage(
                    source_id=source_id, rescale=rescale, rotation=rotation,
                    hflip=hflip, plane=orient_plane(scaled, rotation, hflip)))
    return out


@dataclass(frozen=True)
class PlanePair:
    lr: ImagePlane
    hr: ImagePlane
    scale: int


def make_pair(hr: ImagePlane, scale: int) -> Optional[PlanePair]:
    """Trim HR to divisibility and downscale; None if the image is too small."""
    if scale < 1:
        raise UsageError(f"scale must be >= 1, got {scale}")
    h = hr.height - hr.height % scale
    w = hr.width - hr.width % scale
    if h < scale or w < scale:
        return None
    trimmed = ImagePlane(hr.data[:h, :w].copy(), hr.tag)
    lr = bicubic_resize(trimmed, h // scale, w // scale)
    return PlanePair(lr=lr, hr=trimmed, scale=scale)


@dataclass(frozen=True)
class PatchSpec:
    scale: int
    lr_size: int
    hr_size: int
    stride: int = 1
    phase: str = "training"

    def __post_init__(self):
        if self.scale < 1 or self.lr_size < 1:
            raise UsageError("scale and lr_size must be >= 1")
        expected = self.scale * self.lr_size - self.scale + 1
        if self.hr_size != expected:
            raise UsageError(f"hr_size must be {expected} for scale"
                             f" {self.scale} and lr_size {self.lr_size},"
                             f" got {self.hr_size}")
        if self.stride < 1:
            raise UsageError("stride must be >= 1")
        if self.phase not in ("training", "fine-tuning"):
            raise UsageError(f"unknown phase {self.phase!r}")

    @classmethod
    def for_phase(cls, scale: int, phase: str, stride: int = 1) -> "PatchSpec":
        table = {"training": TRAIN_PATCH, "fine-tuning": FINETUNE_PATCH}.get(phase)
        if table is None or scale not in table:
            raise UsageError(f"no patch table entry for scale {scale},"
                             f" phase {phase!r}")
        lr_size = table[scale]
        return cls(scale=scale, lr_size=lr_size,
                   hr_size=scale * lr_size - scale + 1, stride=stride,
                   phase=phase)


def _check_pair_spec(pair: PlanePair, spec: PatchSpec) -> None:
    if pair.scale != spec.scale:
        raise UsageError(f"pair is x{pair.scale}, spec wants x{spec.scale}")
    if pair.lr.height < spec.lr_size or pair.lr.width < spec.lr_size:
        raise DataError(f"LR plane {pair.lr.height}x{pair.lr.width} smaller"
                        f" than patch size {spec.lr_size}")


def _cut(pair: PlanePair, spec: PatchSpec, r: int, c: int):
    m = spec.scale
    lead = (m - 1) // 2
    lr_patch = pair.lr.data[r:r + spec.lr_size, c:c + spec.lr_size].copy()
    top = m * r + lead
    left = m * c + lead
    hr_patch = pair.hr.data[top:top + spec.hr_size, left:left + spec.hr_size].copy()
    return lr_patch, hr_patch


def extract_patches(pair: PlanePair, spec: PatchSpec, seed: int) -> Iterator:
    """Endless stream of randomly placed (lr_patch, hr_patch) arrays."""
    _check_pair_spec(pair, spec)
    rng = np.random.default_rng(seed)
    max_r = pair.lr.height - spec.lr_size
    max_c = pair.lr.width - spec.lr_size
    while True:
        r = int(rng.integers(0, max_r + 1))
        c = int(rng.integers(0, max_c + 1))
        yield _cut(pair, spec, r, c)


def grid_patches(pair: PlanePair, spec: PatchSpec) -> List:
    """Deterministic sliding-window extraction at the requested stride."""
    _check_pair_spec(pair, spec)
    out = []
    for r in range(0, pair.lr.height - spec.lr_size + 1, spec.stride):
        for c in range(0, pair.lr.width - spec.lr_size + 1, spec.stride):
            out.append(_cut(pair, spec, r, c))
    return out


def list_corpus(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"corpus directory {directory} does not exist")
    paths = sorted(p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() == ".png")
    if not paths:
        raise DataError(f"no PNG files under {directory}")
    return paths


def read_manifest(path) -> List[Path]:
    """One image path per line, relative entries resolved against the manifest."""
    path = Path(path)
    base = path.parent
    paths = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entry = Path(line)
        paths.append(entry if entry.is_absolute() else base / entry)
    if not paths:
        raise DataError(f"manifest {path} lists no images")
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataError(f"manifest entries not found: {missing}")
    return paths


class _LruDict:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self._store: OrderedDict = OrderedDict()

    def get(self, key):
        if key not in self._store:
            return None
        self._store.move_to_end(key)
        return self._store[key]

    def put(self, key, value):
        self._store[key] = value
        self._store.move_to_end(key)
        while len(self._store) > self.capacity:
            self._store.popitem(last=False)


class PatchSampler:
    """Draws augmented patch batches for the training loop.

    Per patch: pick a (file, variant) uniformly, build the augmented LR/HR
    pair (cached), and crop a random window. Variants whose plane is too
    small for the requested patch are redrawn; if nothing fits after
    max_attempts draws the corpus cannot serve that size.
    """

    def __init__(self, paths, scale: int, dtype=np.float32,
                 plane_cache: int = 24, pair_cache: int = 48,
                 max_attempts: int = 200):
        self.paths = [Path(p) for p in paths]
        if not self.paths:
            raise DataError("sampler needs at least one image")
        self.scale = scale
        self.dtype = np.dtype(dtype)
        self.variants = variant_settings()
        self._planes = _LruDict(plane_cache)
        self._pairs = _LruDict(pair_cache)
        self.max_attempts = max_attempts

    def _rescaled_plane(self, path: Path, rescale: float) -> ImagePlane:
        key = (path, rescale)
        plane = self._planes.get(key)
        if plane is None:
            plane = rescale_plane(load_luminance(path), rescale)
            self._planes.put(key, plane)
        return plane

    _TOO_SMALL = object()

    def _pair(self, path: Path, variant: int) -> Optional[PlanePair]:
        key = (path, variant)
        hit = self._pairs.get(key)
        if hit is not None:
            return None if hit is self._TOO_SMALL else hit
        rescale, rotation, hflip = self.variants[variant]
        plane = self._rescaled_plane(path, rescale)
        pair = make_pair(orient_plane(plane, rotation, hflip), self.scale)
        self._pairs.put(key, self._TOO_SMALL if pair is None else pair)
        return pair

    def sample(self, rng: np.random.Generator, count: int, lr_size: int):
        if count < 1 or lr_size < 1:
            raise UsageError("count and lr_size must be >= 1")
        m = self.scale
        hr_size = m * lr_size - m + 1
        spec = PatchSpec(scale=m, lr_size=lr_size, hr_size=hr_size)
        lr_batch = np.empty((count, 1, lr_size, lr_size), dtype=self.dtype)
        hr_batch = np.empty((count, 1, hr_size, hr_size), dtype=self.dtype)
        for i in range(count):
            for attempt in range(self.max_attempts):
                path = self.paths[int(rng.integers(0, len(self.paths)))]
                variant = int(rng.integers(0, len(self.variants)))
                pair = self._pair(path, variant)
                if pair is None or pair.lr.height < lr_size \
                        or pair.lr.width < lr_size:
                    continue
                r = int(rng.integers(0, pair.lr.height - lr_size + 1))
                c = int(rng.integers(0, pair.lr.width - lr_size + 1))
                lr_patch, hr_patch = _cut(pair, spec, r, c)
                lr_batch[i, 0] = lr_patch
                hr_batch[i, 0] = hr_patch
                break
            else:
                raise DataError(f"no augmented image can serve {lr_size}x"
                                f"{lr_size} patches after"
                                f" {self.max_attempts} draws")
        return Tensor(lr_batch), Tensor(hr_batch)
