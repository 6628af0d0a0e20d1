"""Strict key=value run configuration shared by all CLI commands.

Every hyperparameter of the model, the training schedule, and the evaluation
protocol is addressable by a dotted key (model.d3, train.lr, eval.border_shave).
Values come from an optional config file, then repeatable --set overrides,
then dedicated flags, later sources winning. Unknown keys are fatal: a typo
must never silently fall back to a default mid-reproduction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple

from .errors import ConfigError
from .metrics import EvalProtocol
from .model import IdnConfig
from .training import TrainSchedule


def _parse_int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_metrics(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


REGISTRY: Dict[str, Callable[[str], object]] = {
    "model.scale": _parse_int,
    "model.num_dblocks": _parse_int,
    "model.d3": _parse_int,
    "model.d": _parse_int,
    "model.s": _parse_int,
    "model.groups": _parse_int,
    "model.lrelu_slope": _parse_float,
    "model.rblock_kernel": _parse_int,
    "model.feat_channels": _parse_int,
    "train.pretrain_iters": _parse_int,
    "train.mae_iters": _parse_int,
    "train.mse_iters": _parse_int,
    "train.lr": _parse_float,
    "train.batch_size": _parse_int,
    "train.weight_decay": _parse_float,
    "train.seed": _parse_int,
    "train.log_every": _parse_int,
    "train.checkpoint_every": _parse_int,
    "eval.border_shave": _parse_int,
    "eval.bit_depth_peak": _parse_int,
    "eval.metrics": _parse_metrics,
    "eval.round_to_8bit": _parse_bool,
}

_MODEL_FIELDS = ("num_dblocks", "d3", "d", "s", "groups", "lrelu_slope",
                 "rblock_kernel", "feat_channels")
_TRAIN_FIELDS = ("pretrain_iters", "mae_iters", "mse_iters", "lr",
                 "batch_size", "weight_decay", "seed", "log_every",
                 "checkpoint_every")
_EVAL_FIELDS = ("border_shave", "bit_depth_peak", "metrics", "round_to_8bit")


def parse_assignment(text: str) -> Tuple[str, object]:
    """Parse one KEY=VALUE string against the registry."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"expected KEY=VALUE, got {text!r}")
    parser = REGISTRY.get(key)
    if parser is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    return key, parser(raw.strip())


def read_config_file(path) -> Dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values: Dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            key, value = parse_assignment(stripped)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        values[key] = value
    return values


@dataclass
class RunConfig:
    values: Dict[str, object]

    @classmethod
    def load(cls, config_path: Optional[str] = None,
             assignments: Iterable[str] = (),
             flag_values: Optional[Dict[str, object]] = None) -> "RunConfig":
        """Merge file < --set < dedicated flags (later sources win)."""
        values: Dict[str, object] = {}
        if config_path is not None:
            values.update(read_config_file(config_path))
        for text in assignments:
            key, value = parse_assignment(text)
            values[key] = value
        for key, value in (flag_values or {}).items():
            if key not in REGISTRY:
                raise ConfigError(f"unknown configuration key {key!r}")
            if value is not None:
                values[key] = value
        return cls(values=values)

    def get(self, key: str, default=None):
        if key not in REGISTRY:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values.get(key, default)

    def model_config(self) -> IdnConfig:
        scale = self.get("model.scale")
        if scale is None:
            raise ConfigError("the upscale factor is required: pass --scale"
                              " or set model.scale")
        kwargs = {}
        for name in _MODEL_FIELDS:
            value = self.get(f"model.{name}")
            if value is not None:
                kwargs[name] = value
        return IdnConfig(scale=scale, **kwargs)

    def train_schedule(self, scale: Optional[int] = None) -> TrainSchedule:
        if scale is None:
            scale = self.get("model.scale")
        if scale is None:
            raise ConfigError("the upscale factor is required: pass --scale"
                              " or set model.scale")
        kwargs = {}
        for name in _TRAIN_FIELDS:
            value = self.get(f"train.{name}")
            if value is not None:
                kwargs[name] = value
        return TrainSchedule(scale=scale, **kwargs)

    def eval_protocol(self, scale: int) -> EvalProtocol:
        kwargs = {}
        for name in _EVAL_FIELDS:
            value = self.get(f"eval.{name}")
            if value is not None:
                kwargs[name] = value
        kwargs.setdefault("border_shave", scale)
        return EvalProtocol(**kwargs)
