"""Single-image super-resolution with an information distillation network.

The package is a from-scratch implementation: a small NCHW tensor core, the
layer forward/backward kernels plus a reverse-mode tape, the network itself,
its two-phase training procedure, a reference-grade bicubic imaging pipeline,
and Y-channel evaluation/diagnostic tools. `idnsr.cli` ties everything into a
batch command-line tool.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    IdnError,
    ShapeError,
    StateError,
    UsageError,
)
from .tensor import Tensor, channel_mean, create, elementwise_add

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "IdnError",
    "ShapeError",
    "StateError",
    "UsageError",
    "Tensor",
    "channel_mean",
    "create",
    "elementwise_add",
    "__version__",
]
