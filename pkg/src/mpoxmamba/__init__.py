"""mpoxmamba: a lightweight Mamba-CNN hybrid image classifier, from scratch.

The package layers up from a minimal autodiff tensor (``tensor``, ``ops``),
through the selective state-space core (``ssm``) and the four-directional
2-D scan layer (``vision_mamba``), to the composite blocks (``blocks``), the
full network with cost accounting and Grad-CAM (``model``), and a desk-scale
training/evaluation harness (``data``, ``metrics``, ``train``). ``cli``
exposes the command-line entry point.
"""

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    MpoxMambaError,
    NumericError,
)
from .tensor import Tensor, no_grad

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "MpoxMambaError",
    "NumericError",
    "Tensor",
    "no_grad",
]

__version__ = "0.1.0"
