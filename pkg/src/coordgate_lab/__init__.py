"""Coordinate-gated convolutions for static spatially-varying (de)convolution."""
import os

# single-threaded BLAS keeps results bit-reproducible; set before numpy loads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .errors import ConfigError, ContractError, ShapeError, TrainingAborted  # noqa: E402
from .tensor import Tensor, Tape, backward, no_grad  # noqa: E402
from .models import ModelSpec, build_model, count_params, export_gating_map  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "ShapeError", "TrainingAborted",
    "Tensor", "Tape", "backward", "no_grad",
    "ModelSpec", "build_model", "count_params", "export_gating_map",
]
