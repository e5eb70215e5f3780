"""Dual-path (scalar reference and vectorized) complex linear algebra and LMMSE MIMO detection."""

from importlib.metadata import PackageNotFoundError, version

from .detector import DetectionConfig, DetectionResult, StageTimings, detect_slot, lmmse_weights
from .kernels import ExecPath, capability_query, cdot, cmul_fma, gram_update, vadd
from .linalg import LuFactorization, SingularMatrixError, backward_sub, forward_sub, invert, lu_factor, solve
from .tensor import CMatrix, ComplexBuffer, Layout, PrecisionMode, alloc_buffer, convert_precision, relayout

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "CMatrix",
    "ComplexBuffer",
    "DetectionConfig",
    "DetectionResult",
    "ExecPath",
    "Layout",
    "LuFactorization",
    "PrecisionMode",
    "SingularMatrixError",
    "StageTimings",
    "alloc_buffer",
    "backward_sub",
    "capability_query",
    "cdot",
    "cmul_fma",
    "convert_precision",
    "detect_slot",
    "forward_sub",
    "gram_update",
    "invert",
    "lmmse_weights",
    "lu_factor",
    "relayout",
    "solve",
    "vadd",
]
