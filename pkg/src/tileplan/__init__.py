"""Hardware-aware, sample-free tiling for dynamic-shape tensor programs.

Offline, :func:`build_bank` enumerates micro-kernel tiles per hardware level
and annotates them with costs. At runtime, :func:`select` picks the cheapest
chain for a concrete shape.
"""

__version__ = "0.1.0"

from .bank import BuildConfig, KernelBank, load_bank, save_bank  # noqa: E402
from .candgen import build_bank  # noqa: E402
from .hwmodel import HardwareDescriptor, load_descriptor, preset  # noqa: E402
from .interp import Tensor, execute_and_count, execute_plan, naive_conv2d, naive_gemm  # noqa: E402
from .program import conv2d_program, gemm_program  # noqa: E402
from .runtime import RuntimeShape, SchedulePlan, select, select_adaptive  # noqa: E402

__all__ = [
    "BuildConfig",
    "HardwareDescriptor",
    "KernelBank",
    "RuntimeShape",
    "SchedulePlan",
    "Tensor",
    "build_bank",
    "conv2d_program",
    "execute_and_count",
    "execute_plan",
    "gemm_program",
    "load_bank",
    "load_descriptor",
    "naive_conv2d",
    "naive_gemm",
    "preset",
    "save_bank",
    "select",
    "select_adaptive",
]
