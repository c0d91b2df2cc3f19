"""Stencil accelerator compiler toolkit.

Parse a small stencil DSL, lower it to a stage graph, plan minimal reuse
buffers and shared arithmetic, estimate and simulate the resulting dataflow
design, search its knobs, and emit C for it.
"""

__version__ = "0.1.0"

from .creuse import ComputePlan, hsbr, ordp, plan_stage, verify_plan  # noqa: E402
from .design import Design, DesignPoint, compile_design  # noqa: E402
from .device import DeviceBudget  # noqa: E402
from .dsl import StencilProgram, format_program, load, parse_source  # noqa: E402
from .errors import InternalError, PositionedError, StencilError  # noqa: E402
from .ir import StageGraph, lower, valid_region  # noqa: E402
from .perf import PerfEstimate, estimate  # noqa: E402
from .reuse import ReusePlan, plan_reuse  # noqa: E402
from .sim import SimResult, naive_eval, simulate  # noqa: E402

__all__ = [
    "ComputePlan", "Design", "DesignPoint", "DeviceBudget", "InternalError", "PerfEstimate",
    "PositionedError", "ReusePlan", "SimResult", "StageGraph", "StencilError", "StencilProgram",
    "compile_design", "estimate", "format_program", "hsbr", "load", "lower", "naive_eval", "ordp",
    "parse_source", "plan_reuse", "plan_stage", "simulate", "valid_region", "verify_plan",
]
