"""Compile a program at a design point into the graph and plans every backend uses."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from . import dsl
from .creuse import CREUSE_MODES, ComputePlan, expression_plan, plan_stage
from .device import DeviceBudget
from .ir import StageGraph, lower, strides
from .reuse import ReusePlan, plan_reuse


@dataclass(frozen=True)
class DesignPoint:
    """One knob assignment: unroll (PEs per stage), iterate (chained copies),
    tile width, and the computation-reuse mode."""

    unroll_factor: int
    iterate_factor: int
    tile_width: Optional[int]  # None keeps an unbounded 1-D stream as declared
    creuse_mode: str = "off"

    def __post_init__(self):
        if self.unroll_factor < 1 or self.iterate_factor < 1:
            raise ValueError(f"invalid design point {self}")
        if self.tile_width is not None and self.tile_width < 1:
            raise ValueError(f"invalid design point {self}")
        if self.creuse_mode not in CREUSE_MODES:
            raise ValueError(f"unknown creuse mode {self.creuse_mode!r}")

    def key(self):
        return (self.tile_width or 0, self.unroll_factor, self.iterate_factor, self.creuse_mode)

    def label(self) -> str:
        return f"k={self.unroll_factor} q={self.iterate_factor} w={self.tile_width} creuse={self.creuse_mode}"

    def to_json(self):
        return {
            "unroll_factor": self.unroll_factor,
            "iterate_factor": self.iterate_factor,
            "tile_width": self.tile_width,
            "creuse_mode": self.creuse_mode,
        }


def default_point(program: dsl.StencilProgram, creuse_mode: str = "off") -> DesignPoint:
    return DesignPoint(program.unroll_factor, program.iterate_factor, program.tile_width, creuse_mode)


def retarget(program: dsl.StencilProgram, point: DesignPoint) -> dsl.StencilProgram:
    """The same program with the point's knobs written into its header and tile shape."""
    inputs = program.inputs
    if point.tile_width is not None:
        inputs = tuple(
            dataclasses.replace(d, tile_shape=(point.tile_width,) + d.tile_shape[1:]) for d in inputs
        )
    return dataclasses.replace(
        program, unroll_factor=point.unroll_factor, iterate_factor=point.iterate_factor, inputs=inputs
    )


@dataclass(frozen=True)
class Design:
    program: dsl.StencilProgram  # retargeted to ``point``
    point: DesignPoint
    graph: StageGraph
    reuse: ReusePlan
    compute: dict  # stage name -> ComputePlan

    @property
    def elem_types(self):
        return {n.name: n.elem_type for n in self.graph.nodes}

    def plan_summary(self) -> dict:
        return {
            "buffer_elems": self.reuse.total_elems,
            "buffer_bits": self.reuse.total_bits,
            "mults_per_output": sum(p.mults for p in self.compute.values()),
            "adds_per_output": sum(p.adds for p in self.compute.values()),
            "delay_elems": sum(p.delay_elems for p in self.compute.values()),
        }


def plan_dsp(plan: ComputePlan, elem_type: str, budget: DeviceBudget) -> int:
    """DSP cost of one PE evaluating ``plan``."""
    c = budget.costs[elem_type]
    return plan.mults * c.mult + plan.adds * c.add


def compile_design(program: dsl.StencilProgram, point: Optional[DesignPoint] = None,
                   storage_budget: Optional[int] = None, seed: int = 0,
                   stream_length: Optional[int] = None, budget: Optional[DeviceBudget] = None,
                   _cache: Optional[dict] = None) -> Design:
    """Lower ``program`` at ``point`` and plan buffers and arithmetic for every stage.

    A reuse mode never costs more DSPs than the plain transcription; when it
    would, the transcription is kept.
    """
    point = point or default_point(program)
    budget = budget or DeviceBudget()
    prog = retarget(program, point)
    graph = lower(prog)
    st = strides(prog.tile_shape)
    compute = {}
    for node in graph.compute_nodes:
        stage = dsl.StageDecl(node.name, node.elem_type, node.expr, prog.rank)
        key = (dsl.format_expr(node.expr), node.elem_type, st, point.creuse_mode, storage_budget, seed,
               tuple(sorted((t, c.mult, c.add) for t, c in budget.costs.items())))
        if _cache is not None and key in _cache:
            compute[node.name] = _cache[key]
            continue
        plan = plan_stage(stage, st, point.creuse_mode, storage_budget, seed)
        direct = expression_plan(node.expr, st)
        if plan_dsp(direct, node.elem_type, budget) < plan_dsp(plan, node.elem_type, budget):
            plan = ComputePlan(direct.nodes, direct.root, plan.mode, plan.optimal)
        if _cache is not None:
            _cache[key] = plan
        compute[node.name] = plan
    # a stage without producers free-runs like an input, so it has no skew
    latency = {name: plan.depth + 1 for name, plan in compute.items() if graph.in_edges(name)}
    reuse = plan_reuse(graph, point.unroll_factor, stream_length, latency)
    return Design(prog, point, graph, reuse, compute)

