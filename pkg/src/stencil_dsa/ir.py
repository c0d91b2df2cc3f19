"""Stage graph: stencil stages as a DAG with per-edge tap footprints."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import dsl
from .errors import StencilError


class IterateShapeError(StencilError):
    pass


class EmptyRegion(StencilError):
    pass


def strides(extents) -> tuple[int, ...]:
    """Row-major strides with the first dimension contiguous.

    The last extent may be unbounded (None); it never contributes to a stride.
    """
    out = [1]
    for extent in extents[:-1]:
        if extent is None:
            raise ValueError("only the last extent may be unbounded")
        out.append(out[-1] * extent)
    return tuple(out)


def linearize(offset, stride) -> int:
    return sum(o * s for o, s in zip(offset, stride))


@dataclass(frozen=True)
class Footprint:
    offsets: frozenset
    extents: tuple  # tile extents of the producer array (last may be None)

    @property
    def tile_width(self) -> int:
        return self.extents[0]

    @property
    def strides(self):
        return strides(self.extents)

    @property
    def lin_offsets(self) -> tuple[int, ...]:
        st = self.strides
        return tuple(sorted(linearize(o, st) for o in self.offsets))

    @property
    def span(self) -> int:
        return footprint_span(self)

    @property
    def min_offset(self) -> int:
        return self.lin_offsets[0]

    @property
    def max_offset(self) -> int:
        return self.lin_offsets[-1]


def footprint_span(footprint: Footprint) -> int:
    lin = footprint.lin_offsets
    return lin[-1] - lin[0]


@dataclass(frozen=True)
class StageNode:
    name: str
    kind: str  # input | local | output
    elem_type: str
    expr: Optional[dsl.Expr] = None
    base: str = ""
    copy: int = 0


@dataclass(frozen=True)
class Edge:
    producer: str
    consumer: str
    footprint: Footprint


@dataclass(frozen=True)
class StageGraph:
    nodes: tuple[StageNode, ...]  # topological order
    edges: tuple[Edge, ...]
    extents: tuple  # tile extents shared by every array
    unroll_factor: int
    iterate_factor: int

    def node(self, name) -> StageNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def inputs(self):
        return [n for n in self.nodes if n.kind == "input"]

    @property
    def compute_nodes(self):
        return [n for n in self.nodes if n.kind != "input"]

    @property
    def output(self) -> StageNode:
        return self.compute_nodes[-1]

    def in_edges(self, name):
        return [e for e in self.edges if e.consumer == name]

    @property
    def tile_width(self):
        return self.extents[0]


def copy_name(name: str, copy: int, iterate: int) -> str:
    return name if iterate == 1 else f"{name}.{copy}"


def lower(program: dsl.StencilProgram, iterate: Optional[int] = None) -> StageGraph:
    """Build the stage graph; ``iterate`` overrides the program's iterate factor."""
    q = program.iterate_factor if iterate is None else iterate
    if q < 1:
        raise ValueError("iterate factor must be >= 1")
    extents = program.tile_shape
    if q > 1:
        if len(program.inputs) != 1:
            raise IterateShapeError("iteration requires a single-input program")
        src, out = program.inputs[0], program.output
        if src.elem_type != out.elem_type:
            raise IterateShapeError(
                f"output type {out.elem_type} differs from input type {src.elem_type}; cannot iterate"
            )

    nodes = [StageNode(d.name, "input", d.elem_type, base=d.name) for d in program.inputs]
    edges = []
    for c in range(1, q + 1):
        mapping = {}
        if c > 1:
            mapping[program.inputs[0].name] = copy_name(program.output.name, c - 1, q)
        for stage in program.stages:
            mapping[stage.name] = copy_name(stage.name, c, q)
        for stage in program.stages:
            name = mapping[stage.name]
            expr = dsl.rename_arrays(stage.expr, mapping)
            kind = "output" if stage is program.output and c == q else "local"
            nodes.append(StageNode(name, kind, stage.elem_type, expr, stage.name, c))
            by_array: dict[str, set] = {}
            for tap in dsl.taps(expr):
                by_array.setdefault(tap.array, set()).add(tap.offsets)
            for array in sorted(by_array, key=lambda a: [n.name for n in nodes].index(a)):
                edges.append(Edge(array, name, Footprint(frozenset(by_array[array]), extents)))
    return StageGraph(tuple(nodes), tuple(edges), extents, program.unroll_factor, q)


@dataclass(frozen=True)
class ValidRegion:
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @property
    def shape(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def size(self):
        return math.prod(self.shape)

    def slices(self):
        """numpy slices for an array stored with the first dimension last (C order)."""
        return tuple(slice(l, h) for l, h in zip(reversed(self.lo), reversed(self.hi)))


def concrete_extents(graph: StageGraph, tile_extents) -> tuple[int, ...]:
    tile_extents = tuple(tile_extents)
    if len(tile_extents) != len(graph.extents):
        raise ValueError(f"expected {len(graph.extents)} tile extents, got {len(tile_extents)}")
    for declared, given in zip(graph.extents, tile_extents):
        if declared is not None and declared != given:
            raise ValueError(f"tile extents {tile_extents} do not match declaration {graph.extents}")
        if given < 1:
            raise ValueError("tile extents must be positive")
    return tile_extents


def valid_regions(graph: StageGraph, tile_extents) -> dict[str, ValidRegion]:
    """Per-array region computable from in-tile inputs only (shrink, no padding)."""
    ext = concrete_extents(graph, tile_extents)
    regions = {n.name: ValidRegion((0,) * len(ext), ext) for n in graph.inputs}
    for node in graph.compute_nodes:
        lo = [0] * len(ext)
        hi = list(ext)
        for edge in graph.in_edges(node.name):
            src = regions[edge.producer]
            for d in range(len(ext)):
                offs = [o[d] for o in edge.footprint.offsets]
                lo[d] = max(lo[d], src.lo[d] - min(offs))
                hi[d] = min(hi[d], src.hi[d] - max(offs))
        if any(h <= l for l, h in zip(lo, hi)):
            raise EmptyRegion(f"stencil radii of {node.name!r} exceed tile extents {ext}")
        regions[node.name] = ValidRegion(tuple(lo), tuple(hi))
    return regions


def valid_region(graph: StageGraph, tile_extents) -> ValidRegion:
    return valid_regions(graph, tile_extents)[graph.output.name]


def graph_to_json(graph: StageGraph) -> dict:
    return {
        "extents": ["*" if e is None else e for e in graph.extents],
        "unroll_factor": graph.unroll_factor,
        "iterate_factor": graph.iterate_factor,
        "nodes": [
            {"name": n.name, "kind": n.kind, "elem_type": n.elem_type,
             "expr": None if n.expr is None else dsl.format_expr(n.expr)}
            for n in graph.nodes
        ],
        "edges": [
            {"producer": e.producer, "consumer": e.consumer,
             "offsets": sorted(list(o) for o in e.footprint.offsets),
             "lin_offsets": list(e.footprint.lin_offsets),
             "span": e.footprint.span}
            for e in graph.edges
        ],
    }
