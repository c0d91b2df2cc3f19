"""Reference evaluation and a lock-step cycle simulation of the planned dataflow.

Arrays are numpy arrays indexed with the first declared dimension last, so an
``image(W, *)`` tile is an ``(H, W)`` array and its C-order flattening is the
linear stream the hardware sees.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import arith, dsl
from .creuse import ComputePlan
from .design import Design
from .device import DeviceBudget
from .errors import StencilError
from .ir import StageGraph, lower, valid_regions


class DivisionByZero(StencilError):
    def __init__(self, stage, position):
        self.stage = stage
        self.position = tuple(int(p) for p in position)
        super().__init__(f"division by zero in stage {stage!r} at position {self.position}")


class Deadlock(StencilError):
    pass


class GuardExceeded(StencilError):
    pass


class InputShapeError(StencilError):
    pass


def tile_extents_of(graph: StageGraph, inputs: dict) -> tuple[int, ...]:
    """Declared-order tile extents implied by the input arrays."""
    shapes = set()
    for node in graph.inputs:
        if node.name not in inputs:
            raise InputShapeError(f"missing input array {node.name!r}")
        shapes.add(np.shape(inputs[node.name]))
    extra = set(inputs) - {n.name for n in graph.inputs}
    if extra:
        raise InputShapeError(f"unknown input arrays: {', '.join(sorted(extra))}")
    if len(shapes) != 1:
        raise InputShapeError(f"input arrays disagree on shape: {sorted(shapes)}")
    ext = tuple(reversed(shapes.pop()))
    if len(ext) != len(graph.extents):
        raise InputShapeError(f"inputs have rank {len(ext)}, program expects {len(graph.extents)}")
    for declared, given in zip(graph.extents, ext):
        if declared is not None and declared != given:
            raise InputShapeError(f"input extents {ext} do not match declared tile {graph.extents}")
    return ext


def _as_dtype(values, elem_type):
    return np.asarray(values).astype(arith.dtype_of(elem_type), copy=False)


def _eval_expr(expr, fetch, elem_type, shape, stage, region):
    if isinstance(expr, dsl.Num):
        return np.full(shape, arith.constant(expr.value, elem_type))
    if isinstance(expr, dsl.Tap):
        return fetch(expr)
    if isinstance(expr, dsl.Neg):
        with np.errstate(over="ignore"):
            return -_eval_expr(expr.operand, fetch, elem_type, shape, stage, region)
    a = _eval_expr(expr.left, fetch, elem_type, shape, stage, region)
    b = _eval_expr(expr.right, fetch, elem_type, shape, stage, region)
    if expr.op == "/" and not dsl.is_float_type(elem_type):
        zeros = np.argwhere(b == 0)
        if len(zeros):
            pos = tuple(reversed(zeros[0]))
            raise DivisionByZero(stage, tuple(p + lo for p, lo in zip(pos, region.lo)))
    return arith.apply(expr.op, a, b)


def naive_eval(program: dsl.StencilProgram, inputs: dict) -> dict:
    """Evaluate every stage over its valid region, in declaration order.

    Returns cropped arrays (valid region only) for every computed array,
    including iterate copies.
    """
    graph = lower(program)
    ext = tile_extents_of(graph, inputs)
    regions = valid_regions(graph, ext)
    full = {n.name: _as_dtype(inputs[n.name], n.elem_type) for n in graph.inputs}
    out = {}
    for node in graph.compute_nodes:
        region = regions[node.name]
        dt = arith.dtype_of(node.elem_type)

        def fetch(tap, region=region, dt=dt):
            sl = tuple(
                slice(lo + o, hi + o)
                for lo, hi, o in zip(reversed(region.lo), reversed(region.hi), reversed(tap.offsets))
            )
            return full[tap.array][sl].astype(dt, copy=False)

        vals = _eval_expr(node.expr, fetch, node.elem_type, tuple(reversed(region.shape)), node.name, region)
        vals = np.asarray(vals, dtype=dt)
        arr = np.zeros(tuple(reversed(ext)), dtype=dt)
        arr[region.slices()] = vals
        full[node.name] = arr
        out[node.name] = vals
    return out


def _shifted(values: np.ndarray, shift: int) -> np.ndarray:
    """``out[p] = values[p + shift]``, zero where that falls outside the stream."""
    n = len(values)
    out = np.zeros_like(values)
    if abs(shift) >= n:
        return out
    if shift >= 0:
        out[: n - shift] = values[shift:]
    else:
        out[-shift:] = values[: n + shift]
    return out


def evaluate_plan(plan: ComputePlan, streams: dict, elem_type: str, length: int,
                  stage: Optional[str] = None, valid=None, extents=None) -> np.ndarray:
    """Run a ComputePlan over whole linear streams, in DAG order.

    ``valid`` is a boolean mask of stream positions inside the stage's valid
    region; an integer division by zero there raises ``DivisionByZero`` with
    the position given as tile coordinates (``extents`` required).
    """
    dt = arith.dtype_of(elem_type)
    if plan.root is None:
        return np.zeros(length, dtype=dt)
    values: list = []

    def read(a):
        v = _shifted(values[a.node], a.shift)
        if a.sign < 0:
            with np.errstate(over="ignore"):
                v = -v
        return v

    for node in plan.nodes:
        if node.op == "input":
            values.append(streams[node.array].astype(dt, copy=False))
        elif node.op == "const":
            values.append(np.full(length, arith.constant(node.weight, elem_type)))
        elif node.op == "scale":
            values.append(arith.scale(read(node.args[0]), node.weight, elem_type))
        else:
            sym = {"add": "+", "mul": "*", "div": "/"}[node.op]
            left, right = read(node.args[0]), read(node.args[1])
            if sym == "/" and valid is not None and not dsl.is_float_type(elem_type):
                bad = np.flatnonzero((right == 0) & valid)
                if bad.size:
                    pos = np.unravel_index(bad[0], tuple(reversed(extents)))
                    raise DivisionByZero(stage, tuple(reversed(pos)))
            values.append(arith.apply(sym, left, right))
    return read(plan.root).astype(dt, copy=False)


@dataclass
class StageStats:
    produced: int = 0
    active_cycles: int = 0
    first_cycle: Optional[int] = None
    last_cycle: Optional[int] = None
    window_needed: int = 0  # largest window a PE batch needed resident
    align_deficit: int = 0  # elements by which the planned buffer fell short


@dataclass
class SimResult:
    outputs: dict  # output name -> valid-region array
    cycles: int
    stats: dict  # stage name -> StageStats
    store_throughput: float  # elements per cycle between first and last store
    rate: int  # elements admitted per load cycle
    trace: list = field(default_factory=list)  # (cycle, stage, elems_in, elems_out)

    def to_json(self) -> dict:
        return {
            "cycles": self.cycles,
            "rate": self.rate,
            "store_throughput": round(self.store_throughput, 6),
            "stages": {
                name: {
                    "produced": s.produced,
                    "active_cycles": s.active_cycles,
                    "first_cycle": s.first_cycle,
                    "last_cycle": s.last_cycle,
                    "window_needed": s.window_needed,
                    "align_deficit": s.align_deficit,
                }
                for name, s in sorted(self.stats.items())
            },
        }


def stream_rate(design: Design, budget: DeviceBudget) -> tuple[int, int]:
    """(load rate, store rate) in elements per cycle."""
    g = design.graph
    k = design.point.unroll_factor
    in_bits = sum(dsl.type_bits(n.elem_type) for n in g.inputs)
    out_bits = dsl.type_bits(g.output.elem_type)
    read = max(1, budget.dram_read_bits_per_cycle // in_bits)
    write = max(1, budget.dram_write_bits_per_cycle // out_bits)
    rate = min(k, read, write)
    return rate, min(k, write)


def simulate(design: Design, inputs: dict, budget: Optional[DeviceBudget] = None,
             max_cycles: Optional[int] = None, trace: bool = False) -> SimResult:
    """Cycle-step the load stage, every stage's PEs and the store stage.

    Each cycle the load stage admits up to ``rate`` elements of every input.
    A stage fires its ``k`` PEs on outputs ``q`` whose newest tap ``q +
    max_offset`` is visible in every producer (or the producer stream is
    complete); results become visible ``depth + 1`` cycles later. The store
    stage drains what the output stage has made visible. Values are computed
    from the same ComputePlans over the whole stream.
    """
    budget = budget or DeviceBudget()
    g = design.graph
    k = design.point.unroll_factor
    ext = tile_extents_of(g, inputs)
    n = math.prod(ext)
    if n % k:
        raise StencilError(f"stream length {n} is not a multiple of unroll factor {k}")
    rate, store_rate = stream_rate(design, budget)
    if max_cycles is None:
        max_cycles = 4 * (n + sum(e.span for e in design.reuse.edges)) + 1000

    # functional values
    streams = {name: _as_dtype(inputs[name], g.node(name).elem_type).reshape(-1) for name in
               (nd.name for nd in g.inputs)}
    regions = valid_regions(g, ext)
    for node in g.compute_nodes:
        mask = np.zeros(tuple(reversed(ext)), dtype=bool)
        mask[regions[node.name].slices()] = True
        streams[node.name] = evaluate_plan(design.compute[node.name], streams, node.elem_type, n,
                                           node.name, mask.reshape(-1), ext)
    out_name = g.output.name
    outputs = {out_name: streams[out_name].reshape(tuple(reversed(ext)))[regions[out_name].slices()]}

    # timing
    deps = {}
    for node in g.compute_nodes:
        deps[node.name] = []
        for e in g.in_edges(node.name):
            buf = design.reuse.edge(e.producer, e.consumer)
            deps[node.name].append((e.producer, e.footprint.max_offset, buf.min_offset,
                                    buf.total_elems + buf.align))
    depth = {name: design.compute[name].depth for name in deps}
    names = [nd.name for nd in g.compute_nodes]
    in_names = [nd.name for nd in g.inputs]
    visible = {name: 0 for name in in_names + names}
    produced = {name: 0 for name in names}
    pending = {name: deque() for name in names}
    stats = {name: StageStats() for name in names}
    rows = []
    loaded = stored = 0
    first_store = last_store = None
    cycle = 0
    while stored < n:
        cycle += 1
        if cycle > max_cycles:
            raise GuardExceeded(f"simulation exceeded {max_cycles} cycles")
        progress = False
        if loaded < n:
            got = min(rate, n - loaded)
            loaded += got
            progress = True
            if trace:
                rows.append((cycle, "load", got, got))
        for name in names:
            p = produced[name]
            if p == n:
                continue
            bound = n
            for prod, m_hi, _, _ in deps[name]:
                v = visible[prod]
                if v < n:
                    bound = min(bound, v - m_hi)
            new = min(p + k, bound)
            if new <= p:
                continue
            st = stats[name]
            for prod, _, m_lo, capacity in deps[name]:
                need = visible[prod] - max(p + m_lo, 0)
                st.window_needed = max(st.window_needed, need)
                st.align_deficit = max(st.align_deficit, need - capacity)
            produced[name] = new
            pending[name].append((cycle + depth[name], new))
            st.produced = new
            st.active_cycles += 1
            if st.first_cycle is None:
                st.first_cycle = cycle
            st.last_cycle = cycle
            progress = True
            if trace:
                rows.append((cycle, name, new - p, new - p))
        avail = visible[out_name]
        if stored < avail:
            got = min(store_rate, avail - stored)
            stored += got
            if first_store is None:
                first_store = cycle
            last_store = cycle
            progress = True
            if trace:
                rows.append((cycle, "store", got, got))
        for name in in_names:
            visible[name] = loaded
        waiting = False
        for name in names:
            q = pending[name]
            while q and q[0][0] <= cycle:
                visible[name] = q.popleft()[1]
            waiting = waiting or bool(q)
        if not progress and not waiting and stored < n:
            raise Deadlock(f"no progress at cycle {cycle} with {n - stored} elements outstanding")
    throughput = n / (last_store - first_store + 1)
    return SimResult(outputs, cycle, stats, throughput, rate, rows)


def random_inputs(program: dsl.StencilProgram, extents, seed: int, low: int = -100, high: int = 100) -> dict:
    """Seeded random tile data for every input (integers, cast to the element type)."""
    rng = np.random.default_rng(seed)
    shape = tuple(reversed(tuple(extents)))
    return {
        d.name: rng.integers(low, high, size=shape).astype(arith.dtype_of(d.elem_type))
        for d in program.inputs
    }
