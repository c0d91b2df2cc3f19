"""Partitioned, bottleneck-guided design-space exploration.

Each partition starts from its own seed point, evaluates it with the analytic
model and asks the top bottleneck what to try next: a computation-bound design
gets more PEs, computation reuse or another chained iteration; a
communication-bound one gets a wider tile or fewer PEs. A partition moves to
its best proposal when that improves on the current point and closes when
nothing does. Partitions advance round-robin so the log order is fixed.
"""
from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional

from . import dsl
from .creuse import ORDP_MAX_TAPS, extract_linear
from .design import DesignPoint, compile_design, default_point, retarget
from .device import DeviceBudget
from .errors import StencilError
from .ir import EmptyRegion, IterateShapeError, lower, strides, valid_region
from .perf import COMMUNICATION, BudgetExceeded, PerfEstimate, check_budget, estimate, resources

DEFAULT_UNROLL = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_ITERATE = (1, 2, 3, 4)
DEFAULT_HEIGHT = 1024


class EmptySpace(StencilError):
    pass


@dataclass(frozen=True)
class Workload:
    """The whole problem the tiles cover.

    ``width`` is split into overlapping tiles; ``rest`` gives the streamed
    extents of the remaining dimensions; ``iterations`` is how many times the
    stencil is applied in total.
    """

    width: Optional[int]
    rest: tuple[int, ...]
    iterations: int

    def to_json(self):
        return {"width": self.width, "rest": list(self.rest), "iterations": self.iterations}


def _x_halo(program: dsl.StencilProgram, tile_width: Optional[int], q: int, rest) -> int:
    if tile_width is None:
        return 0
    graph = lower(retarget(program, DesignPoint(1, q, tile_width)))
    region = valid_region(graph, (tile_width,) + tuple(rest))
    return tile_width - region.shape[0]


def default_workload(program: dsl.StencilProgram, height: int = DEFAULT_HEIGHT) -> Workload:
    """Four declared tiles wide (net of halo), ``height`` deep, the program's iteration count."""
    shape = program.tile_shape
    if shape[0] is None:
        return Workload(None, (), program.iterate_factor)
    rest = tuple(height if e is None else e for e in shape[1:])
    halo = _x_halo(program, shape[0], 1, rest) if rest or shape[0] else 0
    return Workload(4 * (shape[0] - halo) + halo, rest, program.iterate_factor)


@dataclass
class DesignSpace:
    program: dsl.StencilProgram
    budget: DeviceBudget
    workload: Workload
    unroll_set: tuple
    iterate_set: tuple
    tile_widths: tuple
    creuse_modes: tuple
    valid: list  # DesignPoints, deterministic order
    invalid: dict  # DesignPoint -> reason
    log: list  # remapping notes
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid_size(self) -> int:
        return len(self.valid) + len(self.invalid)

    def is_valid(self, point: DesignPoint) -> bool:
        return point in self._valid_set

    def __post_init__(self):
        self._valid_set = set(self.valid)

    def tile_extents(self, point: DesignPoint) -> tuple:
        if point.tile_width is None:
            return (DEFAULT_HEIGHT if self.program.tile_shape[0] is None else self.program.tile_shape[0],)
        return (point.tile_width,) + self.workload.rest

    def tiles(self, point: DesignPoint) -> int:
        w = self.workload
        if point.tile_width is None or w.width is None:
            return 1
        halo = _x_halo(self.program, point.tile_width, point.iterate_factor, w.rest)
        if point.tile_width >= w.width:
            return 1
        return math.ceil((w.width - halo) / (point.tile_width - halo))

    def design(self, point: DesignPoint):
        return compile_design(self.program, point, budget=self.budget, _cache=self._cache)

    def evaluate(self, point: DesignPoint) -> "Evaluation":
        d = self.design(point)
        est = estimate(d, self.budget, self.tile_extents(point))
        passes = self.workload.iterations // point.iterate_factor
        total = self.tiles(point) * passes * est.cycles
        return Evaluation(point, est, total)

    def to_json(self) -> dict:
        return {
            "unroll_set": list(self.unroll_set),
            "iterate_set": list(self.iterate_set),
            "tile_widths": list(self.tile_widths),
            "creuse_modes": list(self.creuse_modes),
            "workload": self.workload.to_json(),
            "grid_size": self.grid_size,
            "valid_points": len(self.valid),
            "remapped": list(self.log),
        }


@dataclass(frozen=True)
class Evaluation:
    point: DesignPoint
    estimate: PerfEstimate
    total_cycles: int  # whole workload

    @property
    def qor(self):
        """Lower is better: cycles first, then resources, then a fixed knob order."""
        e = self.estimate
        return (self.total_cycles, e.dsp_used, e.bram_used, e.lut_used, self.point.key())


def _needs_hsbr(program: dsl.StencilProgram, tile_width) -> list[str]:
    prog = retarget(program, DesignPoint(1, 1, tile_width)) if tile_width else program
    st = strides(prog.tile_shape)
    out = []
    for stage in prog.stages:
        lin = extract_linear(stage, st)
        if lin and len(lin.taps) > ORDP_MAX_TAPS:
            out.append(stage.name)
    return out


def enumerate_space(program: dsl.StencilProgram, budget: Optional[DeviceBudget] = None,
                    unroll_set=DEFAULT_UNROLL, iterate_set=DEFAULT_ITERATE, tile_widths=None,
                    creuse_modes=("off", "ordp"), workload: Optional[Workload] = None) -> DesignSpace:
    """The knob grid with every point checked for validity and resource fit."""
    budget = budget or DeviceBudget()
    workload = workload or default_workload(program)
    if tile_widths is None:
        w = program.tile_shape[0]
        tile_widths = (None,) if w is None else tuple(sorted({max(1, w // 2), w, 2 * w}))
    log = []
    modes = []
    for m in creuse_modes:
        if m == "ordp":
            big = sorted({s for w in tile_widths for s in _needs_hsbr(program, w)})
            if big:
                log.append(f"creuse=ordp remapped to hsbr: stage(s) {', '.join(big)} exceed {ORDP_MAX_TAPS} taps")
                m = "hsbr"
        if m not in modes:
            modes.append(m)

    space = DesignSpace(program, budget, workload, tuple(unroll_set), tuple(iterate_set),
                        tuple(tile_widths), tuple(modes), [], {}, log)
    for w, q, k, m in itertools.product(tile_widths, iterate_set, unroll_set, modes):
        point = DesignPoint(k, q, w, m)
        reason = _invalid_reason(space, point)
        if reason:
            space.invalid[point] = reason
        else:
            space.valid.append(point)
    space._valid_set = set(space.valid)
    if not space.valid:
        raise EmptySpace("no design point is valid within the device budget")
    return space


def _invalid_reason(space: DesignSpace, point: DesignPoint) -> Optional[str]:
    if point.iterate_factor > space.workload.iterations or space.workload.iterations % point.iterate_factor:
        return "iterate factor does not divide the workload's iteration count"
    if math.prod(space.tile_extents(point)) % point.unroll_factor:
        return "unroll factor does not divide the tile stream"
    try:
        d = space.design(point)
        valid_region(d.graph, space.tile_extents(point))
        check_budget(resources(d, space.budget), space.budget)
    except BudgetExceeded as exc:
        return f"over budget: {exc}"
    except (EmptyRegion, IterateShapeError) as exc:
        return str(exc)
    return None


@dataclass
class Partition:
    index: int
    seed: DesignPoint
    current: Evaluation
    best: Evaluation
    open: bool = True


@dataclass
class SearchState:
    space: DesignSpace
    partitions: list
    evaluated: dict  # DesignPoint -> Evaluation
    log: list
    max_evals: int

    @property
    def evaluations(self) -> int:
        return len(self.evaluated)

    @property
    def best(self) -> Evaluation:
        return min((p.best for p in self.partitions), key=lambda e: e.qor)


def _neighbor(values, current, step):
    vals = sorted(v for v in values if v is not None)
    if current not in vals:
        return None
    i = vals.index(current) + step
    return vals[i] if 0 <= i < len(vals) else None


def bottleneck_step(state: SearchState, point: DesignPoint, est: PerfEstimate) -> list[DesignPoint]:
    """Candidate moves for the top bottleneck, filtered to valid, unseen points."""
    space = state.space
    top = est.bottlenecks[0]
    props = []
    if top.kind == COMMUNICATION:
        w = _neighbor(space.tile_widths, point.tile_width, +1)
        if w is not None:
            props.append(DesignPoint(point.unroll_factor, point.iterate_factor, w, point.creuse_mode))
        if point.unroll_factor > est.bw_elems and point.unroll_factor // 2 >= 1:
            props.append(DesignPoint(point.unroll_factor // 2, point.iterate_factor, point.tile_width,
                                     point.creuse_mode))
    else:
        props.append(DesignPoint(point.unroll_factor * 2, point.iterate_factor, point.tile_width,
                                 point.creuse_mode))
        if point.creuse_mode == "off":
            for m in space.creuse_modes:
                if m != "off":
                    props.append(DesignPoint(point.unroll_factor, point.iterate_factor, point.tile_width, m))
        props.append(DesignPoint(point.unroll_factor, point.iterate_factor + 1, point.tile_width,
                                 point.creuse_mode))
    out = []
    for p in props:
        if space.is_valid(p) and p not in state.evaluated and p not in out:
            out.append(p)
    return out


def _seeds(space: DesignSpace, partitions: int, seed: int) -> list[DesignPoint]:
    """Declared point, then the low and high ends of the unroll axis, then random picks."""
    valid = space.valid
    declared = default_point(space.program)
    ks = sorted({p.unroll_factor for p in valid})

    def closest(target: DesignPoint):
        return min(valid, key=lambda p: (
            abs(math.log2(p.unroll_factor) - math.log2(target.unroll_factor)),
            abs((p.tile_width or 0) - (target.tile_width or 0)),
            abs(p.iterate_factor - target.iterate_factor),
            p.creuse_mode != target.creuse_mode,
            p.key(),
        ))

    wanted = [
        closest(declared),
        closest(DesignPoint(ks[0], declared.iterate_factor, declared.tile_width)),
        closest(DesignPoint(ks[-1], declared.iterate_factor, declared.tile_width)),
    ]
    rng = random.Random(seed)
    pool = list(valid)
    rng.shuffle(pool)
    out = []
    for p in wanted + pool:
        if p not in out:
            out.append(p)
        if len(out) == partitions:
            break
    return out


def explore(program: dsl.StencilProgram, budget: Optional[DeviceBudget] = None, partitions: int = 3,
            max_evals: Optional[int] = None, seed: int = 0, space: Optional[DesignSpace] = None):
    """Run the search; returns (best DesignPoint, report dict)."""
    space = space or enumerate_space(program, budget)
    if partitions < 1:
        raise ValueError("need at least one partition")
    if max_evals is None:
        max_evals = max(1, len(space.valid) // 4)
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")
    state = SearchState(space, [], {}, [], max_evals)

    def run(point, part_index, acted_on):
        ev = space.evaluate(point)
        state.evaluated[point] = ev
        entry = {
            "eval": len(state.evaluated),
            "partition": part_index,
            "point": point.to_json(),
            "total_cycles": ev.total_cycles,
            "tile_cycles": ev.estimate.cycles,
            "dsp_used": ev.estimate.dsp_used,
            "bram_used": ev.estimate.bram_used,
            "top_bottleneck": ev.estimate.bottlenecks[0].to_json(),
            "acted_on": acted_on,
        }
        state.log.append(entry)
        return ev, entry

    for i, s in enumerate(_seeds(space, partitions, seed)):
        if len(state.evaluated) >= max_evals:
            break
        if s in state.evaluated:
            continue
        ev, entry = run(s, i, None)
        entry["best_so_far"] = ev.total_cycles
        state.partitions.append(Partition(i, s, ev, ev))

    while any(p.open for p in state.partitions) and len(state.evaluated) < max_evals:
        for part in state.partitions:
            if not part.open or len(state.evaluated) >= max_evals:
                continue
            top = part.current.estimate.bottlenecks[0]
            props = bottleneck_step(state, part.current.point, part.current.estimate)
            best = None
            for p in props:
                if len(state.evaluated) >= max_evals:
                    break
                ev, entry = run(p, part.index, top.to_json())
                if best is None or ev.qor < best.qor:
                    best = ev
                if ev.qor < part.best.qor:
                    part.best = ev
                entry["best_so_far"] = part.best.total_cycles
            if best is not None and best.qor < part.current.qor:
                part.current = best
            else:
                part.open = False

    best = state.best
    report = {
        "space": space.to_json(),
        "partitions": [
            {"index": p.index, "seed": p.seed.to_json(), "best": p.best.point.to_json(),
             "best_total_cycles": p.best.total_cycles}
            for p in state.partitions
        ],
        "evaluations": len(state.evaluated),
        "max_evals": max_evals,
        "seed": seed,
        "best": {"point": best.point.to_json(), "total_cycles": best.total_cycles,
                 "estimate": best.estimate.to_json()},
        "log": state.log,
    }
    return best.point, report


def exhaustive(space: DesignSpace) -> Evaluation:
    """Evaluate every valid point; the reference optimum for the guided search."""
    return min((space.evaluate(p) for p in space.valid), key=lambda e: e.qor)


def report_bytes(report: dict) -> bytes:
    return json.dumps(report, sort_keys=True, indent=2).encode()
