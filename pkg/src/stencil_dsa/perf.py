"""Analytic cycle, bandwidth and resource estimates for a compiled design.

The model mirrors the simulator's schedule. All stages stream at a common
rate ``r = min(k, read bandwidth, write bandwidth)`` in elements per cycle.
Each stage fires once its newest tap has arrived, so the last output trails
the last input by the longest producer chain of tap lags (at ``r``) plus
compute depths: about ``ceil(N / r) + sum(ceil(lag / r) + depth + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from . import dsl
from .design import Design, plan_dsp
from .device import BRAM_BLOCK_BITS, DeviceBudget
from .errors import StencilError
from .ir import concrete_extents

COMPUTATION = "computation"
COMMUNICATION = "communication"

# FIFO segments shorter than this live in registers rather than BRAM
BRAM_MIN_ELEMS = 64


class BudgetExceeded(StencilError):
    def __init__(self, resource, needed, available):
        self.resource = resource
        self.needed = needed
        self.available = available
        super().__init__(f"{resource}: need {needed}, budget {available}")


@dataclass(frozen=True)
class Bottleneck:
    site: str  # stage name, or the "load"/"store" interface
    latency_share: int
    kind: str

    def to_json(self):
        return {"site": self.site, "latency_share": self.latency_share, "kind": self.kind}


@dataclass(frozen=True)
class PerfEstimate:
    cycles: int
    elems_per_cycle_root: Fraction
    dram_bits_per_cycle_used: int
    bw_elems: int  # elements per cycle the read port can supply
    stream_length: int
    mults: int
    adds: int
    buffer_bits: int
    dsp_used: int
    bram_used: int
    lut_used: int
    bottlenecks: tuple[Bottleneck, ...]

    @property
    def top(self) -> Bottleneck:
        return self.bottlenecks[0]

    def to_json(self) -> dict:
        return {
            "cycles": self.cycles,
            "elems_per_cycle_root": str(self.elems_per_cycle_root),
            "dram_bits_per_cycle_used": self.dram_bits_per_cycle_used,
            "bw_elems": self.bw_elems,
            "stream_length": self.stream_length,
            "mults_per_output": self.mults,
            "adds_per_output": self.adds,
            "buffer_bits": self.buffer_bits,
            "dsp_used": self.dsp_used,
            "bram_used": self.bram_used,
            "lut_used": self.lut_used,
            "bottlenecks": [b.to_json() for b in self.bottlenecks],
        }


def _bram_blocks(elems: int, bits: int, k: int, ports: int) -> tuple[int, int]:
    """(BRAM blocks, register bits) for one FIFO segment read by ``k`` lanes."""
    if elems <= 0:
        return 0, 0
    if elems < BRAM_MIN_ELEMS:
        return 0, elems * bits
    capacity = math.ceil(elems * bits / BRAM_BLOCK_BITS)
    # every bank takes one write and one read per cycle
    return max(capacity, math.ceil(2 * k / ports)), 0


def resources(design: Design, budget: DeviceBudget) -> dict:
    k = design.point.unroll_factor
    types = design.elem_types
    mults = sum(p.mults for p in design.compute.values())
    adds = sum(p.adds for p in design.compute.values())
    dsp = k * sum(plan_dsp(p, types[name], budget) for name, p in design.compute.items())
    bram = 0
    regs = 0
    for e in design.reuse.edges:
        bits = dsl.type_bits(e.elem_type)
        for seg in e.segments + ((e.align,) if e.align else ()):
            b, r = _bram_blocks(seg, bits, k, budget.bram_ports_per_block)
            bram += b
            regs += r
        regs += k * bits  # the elements arriving this cycle
    for name, p in design.compute.items():
        bits = dsl.type_bits(types[name])
        regs += p.delay_elems * bits * k
        if not dsl.is_float_type(types[name]):
            regs += k * p.adds * bits  # integer adders are built from LUTs
    return {
        "mults": mults, "adds": adds, "buffer_bits": design.reuse.total_bits,
        "dsp_used": dsp, "bram_used": bram, "lut_used": regs,
    }


def check_budget(res: dict, budget: DeviceBudget):
    for key, cap in (("dsp_used", budget.dsp_count), ("bram_used", budget.bram_blocks),
                     ("lut_used", budget.lut_proxy_count)):
        if res[key] > cap:
            raise BudgetExceeded(key.removesuffix("_used"), res[key], cap)


def bandwidth(design: Design, budget: DeviceBudget) -> tuple[int, int]:
    """(read, write) bandwidth in elements per cycle."""
    g = design.graph
    in_bits = sum(dsl.type_bits(n.elem_type) for n in g.inputs)
    out_bits = dsl.type_bits(g.output.elem_type)
    return (max(1, budget.dram_read_bits_per_cycle // in_bits),
            max(1, budget.dram_write_bits_per_cycle // out_bits))


def _visibility(design: Design, rate: int, k: int):
    """Cycle at whose end element ``y`` of an array becomes visible downstream.

    Inputs arrive ``rate`` elements per cycle. A stage fires output ``x`` the
    cycle after its newest tap of every producer is visible, and the result
    appears ``depth`` cycles later. Streams are extrapolated past their end at
    the same rate, which charges the pipeline fill to the tail of the tile.
    """
    g = design.graph
    inputs = {nd.name for nd in g.inputs}
    memo: dict = {}

    def visible(name, y):
        key = (name, y)
        if key in memo:
            return memo[key]
        if name in inputs:
            v = y // rate + 1
        else:
            edges = g.in_edges(name)
            if edges:
                fire = max(visible(e.producer, y + e.footprint.max_offset) for e in edges) + 1
            else:
                fire = y // k + 1
            v = fire + design.compute[name].depth
        memo[key] = v
        return v

    return visible


def estimate(design: Design, budget: Optional[DeviceBudget] = None, tile_extents=None,
             enforce_budget: bool = True) -> PerfEstimate:
    """Estimate one tile. ``tile_extents`` fills in an unbounded trailing extent."""
    budget = budget or DeviceBudget()
    g = design.graph
    if tile_extents is None:
        if None in g.extents:
            raise ValueError("tile_extents required for an unbounded tile")
        tile_extents = g.extents
    n = math.prod(concrete_extents(g, tile_extents))
    k = design.point.unroll_factor
    bw_read, bw_write = bandwidth(design, budget)
    rate = min(k, bw_read, bw_write)

    visible = _visibility(design, rate, k)
    cycles = visible(g.output.name, n - 1) + 1
    streaming = math.ceil(n / rate)
    own = {}
    for nd in g.compute_nodes:
        wait = max((math.ceil(max(e.footprint.max_offset, 0) / rate) for e in g.in_edges(nd.name)), default=0)
        own[nd.name] = wait + design.compute[nd.name].depth + 1

    if rate == k:
        stream_site, kind = g.output.name, COMPUTATION
    else:
        stream_site, kind = ("load" if bw_read <= bw_write else "store"), COMMUNICATION
    shares = {name: own[name] for name in own}
    shares[stream_site] = shares.get(stream_site, 0) + streaming
    shares["store"] = shares.get("store", 0) + 1
    kinds = {name: COMPUTATION for name in own}
    kinds.setdefault("load", COMMUNICATION)
    kinds.setdefault("store", COMMUNICATION)
    kinds[stream_site] = kind
    bottlenecks = tuple(sorted(
        (Bottleneck(site, lat, kinds[site]) for site, lat in shares.items()),
        key=lambda b: (-b.latency_share, b.site),
    ))

    res = resources(design, budget)
    if enforce_budget:
        check_budget(res, budget)
    in_bits = sum(dsl.type_bits(nd.elem_type) for nd in g.inputs)
    out_bits = dsl.type_bits(g.output.elem_type)
    return PerfEstimate(
        cycles=cycles,
        elems_per_cycle_root=Fraction(rate),
        dram_bits_per_cycle_used=rate * (in_bits + out_bits),
        bw_elems=bw_read,
        stream_length=n,
        bottlenecks=bottlenecks,
        **res,
    )


def classify_bottlenecks(est: PerfEstimate) -> list[Bottleneck]:
    """Bottlenecks by decreasing latency share, ties broken by site name."""
    return sorted(est.bottlenecks, key=lambda b: (-b.latency_share, b.site))
