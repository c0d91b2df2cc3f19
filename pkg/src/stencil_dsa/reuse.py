"""Reuse-buffer planning.

Each (producer, consumer) edge gets a window buffer over the linearized input
stream. With ``k`` lanes admitting ``k`` new elements per cycle, lane ``j``
computes output ``base + j``; the oldest element any lane still needs is
``span`` positions behind the newest tap of lane 0, so the buffer holds
``span`` retained elements plus the ``k`` elements arriving this cycle. The
retained part is cut into FIFO segments at every distinct tap position.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .dsl import type_bits
from .errors import StencilError
from .ir import StageGraph


class UnrollMismatch(StencilError):
    pass


@dataclass(frozen=True)
class EdgeBuffer:
    producer: str
    consumer: str
    elem_type: str
    span: int
    min_offset: int  # smallest linearized tap offset
    segments: tuple[int, ...]
    tap_points: tuple[tuple[int, tuple[int, ...], int], ...]  # (lane, offset, window index)
    unroll_factor: int
    align: int = 0  # extra delay so skewed producers line up

    @property
    def total_elems(self) -> int:
        return sum(self.segments) + self.unroll_factor

    @property
    def total_bits(self) -> int:
        return (self.total_elems + self.align) * type_bits(self.elem_type)

    def window_index(self, lane: int, offset_lin: int) -> int:
        return lane + offset_lin - self.min_offset


@dataclass(frozen=True)
class ReusePlan:
    unroll_factor: int
    edges: tuple[EdgeBuffer, ...]

    @property
    def total_elems(self) -> int:
        return sum(e.total_elems for e in self.edges)

    @property
    def total_bits(self) -> int:
        return buffer_bits(self)

    def edge(self, producer, consumer) -> EdgeBuffer:
        for e in self.edges:
            if e.producer == producer and e.consumer == consumer:
                return e
        raise KeyError((producer, consumer))

    def to_json(self) -> dict:
        return {
            "unroll_factor": self.unroll_factor,
            "total_elems": self.total_elems,
            "total_bits": self.total_bits,
            "edges": [
                {
                    "producer": e.producer,
                    "consumer": e.consumer,
                    "span": e.span,
                    "segments": list(e.segments),
                    "taps": sorted({idx for _, _, idx in e.tap_points}),
                    "align": e.align,
                    "total_elems": e.total_elems,
                    "total_bits": e.total_bits,
                }
                for e in self.edges
            ],
        }


def stream_lags(graph: StageGraph, latency: Optional[dict] = None, k: int = 1) -> dict[str, int]:
    """Stream index of output position 0 for every array.

    A stage can emit position q once element q + max_offset of every input has
    streamed in, so its lag is the worst producer lag plus that offset. With
    ``latency`` (pipeline cycles per stage) a producer's results also trail
    its inputs by ``latency * k`` elements.
    """
    latency = latency or {}
    lags = {n.name: 0 for n in graph.inputs}
    for node in graph.compute_nodes:
        lags[node.name] = max(
            (lags[e.producer] + latency.get(e.producer, 0) * k + e.footprint.max_offset
             for e in graph.in_edges(node.name)),
            default=0,
        )
    return lags


def plan_reuse(graph: StageGraph, k: int, stream_length: Optional[int] = None,
               latency: Optional[dict] = None) -> ReusePlan:
    """Window buffers for every edge.

    ``align`` delays a producer whose stream runs ahead of the consumer's
    slowest input; pass ``latency`` (stage name to pipeline cycles) so that
    compute latency is balanced too.
    """
    if k < 1:
        raise ValueError("unroll factor must be >= 1")
    if stream_length is not None and stream_length % k:
        raise UnrollMismatch(f"stream length {stream_length} is not a multiple of unroll factor {k}")
    latency = latency or {}
    lags = stream_lags(graph, latency, k)
    edges = []
    for edge in graph.edges:
        fp = edge.footprint
        st = fp.strides
        m0 = fp.min_offset
        positions = sorted({lin - m0 for lin in fp.lin_offsets})
        segments = tuple(b - a for a, b in zip(positions, positions[1:]))
        taps = tuple(
            (lane, off, lane + sum(o * s for o, s in zip(off, st)) - m0)
            for lane in range(k)
            for off in sorted(fp.offsets)
        )
        align = lags[edge.consumer] - lags[edge.producer] - latency.get(edge.producer, 0) * k - fp.max_offset
        edges.append(
            EdgeBuffer(
                edge.producer, edge.consumer, graph.node(edge.producer).elem_type,
                fp.span, m0, segments, taps, k, align,
            )
        )
    return ReusePlan(k, tuple(edges))


def buffer_bits(plan: ReusePlan) -> int:
    return sum(e.total_bits for e in plan.edges)
