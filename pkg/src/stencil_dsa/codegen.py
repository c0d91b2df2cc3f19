"""C code generation: a naive reference and a dataflow design with HLS pragmas.

Both outputs are plain C11. ``#pragma HLS`` lines are ignored by host
compilers, so the dataflow design can be compiled and executed against the
reference. Arrays are passed as flat buffers in linear stream order (first
dimension contiguous). When the last tile extent is unbounded it becomes the
``extent`` argument.

The dataflow function runs in iterations of ``k`` stream positions. Every
iteration loads ``k`` elements per input, lets each stage fire its ``k`` PEs
on outputs ``t*k - lag + j`` (``lag`` being the stage's stream lag) and stores
``k`` outputs. Each producer/consumer edge has a ring buffer of exactly the
planned size. Every compute-plan node read at several shifts keeps a delay
line. It is computed once, at its newest shift.
"""
from __future__ import annotations

import re
from fractions import Fraction
from typing import Optional

from . import arith, dsl
from .creuse import ComputePlan, Operand
from .design import Design
from .errors import StencilError
from .ir import StageGraph, lower, strides, valid_regions
from .reuse import stream_lags

C_TYPES = {"int32": "int32_t", "int64": "int64_t", "float32": "float", "float64": "double"}
_BIG = 1 << 20  # stand-in extent used to derive bounds that depend on a runtime extent


class PlanMismatch(StencilError):
    pass


def _ident(name: str) -> str:
    return "a_" + re.sub(r"[^A-Za-z0-9_]", "_", name.replace(".", "_it"))


def c_literal(value: Fraction, elem_type: str) -> str:
    """Exact C spelling of a constant as the element type rounds it."""
    v = arith.constant(value, elem_type)
    if elem_type == "float32":
        return f"{float(v).hex()}f"
    if elem_type == "float64":
        return float(v).hex()
    iv = int(v)
    bits = dsl.type_bits(elem_type)
    if iv == -(1 << (bits - 1)):
        text = f"(-{(1 << (bits - 1)) - 1} - 1)"
    elif iv < 0:
        text = f"({iv})"
    else:
        text = str(iv)
    return f"(({C_TYPES[elem_type]}){text})" if bits == 64 else text


_HELPERS = """\
#define WRAP(x, m) ((((x) % (m)) + (m)) % (m))

static inline int32_t sdiv_i32(int32_t a, int32_t b)
{
    if (b == 0)
        return 0;
    if (b == -1)
        return (int32_t)(0u - (uint32_t)a);
    return a / b;
}

static inline int64_t sdiv_i64(int64_t a, int64_t b)
{
    if (b == 0)
        return 0;
    if (b == -1)
        return (int64_t)(0ull - (uint64_t)a);
    return a / b;
}
"""


def _binop(op: str, a: str, b: str, elem_type: str) -> str:
    if op == "/" and not dsl.is_float_type(elem_type):
        return f"sdiv_i{dsl.type_bits(elem_type)}({a}, {b})"
    if not dsl.is_float_type(elem_type):
        # compute in the unsigned type so wraparound is defined without -fwrapv
        ut = "uint32_t" if dsl.type_bits(elem_type) == 32 else "uint64_t"
        return f"({C_TYPES[elem_type]})(({ut}){a} {op} ({ut}){b})"
    return f"({a} {op} {b})"


def _neg(a: str, elem_type: str) -> str:
    if not dsl.is_float_type(elem_type):
        ut = "uint32_t" if dsl.type_bits(elem_type) == 32 else "uint64_t"
        return f"({C_TYPES[elem_type]})(0u - ({ut}){a})"
    return f"(-{a})"


def _expr_c(expr, tap_c, elem_type) -> str:
    if isinstance(expr, dsl.Num):
        return c_literal(expr.value, elem_type)
    if isinstance(expr, dsl.Tap):
        return tap_c(expr)
    if isinstance(expr, dsl.Neg):
        return _neg(_expr_c(expr.operand, tap_c, elem_type), elem_type)
    return _binop(expr.op, _expr_c(expr.left, tap_c, elem_type), _expr_c(expr.right, tap_c, elem_type),
                  elem_type)


def _signature(program: dsl.StencilProgram, graph: StageGraph, name: str) -> str:
    args = [f"const {C_TYPES[n.elem_type]} *{_ident(n.name)}" for n in graph.inputs]
    args.append(f"{C_TYPES[graph.output.elem_type]} *{_ident(graph.output.name)}")
    if graph.extents[-1] is None:
        args.append("long extent")
    return f"int {name}({', '.join(args)})"


def _extent_c(extents, d) -> str:
    return "extent" if extents[d] is None else str(extents[d])


def _header(program, kind) -> list[str]:
    return [
        f"/* {kind} for stencil kernel '{program.kernel_name}'. Generated; do not edit. */",
        "#include <stdint.h>",
        "#include <stdlib.h>",
        "",
    ]


def _stream_len_c(extents) -> str:
    return " * ".join(f"(long){_extent_c(extents, d)}" for d in range(len(extents)))


def emit_reference(program: dsl.StencilProgram, func_name: Optional[str] = None) -> str:
    """Nested loops over each stage's valid region, stages in order (iterate copies unrolled)."""
    graph = lower(program)
    ext = graph.extents
    rank = len(ext)
    concrete = tuple(_BIG if e is None else e for e in ext)
    regions = valid_regions(graph, concrete)
    st = strides(ext)
    name = func_name or f"{program.kernel_name}_ref"
    out = _header(program, "Reference evaluation")
    out.append(_HELPERS)
    out.append(_signature(program, graph, name))
    out.append("{")
    out.append(f"    const long n = {_stream_len_c(ext)};")
    locals_ = [nd for nd in graph.compute_nodes if nd is not graph.output]
    for nd in locals_:
        t = C_TYPES[nd.elem_type]
        out.append(f"    {t} *{_ident(nd.name)} = calloc((size_t)n, sizeof({t}));")
    if locals_:
        cond = " || ".join(f"!{_ident(nd.name)}" for nd in locals_)
        out.append(f"    if ({cond}) {{")
        for nd in locals_:
            out.append(f"        free({_ident(nd.name)});")
        out.append("        return -1;")
        out.append("    }")
    out.append("    (void)n;")
    for inp in graph.inputs:
        if not any(e.producer == inp.name for e in graph.edges):
            out.append(f"    (void){_ident(inp.name)};  /* never read */")
    for nd in graph.compute_nodes:
        reg = regions[nd.name]
        out.append(f"    /* {nd.name} */")
        indent = "    "
        for d in reversed(range(rank)):
            lo = reg.lo[d]
            if ext[d] is None:
                hi = f"extent - {concrete[d] - reg.hi[d]}"
            else:
                hi = str(reg.hi[d])
            out.append(f"{indent}for (long i{d} = {lo}; i{d} < {hi}; ++i{d}) {{")
            indent += "    "
        base = " + ".join(f"i{d}" if st[d] == 1 else f"{st[d]}L * i{d}" for d in range(rank))
        out.append(f"{indent}const long p = {base};")

        def tap_c(tap, nd=nd):
            lin = sum(o * s for o, s in zip(tap.offsets, st))
            src = graph.node(tap.array)
            ref = f"{_ident(tap.array)}[p + ({lin})]" if lin else f"{_ident(tap.array)}[p]"
            if src.elem_type != nd.elem_type:
                ref = f"(({C_TYPES[nd.elem_type]}){ref})"
            return ref

        out.append(f"{indent}{_ident(nd.name)}[p] = {_expr_c(nd.expr, tap_c, nd.elem_type)};")
        for d in range(rank):
            indent = indent[:-4]
            out.append(f"{indent}}}")
    for nd in locals_:
        out.append(f"    free({_ident(nd.name)});")
    out.append("    return 0;")
    out.append("}")
    return "\n".join(out) + "\n"


def _node_frames(plan: ComputePlan) -> list[Optional[tuple[int, int]]]:
    """(newest, oldest) absolute shift at which each node is read."""
    refs: list[list[int]] = [[] for _ in plan.nodes]
    if plan.root is None:
        return [None] * len(plan.nodes)
    refs[plan.root.node].append(plan.root.shift)
    frames: list = [None] * len(plan.nodes)
    for idx in range(len(plan.nodes) - 1, -1, -1):
        if not refs[idx]:
            continue
        hi, lo = max(refs[idx]), min(refs[idx])
        frames[idx] = (hi, lo)
        node = plan.nodes[idx]
        if node.op in ("input", "const"):
            continue
        for a in node.args:
            refs[a.node].append(hi + a.shift)
    return frames


def _check_design(design: Design):
    k = design.point.unroll_factor
    if design.reuse.unroll_factor != k:
        raise PlanMismatch(f"reuse plan built for k={design.reuse.unroll_factor}, design point has k={k}")
    if design.graph.unroll_factor != k:
        raise PlanMismatch(f"stage graph built for k={design.graph.unroll_factor}, design point has k={k}")
    names = {n.name for n in design.graph.compute_nodes}
    if set(design.compute) != names:
        raise PlanMismatch("compute plans do not match the stage graph")
    edges = {(e.producer, e.consumer) for e in design.graph.edges}
    if {(e.producer, e.consumer) for e in design.reuse.edges} != edges:
        raise PlanMismatch("reuse plan edges do not match the stage graph")


def emit_dataflow(design: Design, func_name: Optional[str] = None) -> str:
    """Load, per-stage reuse buffers and PE bodies, and store, as a streaming loop."""
    _check_design(design)
    program, graph, k = design.program, design.graph, design.point.unroll_factor
    ext = graph.extents
    lags = stream_lags(graph)
    lag_out = lags[graph.output.name]
    name = func_name or f"{program.kernel_name}_dsa"
    # every stage runs once per iteration here, so there is no pipeline latency
    # to absorb: a ring holds the window plus the latency-free lag difference
    offs = {(e.producer, e.consumer): e.footprint.max_offset for e in graph.edges}
    caps = {(e.producer, e.consumer):
            e.total_elems + lags[e.consumer] - lags[e.producer] - offs[e.producer, e.consumer]
            for e in design.reuse.edges}
    fifo = {key: f"fifo_{_ident(key[0])[2:]}__{_ident(key[1])[2:]}" for key in caps}

    out = _header(program, "Dataflow design")
    out.append(f"#define K {k}")
    out.append("")
    out.append(_HELPERS)

    # one function per compute stage
    for nd in graph.compute_nodes:
        out.extend(_emit_stage(design, nd, lags[nd.name], caps, fifo))
        out.append("")

    out.append(_signature(program, graph, name))
    out.append("{")
    out.append("#pragma HLS DATAFLOW")
    out.append(f"    const long n = {_stream_len_c(ext)};")
    out.append("    if (n % K != 0)")
    out.append("        return -1;")
    for key, cap in caps.items():
        t = C_TYPES[graph.node(key[0]).elem_type]
        out.append(f"    {t} {fifo[key]}[{cap}] = {{0}};  /* reuse buffer {key[0]} -> {key[1]} */")
        out.append(f"#pragma HLS ARRAY_PARTITION variable={fifo[key]} cyclic factor=K")
    for nd in graph.compute_nodes:
        for st_line in _stage_state_decls(design, nd):
            out.append("    " + st_line)
    out.append(f"    const long iterations = (n + {lag_out} + K - 1) / K;")
    out.append("    for (long t = 0; t < iterations; ++t) {")
    out.append("#pragma HLS PIPELINE II=1")
    out.append("        const long base = t * K;")
    out.append("        /* load: one bus-wide packed read per input */")
    for inp in graph.inputs:
        consumers = [key for key in caps if key[0] == inp.name]
        if not consumers:
            out.append(f"        (void){_ident(inp.name)};  /* never read */")
            continue
        out.append("        for (int j = 0; j < K; ++j) {")
        out.append("#pragma HLS UNROLL")
        out.append("            const long p = base + j;")
        zero = c_literal(Fraction(0), inp.elem_type)
        out.append(f"            const {C_TYPES[inp.elem_type]} v = p < n ? {_ident(inp.name)}[p] : {zero};")
        for key in consumers:
            out.append(f"            {fifo[key]}[p % {caps[key]}] = v;")
        out.append("        }")
    for nd in graph.compute_nodes:
        args = ["base", "n"] + [fifo[key] for key in caps if key[1] == nd.name or key[0] == nd.name]
        args += [s for s in _stage_state_args(design, nd)]
        if nd is graph.output:
            args.append(_ident(nd.name))
        out.append(f"        stage_{_ident(nd.name)[2:]}({', '.join(args)});")
    out.append("    }")
    out.append("    return 0;")
    out.append("}")
    return "\n".join(out) + "\n"


def _delay_nodes(plan: ComputePlan):
    frames = _node_frames(plan)
    return {i: f for i, f in enumerate(frames)
            if f is not None and plan.nodes[i].op not in ("input", "const") and f[0] != f[1]}


def _stage_state_decls(design: Design, nd) -> list[str]:
    plan = design.compute[nd.name]
    t = C_TYPES[nd.elem_type]
    k = design.point.unroll_factor
    out = []
    for i, (hi, lo) in sorted(_delay_nodes(plan).items()):
        out.append(f"{t} dl_{_ident(nd.name)[2:]}_{i}[{hi - lo + k}] = {{0}};  /* delay line */")
    return out


def _stage_state_args(design: Design, nd) -> list[str]:
    plan = design.compute[nd.name]
    return [f"dl_{_ident(nd.name)[2:]}_{i}" for i in sorted(_delay_nodes(plan))]


def _emit_stage(design: Design, nd, lag: int, caps, fifo) -> list[str]:
    graph, k = design.graph, design.point.unroll_factor
    plan = design.compute[nd.name]
    t = C_TYPES[nd.elem_type]
    sname = _ident(nd.name)[2:]
    in_keys = [key for key in caps if key[1] == nd.name]
    out_keys = [key for key in caps if key[0] == nd.name]
    params = ["long base", "long n"]
    for key in caps:
        if key in in_keys or key in out_keys:
            params.append(f"{C_TYPES[graph.node(key[0]).elem_type]} *{fifo[key]}")
    delays = _delay_nodes(plan)
    for i in sorted(delays):
        params.append(f"{t} *dl_{sname}_{i}")
    if nd is graph.output:
        params.append(f"{t} *{_ident(nd.name)}")
    lines = [f"static void stage_{sname}({', '.join(params)})", "{"]
    lines.append("#pragma HLS INLINE off")
    for key in in_keys:
        lines.append(f"#pragma HLS ARRAY_PARTITION variable={fifo[key]} cyclic factor=K")
    lines.append(f"    const long q0 = base - {lag};  /* output position of PE 0 */")
    lines.append("    (void)n;")
    frames = _node_frames(plan)
    zero = c_literal(Fraction(0), nd.elem_type)

    def read(a, j) -> str:
        """C expression for operand ``a`` as lane ``j`` sees it."""
        node = plan.nodes[a.node]
        hi, _ = frames[a.node]
        if node.op == "input":
            key = (node.array, nd.name)
            src = graph.node(node.array)
            pos = f"q0 + {j + a.shift}"
            ref = f"(({pos}) < 0 ? {c_literal(Fraction(0), src.elem_type)} : {fifo[key]}[({pos}) % {caps[key]}])"
            if src.elem_type != nd.elem_type:
                ref = f"(({t}){ref})"
            v = ref
        elif node.op == "const":
            v = c_literal(node.weight, nd.elem_type)
        elif a.node in delays:
            hi_d, lo_d = delays[a.node]
            size = hi_d - lo_d + k
            v = f"dl_{sname}_{a.node}[WRAP(q0 + {j + a.shift - lo_d}, {size})]"
        else:
            v = f"v{a.node}_{j}"
        if a.sign < 0:
            v = _neg(v, nd.elem_type)
        return v

    for j in range(k):
        lines.append(f"    /* PE {j} */")
        lines.append("    {")
        if plan.root is None:
            result = zero
        else:
            for i, node in enumerate(plan.nodes):
                if frames[i] is None or node.op in ("input", "const"):
                    continue
                hi, lo = frames[i]
                # the node's own position is its newest read shift
                shifted = [_shift_operand(a, hi) for a in node.args]
                if node.op == "scale":
                    expr = _scale_c(read(shifted[0], j), node.weight, nd.elem_type)
                else:
                    sym = {"add": "+", "mul": "*", "div": "/"}[node.op]
                    expr = _binop(sym, read(shifted[0], j), read(shifted[1], j), nd.elem_type)
                if i in delays:
                    size = hi - lo + k
                    lines.append(
                        f"        dl_{sname}_{i}[WRAP(q0 + {j + hi - lo}, {size})] = {expr};"
                    )
                else:
                    lines.append(f"        const {t} v{i}_{j} = {expr};")
            result = read(plan.root, j)
        lines.append(f"        const long q = q0 + {j};")
        lines.append(f"        const {t} r = {result};")
        lines.append("        if (q >= 0) {")
        for key in out_keys:
            lines.append(f"            {fifo[key]}[q % {caps[key]}] = r;")
        if nd is graph.output:
            lines.append("            if (q < n)")
            lines.append(f"                {_ident(nd.name)}[q] = r;")
        lines.append("        }")
        if not out_keys and nd is not graph.output:
            lines.append("        (void)r;")
        lines.append("    }")
    lines.append("}")
    return lines


def _shift_operand(a, frame):
    return Operand(a.node, a.shift + frame, a.sign)


def _scale_c(v: str, weight: Fraction, elem_type: str) -> str:
    if weight.denominator == 1:
        return _binop("*", v, c_literal(weight, elem_type), elem_type)
    if weight.numerator == 1:
        return _binop("/", v, c_literal(Fraction(weight.denominator), elem_type), elem_type)
    return _binop("*", v, c_literal(weight, elem_type), elem_type)


def pragma_line_count(source: str) -> int:
    return sum(1 for line in source.splitlines() if line.lstrip().startswith("#pragma"))


def buffer_line_count(source: str) -> int:
    """Non-pragma lines that declare, fill or read a reuse buffer or delay line."""
    return sum(1 for line in source.splitlines()
               if not line.lstrip().startswith("#pragma") and ("fifo_" in line or "dl_" in line))


def emit_harness(design: Design, tile_extents, ref_name: str, dsa_name: str) -> str:
    """A ``main`` that reads raw inputs from stdin and writes both functions' outputs to stdout.

    Inputs are read back to back in declaration order; the output is the
    reference result followed by the dataflow result, each a full tile.
    """
    g = design.graph
    n = 1
    for e in tile_extents:
        n *= e
    ot = C_TYPES[g.output.elem_type]
    params = [f"const {C_TYPES[nd.elem_type]} *" for nd in g.inputs] + [f"{ot} *"]
    if g.extents[-1] is None:
        params.append("long")
    extra = f", {tile_extents[-1]}L" if g.extents[-1] is None else ""
    args = "".join(f"in{i}, " for i in range(len(g.inputs)))
    lines = [
        "#include <stdio.h>",
        "#include <stdint.h>",
        "#include <stdlib.h>",
        "",
        f"int {ref_name}({', '.join(params)});",
        f"int {dsa_name}({', '.join(params)});",
        "",
        "int main(void)",
        "{",
    ]
    for i, nd in enumerate(g.inputs):
        t = C_TYPES[nd.elem_type]
        lines.append(f"    {t} *in{i} = malloc(sizeof({t}) * {n});")
        lines.append(f"    if (!in{i} || fread(in{i}, sizeof({t}), {n}, stdin) != {n})")
        lines.append("        return 3;")
    lines += [
        f"    {ot} *ref = calloc({n}, sizeof({ot}));",
        f"    {ot} *dsa = calloc({n}, sizeof({ot}));",
        "    if (!ref || !dsa)",
        "        return 3;",
        f"    if ({ref_name}({args}ref{extra}) != 0)",
        "        return 4;",
        f"    if ({dsa_name}({args}dsa{extra}) != 0)",
        "        return 5;",
        f"    fwrite(ref, sizeof({ot}), {n}, stdout);",
        f"    fwrite(dsa, sizeof({ot}), {n}, stdout);",
        "    return 0;",
        "}",
    ]
    return "\n".join(lines) + "\n"
