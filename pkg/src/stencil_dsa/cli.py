"""Command-line driver: compile, simulate, explore and dump-ir.

Exit status is 0 on success, 1 for user errors (bad source, bad flags, bad
config, infeasible requests) and 2 when an internal invariant fails.
Artifacts are written with a ``.partial`` suffix and renamed only once the
whole command has succeeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__, dsl
from .arith import dtype_of
from .codegen import emit_dataflow, emit_reference
from .creuse import CREUSE_MODES
from .design import DesignPoint, compile_design
from .device import DeviceBudget
from .dse import default_workload, enumerate_space, explore
from .errors import InternalError, StencilError
from .ir import graph_to_json, valid_region
from .perf import estimate
from .sim import naive_eval, random_inputs, simulate

SCHEMA_VERSION = 1
DEFAULT_HEIGHT = 1024
DEFAULT_SIM_HEIGHT = 64


class UsageError(StencilError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _design_flags(p):
    g = p.add_argument_group("design point")
    g.add_argument("--unroll", type=int, metavar="K", help="PEs per stage (default: from the source)")
    g.add_argument("--iterate", type=int, metavar="Q", help="chained stage copies (default: from the source)")
    g.add_argument("--tile-width", type=int, metavar="W", help="tile width (default: from the source)")
    g.add_argument("--creuse", choices=CREUSE_MODES, default="off", help="computation reuse mode (default: off)")
    g.add_argument("--storage-budget", type=int, metavar="N",
                   help="cap on delay-line elements per stage for computation reuse")


def _common_flags(p):
    p.add_argument("source", help="stencil program (.soda)")
    p.add_argument("--device", metavar="JSON", help="device budget file (default: built-in)")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    p.add_argument("--height", type=int, metavar="H",
                   help="extent of an unbounded last dimension (default: 1024; 64 for simulate)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--config", metavar="JSON",
                   help="defaults for any long option, keyed by option name; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stencil-dsa", description="Stencil accelerator compiler toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    parser.commands = {}

    p = sub.add_parser("compile", help="plan buffers and arithmetic, estimate, emit C")
    _common_flags(p)
    _design_flags(p)
    p.add_argument("--emit", action="append", choices=("report", "c", "trace"), metavar="KIND",
                   help="artifacts to write: report, c, trace (repeatable; report is always written)")
    p.add_argument("--input", metavar="SRC", default="random:0",
                   help="tile data for --emit trace: data.json or random:SEED (default: random:0)")

    p = sub.add_parser("simulate", help="cycle-simulate a design on tile data")
    _common_flags(p)
    _design_flags(p)
    p.add_argument("--input", metavar="SRC", required=True, help="tile data: data.json or random:SEED")
    p.add_argument("--emit", action="append", choices=("report", "c", "trace"), metavar="KIND",
                   help="artifacts to write: report, c, trace (repeatable; report is always written)")
    p.add_argument("--max-cycles", type=int, metavar="N", help="abort the simulation after N cycles")

    p = sub.add_parser("explore", help="search the design space")
    _common_flags(p)
    p.add_argument("--dse", action="store_true", help="run the bottleneck-guided search")
    p.add_argument("--max-evals", type=int, metavar="N", help="evaluation budget (default: a quarter of the space)")
    p.add_argument("--partitions", type=int, default=3, metavar="P", help="search partitions (default: 3)")

    p = sub.add_parser("dump-ir", help="print the stage graph and plans as JSON")
    _common_flags(p)
    _design_flags(p)
    for name, action in sub.choices.items():
        parser.commands[name] = action
    return parser


class _Staging:
    """Collects artifacts as ``.partial`` files and renames them on commit."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.files: list[Path] = []

    def write(self, name: str, text: str):
        self.directory.mkdir(parents=True, exist_ok=True)
        final = self.directory / name
        partial = final.with_name(final.name + ".partial")
        partial.write_text(text)
        self.files.append(final)

    def commit(self):
        for final in self.files:
            os.replace(final.with_name(final.name + ".partial"), final)
        return self.files


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _load_program(path):
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    try:
        return dsl.parse_source(text), text
    except dsl.PositionedError as exc:
        exc.args = (f"{path}:{exc.args[0]}",)
        raise


def _budget(args) -> DeviceBudget:
    if not args.device:
        return DeviceBudget()
    try:
        return DeviceBudget.from_json(args.device)
    except FileNotFoundError:
        raise UsageError(f"{args.device}: no such file") from None


def _point(program, args) -> DesignPoint:
    try:
        return DesignPoint(
            args.unroll if args.unroll is not None else program.unroll_factor,
            args.iterate if args.iterate is not None else program.iterate_factor,
            args.tile_width if args.tile_width is not None else program.tile_width,
            args.creuse,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _extents(design, height):
    ext = design.graph.extents
    if height is not None and height < 1:
        raise UsageError("--height must be positive")
    return tuple(height if e is None else e for e in ext)


def _check_tile(design, ext):
    """The unroll factor must divide the tile stream and the valid region must be non-empty."""
    n = int(np.prod(ext))
    k = design.point.unroll_factor
    if n % k:
        raise UsageError(f"unroll factor {k} does not divide the tile stream length {n} (extents {list(ext)})")
    valid_region(design.graph, ext)


def _load_inputs(spec: str, design, height):
    if spec.startswith("random:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad input spec {spec!r}; expected random:SEED") from None
        return random_inputs(design.program, _extents(design, height), seed)
    try:
        with open(spec) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{spec}: no such file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{spec}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{spec}: expected an object mapping input names to nested arrays")
    out = {}
    for decl in design.program.inputs:
        if decl.name not in data:
            raise UsageError(f"{spec}: missing input {decl.name!r}")
        try:
            arr = np.array(data[decl.name], dtype=np.float64 if dsl.is_float_type(decl.elem_type) else np.int64)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{spec}: input {decl.name!r} is not a rectangular numeric array ({exc})") from None
        out[decl.name] = arr.astype(dtype_of(decl.elem_type))
    extra = set(data) - set(out)
    if extra:
        raise UsageError(f"{spec}: unknown inputs {', '.join(sorted(extra))}")
    return out


def _base_report(program, source, args) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": args.command,
        "kernel": program.kernel_name,
        "program_digest": "sha256:" + hashlib.sha256(source.encode()).hexdigest(),
    }


def _design_report(design, est, ext) -> dict:
    return {
        "design_point": design.point.to_json(),
        "tile_extents": list(ext),
        "plans": {
            **design.plan_summary(),
            "reuse": design.reuse.to_json(),
            "stages": {name: plan.to_json() for name, plan in design.compute.items()},
        },
        "estimate": est.to_json(),
    }


def _compile(args, budget):
    program, source = _load_program(args.source)
    design = compile_design(program, _point(program, args), args.storage_budget, args.seed, budget=budget)
    return program, source, design


def _sim_section(design, inputs, budget, args, staging, want_trace):
    kw = {"max_cycles": args.max_cycles} if getattr(args, "max_cycles", None) else {}
    result = simulate(design, inputs, budget, trace=want_trace, **kw)
    ref = naive_eval(design.program, inputs)[design.graph.output.name]
    got = result.outputs[design.graph.output.name]
    if np.issubdtype(ref.dtype, np.integer):
        match = bool(np.array_equal(ref, got))
        max_rel = 0.0 if match else None
    else:
        denom = np.maximum(np.abs(ref.astype(np.float64)), np.finfo(np.float32).tiny)
        rel = np.abs(got.astype(np.float64) - ref) / denom
        max_rel = float(rel.max()) if rel.size else 0.0
        match = max_rel <= 1e-5
    if want_trace:
        rows = ["cycle,stage,elems_in,elems_out"] + [",".join(map(str, r)) for r in result.trace]
        staging.write(f"{design.program.kernel_name}_trace.csv", "\n".join(rows) + "\n")
    section = result.to_json()
    section["matches_reference"] = match
    if max_rel is not None:
        section["max_rel_error"] = max_rel
    section["extents"] = list(np.shape(next(iter(inputs.values())))[::-1])
    return section, result


def cmd_compile(args, staging):
    budget = _budget(args)
    program, source, design = _compile(args, budget)
    ext = _extents(design, args.height or DEFAULT_HEIGHT)
    _check_tile(design, ext)
    est = estimate(design, budget, ext)
    report = _base_report(program, source, args)
    report.update(_design_report(design, est, ext))
    emit = set(args.emit or ["report"])
    if "c" in emit:
        staging.write(f"{program.kernel_name}_ref.c", emit_reference(design.program))
        staging.write(f"{program.kernel_name}_dsa.c", emit_dataflow(design))
    if "trace" in emit:
        sim_height = args.height or DEFAULT_SIM_HEIGHT
        inputs = _load_inputs(args.input, design, sim_height)
        report["simulation"], _ = _sim_section(design, inputs, budget, args, staging, True)
    staging.write("report.json", _dump(report))
    return 0


def cmd_simulate(args, staging):
    budget = _budget(args)
    program, source, design = _compile(args, budget)
    inputs = _load_inputs(args.input, design, args.height or DEFAULT_SIM_HEIGHT)
    ext = tuple(reversed(np.shape(next(iter(inputs.values())))))
    _check_tile(design, ext)
    est = estimate(design, budget, ext)
    report = _base_report(program, source, args)
    report.update(_design_report(design, est, ext))
    emit = set(args.emit or ["report"])
    section, result = _sim_section(design, inputs, budget, args, staging, "trace" in emit)
    report["simulation"] = section
    if "c" in emit:
        staging.write(f"{program.kernel_name}_ref.c", emit_reference(design.program))
        staging.write(f"{program.kernel_name}_dsa.c", emit_dataflow(design))
    out = result.outputs[design.graph.output.name]
    region = valid_region(design.graph, ext)
    staging.write(f"{program.kernel_name}_out.json", _dump({
        "array": design.graph.output.name,
        "origin": list(region.lo),
        "values": out.tolist(),
    }))
    staging.write("report.json", _dump(report))
    if not section["matches_reference"]:
        raise InternalError("simulated outputs differ from the reference evaluation")
    return 0


def cmd_explore(args, staging):
    budget = _budget(args)
    program, source = _load_program(args.source)
    workload = default_workload(program, args.height or DEFAULT_HEIGHT)
    space = enumerate_space(program, budget, workload=workload)
    report = _base_report(program, source, args)
    if args.dse:
        best, dse_report = explore(program, budget, partitions=args.partitions, max_evals=args.max_evals,
                                   seed=args.seed, space=space)
        report["dse"] = dse_report
        report["design_point"] = best.to_json()
    else:
        report["space"] = space.to_json()
        report["space"]["valid"] = [p.to_json() for p in space.valid]
    staging.write("report.json", _dump(report))
    return 0


def cmd_dump_ir(args, staging):
    budget = _budget(args)
    program, source, design = _compile(args, budget)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kernel": program.kernel_name,
        "source": dsl.format_program(design.program),
        "design_point": design.point.to_json(),
        "graph": graph_to_json(design.graph),
        "reuse": design.reuse.to_json(),
        "stages": {name: plan.to_json() for name, plan in design.compute.items()},
    }
    sys.stdout.write(_dump(doc))
    return 0


COMMANDS = {"compile": cmd_compile, "simulate": cmd_simulate, "explore": cmd_explore, "dump-ir": cmd_dump_ir}


def _config_defaults(path, sub) -> dict:
    """Validated option defaults from a JSON config file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected an object mapping option names to values")
    actions = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
    out = {}
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise UsageError(f"{path}: unknown option {key!r} for {sub.prog}")
        values = value if isinstance(action, argparse._AppendAction) else [value]
        if not isinstance(values, list):
            raise UsageError(f"{path}: option {key!r} expects a list")
        for v in values:
            if action.type is int and (not isinstance(v, int) or isinstance(v, bool)):
                raise UsageError(f"{path}: option {key!r} expects an integer")
            if action.type is None and action.nargs == 0 and not isinstance(v, bool):
                raise UsageError(f"{path}: option {key!r} expects true or false")
            if action.type is None and action.nargs != 0 and not isinstance(v, str):
                raise UsageError(f"{path}: option {key!r} expects a string")
            if action.choices is not None and v not in action.choices:
                raise UsageError(f"{path}: option {key!r} must be one of {', '.join(action.choices)}")
        out[dest] = value
    return out


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    staging = _Staging(Path(args.out))
    try:
        if args.config:
            parser.commands[args.command].set_defaults(**_config_defaults(args.config, parser.commands[args.command]))
            args = parser.parse_args(argv)
            staging = _Staging(Path(args.out))
        for name in ("partitions", "max_evals", "max_cycles", "storage_budget", "height"):
            value = getattr(args, name, None)
            if value is not None and value < (0 if name == "storage_budget" else 1):
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        code = COMMANDS[args.command](args, staging)
        staging.commit()
        return code
    except StencilError as exc:
        print(f"stencil-dsa: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"stencil-dsa: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is a toolkit bug
        if isinstance(exc, InternalError):
            print(f"stencil-dsa: internal error: {exc}", file=sys.stderr)
        else:
            print("stencil-dsa: internal error:", file=sys.stderr)
            traceback.print_exc(file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
