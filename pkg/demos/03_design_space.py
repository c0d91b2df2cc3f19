"""Search the blur design space with the bottleneck-guided explorer.

Run with ``python demos/03_design_space.py``. The grid spans the unroll
factor, iterate factor, tile width and computation-reuse mode. The explorer
starts from a few seed points, looks at the top bottleneck of each estimate
and only tries the moves that address it.
"""
from pathlib import Path

import stencil_dsa
from stencil_dsa import DesignPoint
from stencil_dsa.dse import enumerate_space, exhaustive, explore

program = stencil_dsa.load(Path(stencil_dsa.__file__).parent / "kernels" / "blur.soda")
space = enumerate_space(program)
print(f"grid {space.grid_size} points, {len(space.valid)} valid")
for point, reason in list(space.invalid.items())[:3]:
    print(f"  rejected {point.label()}: {reason}")

best, report = explore(program, space=space, seed=7)
for entry in report["log"]:
    acted = entry["acted_on"]
    why = f"after {acted['kind']} at {acted['site']}" if acted else "seed"
    label = DesignPoint(**entry["point"]).label()
    print(f"  eval {entry['eval']:>2} {label:<28} {entry['total_cycles']:>9} cycles  ({why})")

opt = exhaustive(space)
print(f"\nexplorer: {best.label()} at {report['best']['total_cycles']} cycles after {report['evaluations']} evaluations")
print(f"exhaustive optimum: {opt.point.label()} at {opt.total_cycles} cycles")
