import dataclasses

import numpy as np
import pytest

from stencil_dsa import dsl, sim
from stencil_dsa.design import DesignPoint, compile_design
from stencil_dsa.ir import EmptyRegion, Edge, valid_regions
from stencil_dsa.perf import estimate
from stencil_dsa.sim import (
    Deadlock, DivisionByZero, GuardExceeded, InputShapeError, naive_eval, random_inputs, simulate,
)

from corpus import program, random_extents, random_program

SUM9 = """kernel: sum9
input int: a(32, *)
local int: x(0, 0) = a(0, 0) + a(1, 0) + a(2, 0)
output int: y(0, 0) = x(0, 0) + x(0, 1) + x(0, 2)
"""


def design(p, k=1, mode="off", width=None):
    return compile_design(p, DesignPoint(k, p.iterate_factor, width or p.tile_width, mode))


def test_identity_cycles():
    p = program("identity")
    data = {"a": np.arange(64, dtype=np.int32).reshape(8, 8)}
    r = simulate(design(p), data)
    assert r.cycles == 66
    assert np.array_equal(r.outputs["b"], data["a"])
    assert r.store_throughput == 1.0


def test_blur_of_constant_is_constant():
    p = program("blur")
    data = {"image": np.full((8, 3000), 9.0, dtype=np.float32)}
    r = simulate(design(p, 16), data)
    out = r.outputs["blur_y"]
    assert out.shape == (6, 2998)
    assert np.all(out == 9.0)


def test_integer_ramp_sum():
    p = dsl.parse_source(SUM9)
    ramp = np.tile(np.arange(32, dtype=np.int32), (6, 1))
    r = simulate(design(p, 4, "ordp"), {"a": ramp})
    out = r.outputs["y"]
    x = np.arange(30)
    assert np.array_equal(out, np.tile(9 * x + 9, (4, 1)))


@pytest.mark.parametrize("seed", range(100))
def test_random_programs_match_naive(seed):
    p = random_program(seed)
    ext = random_extents(p, seed)
    n = int(np.prod(ext))
    inputs = random_inputs(p, ext, seed)
    try:
        ref = naive_eval(p, inputs)
    except EmptyRegion:
        pytest.skip("tile smaller than the stencil")
    for k, mode in ((1, "off"), (2, "ordp"), (4, "hsbr")):
        if n % k:
            continue
        d = design(p, k, mode)
        r = simulate(d, inputs)
        name = d.graph.output.name
        assert np.array_equal(r.outputs[name], ref[name])
        assert all(s.align_deficit == 0 for s in r.stats.values())
        est = estimate(d, tile_extents=ext)
        assert abs(est.cycles - r.cycles) <= 0.05 * r.cycles


def test_iterate_and_multi_input_programs():
    for name, ext in (("iter_avg", (16, 12)), ("heat3d", (8, 6, 5)), ("diamond", (12, 10))):
        p = program(name)
        inputs = random_inputs(p, ext, 1, low=1, high=9)
        ref = naive_eval(p, inputs)
        for k in (1, 2):
            d = design(p, k, "ordp")
            r = simulate(d, inputs)
            out = d.graph.output.name
            if np.issubdtype(ref[out].dtype, np.floating):
                np.testing.assert_allclose(r.outputs[out], ref[out], rtol=1e-5)
            else:
                assert np.array_equal(r.outputs[out], ref[out])


def test_throughput_saturates_at_the_bus():
    p = program("blur")
    data = random_inputs(p, (3000, 16), 0)
    r16 = simulate(design(p, 16), data)
    r32 = simulate(design(p, 32), data)
    assert r16.rate == r32.rate == 16
    assert abs(r32.store_throughput - r16.store_throughput) <= 0.01 * r16.store_throughput
    assert r32.cycles == r16.cycles


def test_simulation_is_deterministic():
    p = program("box3x3")
    data = random_inputs(p, (16, 9), 5)
    a = simulate(design(p, 2, "ordp"), data, trace=True)
    b = simulate(design(p, 2, "ordp"), data, trace=True)
    assert a.cycles == b.cycles and a.trace == b.trace
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.outputs["b"], b.outputs["b"])
    assert {row[1] for row in a.trace} == {"load", "t", "b", "store"}


def test_guard_exceeded():
    p = program("identity")
    with pytest.raises(GuardExceeded):
        simulate(design(p), random_inputs(p, (8, 8), 0), max_cycles=10)


def test_deadlock_on_a_cyclic_design(monkeypatch):
    p = program("diamond")
    d = design(p)
    graph = d.graph
    monkeypatch.setattr(sim, "valid_regions", lambda g, ext: valid_regions(graph, ext))
    # make u wait on w, which itself waits on u
    back = Edge("w", "u", d.graph.edges[-1].footprint)
    buf = dataclasses.replace(d.reuse.edges[-1], producer="w", consumer="u")
    d = dataclasses.replace(
        d,
        graph=dataclasses.replace(d.graph, edges=d.graph.edges + (back,)),
        reuse=dataclasses.replace(d.reuse, edges=d.reuse.edges + (buf,)),
    )
    with pytest.raises(Deadlock):
        simulate(d, random_inputs(p, (12, 6), 0))


def test_division_by_zero_is_positioned():
    p = dsl.parse_source("kernel: k\ninput int: a(6, *)\noutput int: b(0, 0) = a(0, 0) / a(1, 0)\n")
    data = {"a": np.ones((3, 6), dtype=np.int32)}
    data["a"][2, 4] = 0
    with pytest.raises(DivisionByZero) as exc:
        naive_eval(p, data)
    assert exc.value.position == (3, 2) and exc.value.stage == "b"
    with pytest.raises(DivisionByZero) as exc:
        simulate(design(p), data)
    assert exc.value.position == (3, 2)


def test_input_shape_errors():
    p = program("heat3d")
    d = design(p)
    good = random_inputs(p, (8, 6, 4), 0)
    with pytest.raises(InputShapeError):
        simulate(d, {"a": good["a"]})
    with pytest.raises(InputShapeError):
        simulate(d, {**good, "zz": good["a"]})
    with pytest.raises(InputShapeError):
        simulate(d, {"a": good["a"], "c": good["c"][:, :, :7]})
    with pytest.raises(InputShapeError):
        simulate(design(program("identity")), {"a": np.zeros((4, 9), dtype=np.int32)})


def test_integer_overflow_wraps():
    p = dsl.parse_source("kernel: k\ninput int: a(4)\noutput int: b(0) = a(0) * 65536 * 65536 + a(0)\n")
    data = {"a": np.array([1, 2, 3, 4], dtype=np.int32)}
    r = simulate(design(p), data)
    assert list(r.outputs["b"]) == [1, 2, 3, 4]
    assert np.array_equal(naive_eval(p, data)["b"], r.outputs["b"])
