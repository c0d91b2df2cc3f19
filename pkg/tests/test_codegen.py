import dataclasses
from fractions import Fraction

import numpy as np
import pytest

from stencil_dsa import dsl
from stencil_dsa.codegen import (
    PlanMismatch, buffer_line_count, c_literal, emit_dataflow, emit_reference, pragma_line_count,
)
from stencil_dsa.design import DesignPoint, compile_design
from stencil_dsa.reuse import plan_reuse

import cbuild
from corpus import program, random_extents, random_program

needs_cc = pytest.mark.skipif(cbuild.CC is None, reason="no C compiler")

CORPUS_TILES = {
    "blur": (3000, 12), "int_blur": (3000, 12), "identity": (8, 8), "box5": (64, 6), "w12321": (32, 5),
    "box3x3": (16, 9), "jacobi": (32, 7), "heat3d": (8, 6, 5), "iter_avg": (16, 12), "diamond": (12, 10),
}


def design(p, k=1, mode="off"):
    return compile_design(p, DesignPoint(k, p.iterate_factor, p.tile_width, mode))


@needs_cc
@pytest.mark.parametrize("name", sorted(CORPUS_TILES))
@pytest.mark.parametrize("k,mode", [(1, "off"), (2, "ordp"), (4, "hsbr")])
def test_generated_c_matches_reference(name, k, mode, tmp_path):
    ext = CORPUS_TILES[name]
    if int(np.prod(ext)) % k:
        pytest.skip("unroll factor does not divide the tile")
    d = design(program(name), k, mode)
    ref, dsa, naive = cbuild.run(d, ext, tmp_path, seed=k)
    assert cbuild.same(ref, naive)
    assert cbuild.same(dsa, naive, reassociated=mode != "off")


@needs_cc
@pytest.mark.parametrize("seed", range(0, 40, 3))
def test_generated_c_on_random_programs(seed, tmp_path):
    p = random_program(seed)
    ext = random_extents(p, seed)
    k = 2 if int(np.prod(ext)) % 2 == 0 else 1
    d = design(p, k, "ordp")
    ref, dsa, naive = cbuild.run(d, ext, tmp_path, seed=seed)
    assert np.array_equal(ref, naive) and np.array_equal(dsa, naive)


@needs_cc
def test_integer_edge_cases(tmp_path):
    p = dsl.parse_source(
        "kernel: edge\ninput int: a(8, *)\n"
        "output int: b(0, 0) = a(0, 0) * 65536 * 65536 + a(1, 0) / (a(0, 1) - 2) - a(0, 0) / -1\n")
    data = {"a": np.array([[-2**31, -7, 7, 3, 0, 1, 2, 5]] * 4, dtype=np.int32)}
    # keep the divisor row away from 2
    data["a"][1:] = 3
    ref, dsa, naive = cbuild.run(design(p, 2), (8, 4), tmp_path, inputs=data)
    assert np.array_equal(ref, naive) and np.array_equal(dsa, naive)


def test_blur_dataflow_has_sixteen_pes_and_dense_pragmas():
    d = design(program("blur"), 16)
    src = emit_dataflow(d)
    for stage in ("blur_x", "blur_y"):
        assert f"stage_{stage}" in src
    assert all(f"/* PE {j} */" in src for j in range(16))
    assert "/* PE 16 */" not in src
    assert src.count("/* PE ") == 32
    # the DSL source is 6 lines
    assert pragma_line_count(src) + buffer_line_count(src) >= 10 * 6
    for pragma in ("HLS DATAFLOW", "HLS PIPELINE II=1", "HLS UNROLL", "HLS ARRAY_PARTITION"):
        assert pragma in src


def test_generation_is_deterministic():
    a = emit_dataflow(design(program("diamond"), 2, "ordp"))
    b = emit_dataflow(design(program("diamond"), 2, "ordp"))
    assert a == b
    assert emit_reference(program("heat3d")) == emit_reference(program("heat3d"))


def test_reference_signature():
    src = emit_reference(program("blur"))
    assert "int blur_ref(const float *a_image, float *a_blur_y, long extent)" in src.replace("\n", " ")
    assert "long extent" not in emit_reference(dsl.parse_source(
        "kernel: k\ninput int: a(8)\noutput int: b(0) = a(0)\n"))


def test_iterate_copies_get_c_names():
    src = emit_dataflow(design(program("iter_avg"), 2))
    assert "stage_b_it1(" in src and "stage_b_it2(" in src
    # only the last copy is the kernel output
    assert "float *a_b_it2" in src and "*a_b_it1" not in src


def test_mismatched_plans_are_rejected():
    d = design(program("blur"), 16)
    with pytest.raises(PlanMismatch):
        emit_dataflow(dataclasses.replace(d, reuse=plan_reuse(d.graph, 8)))
    with pytest.raises(PlanMismatch):
        emit_dataflow(dataclasses.replace(d, compute={"blur_x": d.compute["blur_x"]}))


def test_identity_dataflow_is_a_copy():
    d = design(program("identity"))
    src = emit_dataflow(d)
    assert src.count("/* PE ") == 1


@pytest.mark.parametrize("value,elem,text", [
    (Fraction(3), "int32", "3"),
    (Fraction(-3), "int64", "((int64_t)(-3))"),
    (Fraction(1, 2), "float32", "0x1.0000000000000p-1f"),
    (Fraction(1, 4), "float64", "0x1.0000000000000p-2"),
])
def test_c_literals(value, elem, text):
    assert c_literal(value, elem) == text
