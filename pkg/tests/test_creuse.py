from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from stencil_dsa import creuse, dsl, ir
from stencil_dsa.creuse import (
    ComputePlan, LinearStencil, Node, NotLinear, Operand, TooManyTaps, InfeasibleBudget,
    extract_linear, hsbr, naive_plan, ordp, plan_stage, verify_plan,
)

from corpus import NAMED, program, random_program
from oracles import min_ops


def line(weights, array="a"):
    """A 1-D stencil with ``weights[i]`` at offset ``i`` (zeros skipped)."""
    if isinstance(weights, dict):
        items = sorted(weights.items())
    else:
        items = [(o, w) for o, w in enumerate(weights) if w]
    return LinearStencil(tuple((array, (o,), Fraction(w)) for o, w in items), (1,))


def stage(src_expr, elem="int", shape="16, *"):
    origin = ", ".join("0" for _ in shape.split(","))
    p = dsl.parse_source(f"kernel: k\ninput {elem}: a({shape})\noutput {elem}: b({origin}) = {src_expr}\n")
    return p.output, ir.strides(p.tile_shape)


def test_box5_needs_three_adds():
    plan = ordp(line([1, 1, 1, 1, 1]))
    assert (plan.mults, plan.adds) == (0, 3)
    assert naive_plan(line([1, 1, 1, 1, 1])).adds == 4
    assert plan.delay_elems == 1
    assert verify_plan(plan, line([1, 1, 1, 1, 1])) is None
    assert plan.optimal


def test_12321_needs_two_mults():
    s = line([1, 2, 3, 2, 1])
    plan = ordp(s)
    assert plan.mults == 2
    assert naive_plan(s).mults == 3
    assert verify_plan(plan, s) is None


@pytest.mark.parametrize("weights", [
    [1], [2], [1, 1], [1, -1], [2, 2], [1, 2, 1], [1, 1, 1, 1], [1, 0, 1, 1, 0, 1],
    [-2, 1, 1, -2], [1, 2, 2, 1], [2, -1, 0, 1, -2],
])
def test_ordp_matches_brute_force(weights):
    s = line(weights)
    plan = ordp(s)
    assert plan.ops == min_ops({o: w for o, w in enumerate(weights) if w})
    assert verify_plan(plan, s) is None


def test_extract_linear_on_blur():
    p = program("blur")
    s = extract_linear(p.stages[1], ir.strides(p.tile_shape))
    assert s.lin_weights() == {("blur_x", 0): Fraction(1, 3), ("blur_x", 3000): Fraction(1, 3),
                               ("blur_x", 6000): Fraction(1, 3)}


@pytest.mark.parametrize("expr,reason", [
    ("a(0, 0) * a(1, 0)", "product of taps"),
    ("a(0, 0) / (a(1, 0) + 1)", "division by a tap expression"),
    ("a(0, 0) / 2", "integer division truncates"),
    ("a(0, 0) + 1", "constant term"),
])
def test_not_linear(expr, reason):
    decl, strides = stage(expr)
    res = extract_linear(decl, strides)
    assert isinstance(res, NotLinear) and res.reason == reason
    assert not res
    # reuse modes fall back to the direct transcription
    assert plan_stage(decl, strides, "ordp").nodes == creuse.expression_plan(decl.expr, strides).nodes


def test_float_division_by_constant_is_linear():
    decl, strides = stage("(a(0, 0) + a(1, 0)) / 4", elem="float")
    s = extract_linear(decl, strides)
    assert s.lin_weights() == {("a", 0): Fraction(1, 4), ("a", 1): Fraction(1, 4)}


def test_too_many_taps_for_ordp():
    s = line([1] * 11)
    with pytest.raises(TooManyTaps):
        ordp(s)
    plan = hsbr(s)
    assert verify_plan(plan, s) is None
    assert plan.adds < 10
    decl, strides = stage(" + ".join(f"a({i}, 0)" for i in range(11)))
    with pytest.raises(TooManyTaps):
        plan_stage(decl, strides, "ordp")
    assert plan_stage(decl, strides, "auto").mode == "hsbr"


def test_storage_budget():
    s = line([1, 1, 1, 1, 1])
    assert ordp(s, storage_budget=0).adds == 4
    assert ordp(s, storage_budget=1).adds == 3
    with pytest.raises(InfeasibleBudget):
        ordp(s, storage_budget=-1)
    with pytest.raises(InfeasibleBudget):
        hsbr(s, storage_budget=-1)
    assert hsbr(s, storage_budget=0).delay_elems == 0


def test_hsbr_is_deterministic_per_seed():
    s = line([1, 2, 1, 1, 2, 1, -1, 1, 2, 1, 1, 2])
    assert hsbr(s, seed=3) == hsbr(s, seed=3)


def test_verify_plan_reports_a_counterexample():
    s = line([1, 1, 1])
    plan = ordp(s)
    # corrupt: flip the sign of the root
    bad = ComputePlan(plan.nodes, Operand(plan.root.node, plan.root.shift, -plan.root.sign), "ordp")
    report = verify_plan(bad, s)
    assert report is not None
    assert report.array == "a" and report.offset == (0,)
    assert (report.expected, report.got) == (1, -1)
    assert "expected 1, got -1" in str(report)
    # corrupt: drop a term by re-rooting at an inner add
    inner = next(i for i, n in enumerate(plan.nodes) if n.op == "add")
    if inner != plan.root.node:
        assert verify_plan(ComputePlan(plan.nodes, Operand(inner), "ordp"), s) is not None


def test_verify_plan_flags_nonlinear_plans():
    nodes = (Node("input", array="a"), Node("mul", (Operand(0), Operand(0, 1))))
    report = verify_plan(ComputePlan(nodes, Operand(1)), line([1, 1]))
    assert report.array == "<nonlinear>"


def _linear_stages():
    programs = list(NAMED.items()) + [(f"rnd{i}", None) for i in range(60)]
    for name, src in programs:
        p = dsl.parse_source(src) if src else random_program(int(name[3:]))
        strides = ir.strides(p.tile_shape)
        for s in p.stages:
            lin = extract_linear(s, strides)
            if lin and lin.taps:
                yield f"{name}:{s.name}", lin


LINEAR_STAGES = list(_linear_stages())


@pytest.mark.parametrize("label,stencil", LINEAR_STAGES, ids=[label for label, _ in LINEAR_STAGES])
def test_corpus_plans_verify_and_order(label, stencil):
    naive = naive_plan(stencil)
    h = hsbr(stencil)
    assert verify_plan(h, stencil) is None
    assert h.ops <= naive.ops
    if len(stencil.taps) <= creuse.ORDP_MAX_TAPS:
        o = ordp(stencil)
        assert verify_plan(o, stencil) is None
        if o.optimal:
            assert h.ops >= o.ops


@settings(max_examples=150, deadline=None)
@given(st.dictionaries(st.integers(-4, 4), st.integers(-3, 3).filter(bool), min_size=1, max_size=7))
def test_random_kernels_verify(weights):
    s = line(weights)
    o, h, n = ordp(s), hsbr(s), naive_plan(s)
    assert verify_plan(o, s) is None and verify_plan(h, s) is None
    assert o.ops <= h.ops <= n.ops


def test_plan_json_round_trips_structure():
    plan = ordp(line([1, 2, 3, 2, 1]))
    data = plan.to_json()
    assert data["mults_per_output"] == 2
    assert len(data["nodes"]) == len(plan.nodes)
    assert data["root"][0] == plan.root.node
