import json

import pytest

from stencil_dsa import dsl
from stencil_dsa.design import DesignPoint
from stencil_dsa.device import DeviceBudget
from stencil_dsa.dse import (
    EmptySpace, SearchState, Workload, bottleneck_step, default_workload, enumerate_space,
    exhaustive, explore, report_bytes,
)

from corpus import program

WIDE = "kernel: wide\ninput float: a(64, *)\noutput float: b(0, 0) = " + \
    " + ".join(f"a({i}, 0)" for i in range(11)) + "\n"


@pytest.fixture(scope="module")
def blur_space():
    return enumerate_space(program("blur"))


def test_blur_grid(blur_space):
    s = blur_space
    assert s.grid_size == 7 * 4 * 3 * 2 == 168
    assert s.tile_widths == (1500, 3000, 6000)
    assert s.workload == Workload(4 * 2998 + 2, (1024,), 1)
    # blur runs once, so only iterate factor 1 divides the workload
    assert {p.iterate_factor for p in s.valid} == {1}
    assert len(s.valid) == 42
    assert all("iterate" in r for p, r in s.invalid.items() if p.iterate_factor > 1)


def test_unroll_must_divide_the_tile_stream():
    s = enumerate_space(program("blur"), unroll_set=(3,), tile_widths=(3000, 1000),
                        workload=Workload(12000, (1000,), 1))
    assert [p.tile_width for p in s.valid] == [3000, 3000]
    assert all("divide" in r for r in s.invalid.values())


def test_ordp_is_remapped_for_wide_stencils():
    s = enumerate_space(dsl.parse_source(WIDE), unroll_set=(1, 2))
    assert s.creuse_modes == ("off", "hsbr")
    assert s.log == ["creuse=ordp remapped to hsbr: stage(s) b exceed 10 taps"]


def test_empty_space():
    with pytest.raises(EmptySpace):
        enumerate_space(program("blur"), DeviceBudget(dsp_count=1))


def test_budget_filters_points():
    s = enumerate_space(program("blur"), DeviceBudget(dsp_count=500))
    assert max(p.unroll_factor for p in s.valid) == 32
    assert any("over budget" in r for r in s.invalid.values())


def test_single_valid_point():
    s = enumerate_space(program("blur"), unroll_set=(16,), iterate_set=(1,), tile_widths=(3000,),
                        creuse_modes=("off",))
    best, report = explore(program("blur"), space=s)
    assert best == DesignPoint(16, 1, 3000, "off")
    assert report["evaluations"] == 1
    assert len(report["partitions"]) == 1


def test_guided_search_is_near_optimal_and_cheap(blur_space):
    _, report = explore(program("blur"), space=blur_space)
    opt = exhaustive(blur_space)
    assert report["best"]["total_cycles"] <= 1.05 * opt.total_cycles
    assert report["evaluations"] <= 0.25 * len(blur_space.valid)


def test_report_is_byte_identical_across_runs():
    a = report_bytes(explore(program("blur"), seed=7, partitions=4)[1])
    b = report_bytes(explore(program("blur"), seed=7, partitions=4)[1])
    assert a == b
    json.loads(a)


def test_partitions_start_from_distinct_seeds(blur_space):
    _, report = explore(program("blur"), space=blur_space, partitions=5, max_evals=40)
    seeds = [json.dumps(p["seed"], sort_keys=True) for p in report["partitions"]]
    assert len(seeds) == len(set(seeds)) == 5
    # the declared point seeds the first partition
    assert report["partitions"][0]["seed"] == DesignPoint(16, 1, 3000, "off").to_json()
    with pytest.raises(ValueError):
        explore(program("blur"), space=blur_space, partitions=0)


def test_max_evals_is_respected(blur_space):
    _, report = explore(program("blur"), space=blur_space, max_evals=4)
    assert report["evaluations"] == len(report["log"]) == 4
    assert [e["eval"] for e in report["log"]] == [1, 2, 3, 4]


def test_log_links_moves_to_bottlenecks(blur_space):
    _, report = explore(program("blur"), space=blur_space)
    seeds = [e for e in report["log"] if e["acted_on"] is None]
    assert len(seeds) == len(report["partitions"])
    for entry in report["log"]:
        assert entry["best_so_far"] <= entry["total_cycles"] or entry["acted_on"] is not None
        if entry["acted_on"] is not None:
            assert entry["acted_on"]["kind"] in ("computation", "communication")


def _state(space):
    return SearchState(space, [], {}, [], 100)


def test_bottleneck_step_on_compute_bound_point(blur_space):
    point = DesignPoint(16, 1, 3000, "off")
    est = blur_space.evaluate(point).estimate
    assert est.top.kind == "computation"
    props = bottleneck_step(_state(blur_space), point, est)
    assert props == [DesignPoint(32, 1, 3000, "off"), DesignPoint(16, 1, 3000, "ordp")]


def test_bottleneck_step_on_bandwidth_bound_point(blur_space):
    point = DesignPoint(64, 1, 3000, "off")
    est = blur_space.evaluate(point).estimate
    assert est.top.kind == "communication"
    props = bottleneck_step(_state(blur_space), point, est)
    assert props == [DesignPoint(64, 1, 6000, "off"), DesignPoint(32, 1, 3000, "off")]


def test_bottleneck_step_skips_seen_points(blur_space):
    point = DesignPoint(16, 1, 3000, "off")
    state = _state(blur_space)
    state.evaluated[DesignPoint(32, 1, 3000, "off")] = None
    est = blur_space.evaluate(point).estimate
    assert bottleneck_step(state, point, est) == [DesignPoint(16, 1, 3000, "ordp")]


def test_iterating_program_space():
    p = program("iter_avg")
    assert default_workload(p).iterations == 2
    s = enumerate_space(p, unroll_set=(1, 2, 4))
    assert {q.iterate_factor for q in s.valid} == {1, 2}
    one = s.evaluate(DesignPoint(2, 1, 16, "off"))
    two = s.evaluate(DesignPoint(2, 2, 16, "off"))
    # a single pass of two chained copies beats two passes of one
    assert two.total_cycles < one.total_cycles


def test_three_dimensional_space():
    s = enumerate_space(program("heat3d"), unroll_set=(1, 2), tile_widths=(8,))
    best, report = explore(program("heat3d"), space=s)
    assert s.is_valid(best)
    assert report["space"]["tile_widths"] == [8]
