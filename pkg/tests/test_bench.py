import json

import pytest

from cradle.agent import LoopConfig
from cradle.bench import (
    CSV_HEADER,
    DesignOutcome,
    EmptySuite,
    IoError,
    ReductionStats,
    SuiteResult,
    aggregate,
    discover_suite,
    emit,
    render_csv,
    run_suite,
    suite_result_from_json,
)
from cradle.model import Objective

from conftest import (
    FakeGateway,
    PLAN_REPLY,
    SIMPLE_SRC,
    STOP_REPLY,
    StubAdapters,
    failing,
    make_design,
    metrics,
    rewrite_reply,
)

IMPROVED_SRC = SIMPLE_SRC.replace("q + 4'd1", "q + {3'b0, 1'b1}")


def factories(measure=None, sim=None):
    return (
        lambda design: StubAdapters(sim, measure),
        lambda design: FakeGateway([PLAN_REPLY, rewrite_reply(IMPROVED_SRC), STOP_REPLY]),
    )


def outcome(name="widget", ref_lut=100, best_lut=52, ref_ff=10, best_ff=6,
            improved=True, reductions=None):
    if reductions is None:
        reductions = {
            "LUT": 100.0 * (ref_lut - best_lut) / ref_lut,
            "FF": 100.0 * (ref_ff - best_ff) / ref_ff,
        }
    return DesignOutcome(
        ref=metrics(ref_lut, ref_ff),
        best=metrics(best_lut, best_ff),
        improved=improved,
        reductions=reductions,
    )


# -- discovery


def test_discover_in_workspace_root(ws):
    units = discover_suite(ws)
    assert [u.name for u in units] == ["counter8"]
    assert units[0].top_module == "counter8"


def test_discover_bare_designs_dir(ws):
    units = discover_suite(ws / "designs")
    assert [u.name for u in units] == ["counter8"]


def test_discover_collects_skipped(ws):
    (ws / "designs" / "broken" / "src").mkdir(parents=True)
    skipped = {}
    units = discover_suite(ws, skipped=skipped)
    assert [u.name for u in units] == ["counter8"]
    assert list(skipped) == ["broken"]
    assert "EmptyDesign" in skipped["broken"]


def test_discover_empty_raises(tmp_path):
    with pytest.raises(EmptySuite):
        discover_suite(tmp_path)


# -- running


def test_run_suite_single_design():
    adapter_factory, gateway_factory = factories(measure=[metrics(100, 10), metrics(52, 6)])
    result = run_suite([make_design("counter8")], LoopConfig(),
                       adapter_factory=adapter_factory, gateway_factory=gateway_factory)
    assert result.failures == {}
    o = result.per_design["counter8"]
    assert o.improved
    assert o.ref.lut == 100 and o.best.lut == 52
    assert o.reductions == {"LUT": 48.0, "FF": 40.0}
    assert o.best_variant_id == 1
    assert o.verdict_trail == ("1:Pass",)
    assert o.wall_clock_s >= 0.0


def test_run_suite_requires_factories():
    with pytest.raises(ValueError):
        run_suite([make_design()], LoopConfig())


def test_run_suite_isolates_failures():
    def adapter_factory(design):
        if design.name == "sick":
            return StubAdapters(sim_results=[failing(excerpt="bench exploded")])
        return StubAdapters(measure_results=[metrics(20, 4), metrics(15, 4)])

    def gateway_factory(design):
        return FakeGateway([PLAN_REPLY, rewrite_reply(IMPROVED_SRC), STOP_REPLY])

    suite = [make_design("sick"), make_design("healthy")]
    result = run_suite(suite, LoopConfig(),
                       adapter_factory=adapter_factory, gateway_factory=gateway_factory)
    assert result.per_design["healthy"].improved
    assert "sick" in result.failures
    assert result.failures["sick"].startswith("RefFailsVerification")


def test_run_suite_parallel_output_is_name_ordered():
    adapter_factory, _ = factories(measure=[metrics(30, 3), metrics(20, 3)])
    names = ["zeta", "alpha", "mid", "beta"]
    suite = [make_design(n) for n in names]
    result = run_suite(
        suite, LoopConfig(), parallelism=3,
        adapter_factory=adapter_factory,
        gateway_factory=lambda d: FakeGateway(
            [PLAN_REPLY, rewrite_reply(IMPROVED_SRC), STOP_REPLY]),
    )
    assert list(result.per_design) == sorted(names)
    assert all(o.improved for o in result.per_design.values())


# -- aggregation


def test_aggregate_means_and_clamping():
    result = SuiteResult(per_design={
        "a": outcome("a", reductions={"LUT": 50.0, "FF": 10.0}, improved=True),
        "b": outcome("b", reductions={"LUT": -10.0, "FF": 0.0}, improved=False),
        "c": outcome("c", reductions={"LUT": 20.0}, improved=True),  # FF absent -> 0
    })
    stats = aggregate(result)
    assert stats.total_count == 3
    assert stats.improved_count == 2
    assert stats.mean_reduction["LUT"] == pytest.approx(60.0 / 3)
    assert stats.mean_reduction["FF"] == pytest.approx(10.0 / 3)
    assert stats.mean_reduction_clamped["LUT"] == pytest.approx(70.0 / 3)


def test_aggregate_empty():
    stats = aggregate(SuiteResult())
    assert stats.mean_reduction is None
    assert stats.mean_reduction_clamped is None
    assert stats.improved_count == 0 and stats.total_count == 0


def test_reduction_stats_invariant():
    with pytest.raises(ValueError):
        ReductionStats({}, {}, improved_count=5, total_count=3)


# -- emission


def test_csv_exact_shape():
    result = SuiteResult(per_design={"counter8": outcome("counter8")})
    text = render_csv(result)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == "counter8,100,52,48.0,10,6,40.0,true"
    assert text.endswith("\n")


def test_csv_rows_sorted_and_unimproved_false(tmp_path):
    result = SuiteResult(per_design={
        "zz": outcome("zz", best_lut=100, best_ff=10, improved=False,
                      reductions={"LUT": 0.0, "FF": 0.0}),
        "aa": outcome("aa"),
    })
    path = emit(result, "csv", tmp_path / "res.csv")
    lines = path.read_text().splitlines()
    assert [line.split(",")[0] for line in lines] == ["design", "aa", "zz"]
    assert lines[2].endswith(",0.0,false")


def test_json_roundtrip(tmp_path):
    result = SuiteResult(
        per_design={"counter8": outcome("counter8")},
        failures={"deadbeat": "RefFailsVerification: bench exploded"},
    )
    path = emit(result, "json", tmp_path / "res.json")
    doc = json.loads(path.read_text())
    assert doc["stats"]["improved_count"] == 1
    assert "wall_clock_s" not in doc["per_design"]["counter8"]

    back = suite_result_from_json(path)
    assert back.failures == result.failures
    o = back.per_design["counter8"]
    assert o.ref.counts == {"LUT": 100, "FF": 10}
    assert o.reductions == result.per_design["counter8"].reductions


def test_json_timing_opt_in(tmp_path):
    o = DesignOutcome(ref=metrics(10, 2), best=metrics(8, 2), improved=True,
                      reductions={"LUT": 20.0, "FF": 0.0},
                      wall_clock_s=1.23456, usage={"calls": 3})
    path = emit(SuiteResult(per_design={"x": o}), "json", tmp_path / "t.json",
                include_timing=True)
    entry = json.loads(path.read_text())["per_design"]["x"]
    assert entry["wall_clock_s"] == 1.235
    assert entry["usage"] == {"calls": 3}


def test_emit_unwritable_path(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("i am a file")
    with pytest.raises(IoError):
        emit(SuiteResult(per_design={"x": outcome()}), "csv", blocker / "res.csv")
    with pytest.raises(ValueError):
        emit(SuiteResult(), "yaml", tmp_path / "res.yaml")


def test_improved_follows_objective():
    adapter_factory, gateway_factory = factories(measure=[metrics(10, 10), metrics(10, 10)])
    result = run_suite([make_design("flat")], LoopConfig(),
                       adapter_factory=adapter_factory, gateway_factory=gateway_factory)
    o = result.per_design["flat"]
    assert not o.improved
    assert o.best_variant_id == 0
    assert o.reductions == {"LUT": 0.0, "FF": 0.0}
