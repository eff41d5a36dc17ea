import pytest

from cradle.model import (
    FF,
    LUT,
    CyclicHierarchy,
    DesignUnit,
    Objective,
    ParseGaveNothing,
    ResourceMetrics,
    UndefinedReduction,
    Variant,
    VerdictStatus,
    VerificationVerdict,
    extract_hierarchy,
    objective_value,
    reduction,
    reductions_vs_reference,
    uninstantiated_modules,
    with_metrics,
)

from conftest import make_design, metrics, passing, failing, SIMPLE_SRC


def test_metrics_always_carry_lut_and_ff():
    m = ResourceMetrics({"CCU2C": 3})
    assert m.lut == 0
    assert m.ff == 0
    assert m.get("CCU2C") == 3
    assert m.classes() == ["CCU2C", FF, LUT]


def test_metrics_reject_negative_and_unnamed_classes():
    with pytest.raises(ValueError):
        ResourceMetrics({"LUT": -1})
    with pytest.raises(ValueError):
        ResourceMetrics({"": 4})


def test_metrics_roundtrip():
    m = metrics(12, 8, DSP=1)
    assert ResourceMetrics.from_dict(m.to_dict()) == m
    assert m.to_dict() == {"counts": {"LUT": 12, "FF": 8, "DSP": 1}}


def test_objective_rejects_equal_classes_and_bad_weights():
    with pytest.raises(ValueError):
        Objective(primary_class=LUT, secondary_class=LUT)
    with pytest.raises(ValueError):
        Objective(weights={"LUT": -0.5})
    with pytest.raises(ValueError):
        Objective(weights={"LUT": 0.0, "FF": 0.0})


def test_objective_value_lexicographic_and_weighted():
    obj = Objective()
    assert objective_value(metrics(10, 3), obj) == (10, 3)
    weighted = Objective(weights={"LUT": 1.0, "FF": 2.0})
    assert objective_value(metrics(10, 3), weighted) == pytest.approx(16.0)
    # missing classes read as zero
    assert objective_value(ResourceMetrics({}), weighted) == pytest.approx(0.0)


def test_reduction_basic_and_edges():
    assert reduction(metrics(100, 10), metrics(52, 6), LUT) == pytest.approx(48.0)
    assert reduction(metrics(100, 10), metrics(52, 6), FF) == pytest.approx(40.0)
    # regression is negative
    assert reduction(metrics(50, 1), metrics(75, 1), LUT) == pytest.approx(-50.0)
    # both zero: defined as zero
    assert reduction(metrics(0, 1), metrics(0, 1), LUT) == 0.0
    with pytest.raises(UndefinedReduction):
        reduction(metrics(0, 1), metrics(5, 1), LUT)


def test_reductions_vs_reference_skips_undefined_classes():
    ref = ResourceMetrics({"LUT": 100, "FF": 10})
    cand = ResourceMetrics({"LUT": 52, "FF": 6, "DSP": 2})
    out = reductions_vs_reference(ref, cand)
    assert out == {"LUT": 48.0, "FF": 40.0}
    assert "DSP" not in out


def test_verdict_roundtrip_and_passed():
    v = VerificationVerdict(VerdictStatus.SIM_FAIL, "MISMATCH at t=5", "mismatch")
    assert not v.passed
    assert VerificationVerdict.from_dict(v.to_dict()) == v
    assert passing().passed


def test_variant_invariants():
    with pytest.raises(ValueError):
        Variant(id=-1, source_text="", iteration=1, verdict=passing())
    with pytest.raises(ValueError):
        Variant(id=3, source_text="", iteration=0, verdict=passing())
    with pytest.raises(ValueError):
        Variant(id=3, source_text="", iteration=1, verdict=failing(), metrics=metrics(1, 1))
    ref = Variant(id=0, source_text="x", iteration=0, verdict=passing())
    assert ref.is_reference
    upgraded = with_metrics(ref, metrics(4, 2))
    assert upgraded.metrics.lut == 4
    assert ref.metrics is None  # frozen original untouched


TWO_LEVEL = """\
module leaf (input a, output b);
endmodule

module mid (input a, output b);
    leaf l0 (.a(a), .b(b));
endmodule

module top2 (input a, output b);
    mid m0 (.a(a), .b(b));
    leaf l1 (.a(a), .b());
endmodule
"""


def test_hierarchy_two_levels():
    node = extract_hierarchy([TWO_LEVEL])
    assert node.module_name == "top2"
    assert node.node_count() == 4
    assert node.edge_count() == 3
    names = [inst for inst, _ in node.instances]
    assert names == ["m0", "l1"]


def test_hierarchy_explicit_top_overrides_root_pick():
    node = extract_hierarchy([TWO_LEVEL], top="mid")
    assert node.module_name == "mid"
    assert node.node_count() == 2


def test_hierarchy_cycle_detected():
    src = """
module a (); b i0 (); endmodule
module b (); a i1 (); endmodule
"""
    with pytest.raises(CyclicHierarchy):
        extract_hierarchy([src])


def test_hierarchy_errors_on_garbage():
    with pytest.raises(ParseGaveNothing):
        extract_hierarchy(["// nothing here"])
    with pytest.raises(ParseGaveNothing):
        extract_hierarchy([TWO_LEVEL], top="nonexistent")


def test_uninstantiated_modules_order():
    assert uninstantiated_modules([TWO_LEVEL]) == ["top2"]
    both = "module x (); endmodule\nmodule y (); endmodule"
    assert uninstantiated_modules([both]) == ["x", "y"]


def test_design_unit_validation():
    d = make_design()
    assert d.top_module == "top"
    assert "module top" in d.joined_source()
    with pytest.raises(ValueError):
        make_design(top="nonexistent")
    with pytest.raises(ValueError):
        DesignUnit(
            name="clash",
            source_files=(("same.v", SIMPLE_SRC),),
            top_module="top",
            testbench_files=(("same.v", "module tb; endmodule"),),
        )
    with pytest.raises(ValueError):
        make_design(name="")


def test_design_unit_roundtrip():
    d = make_design(reference_metrics=metrics(9, 3))
    back = DesignUnit.from_dict(d.to_dict())
    assert back == d
    assert back.hierarchy().module_name == "top"
