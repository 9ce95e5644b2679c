import pytest
from hypothesis import given, settings, strategies as st

from cdnslice.edm import (DecisionKind, SolveParams, Thresholds, TriggerKind, edm_step, solve_exact,
                          threshold_precheck)
from cdnslice.workload import InstanceReading
from helpers import make_catalog, snap


def reading(cpu, ram, mos):
    return InstanceReading(cpu, ram, 0, mos)


@pytest.mark.parametrize("cpu, ram, mos, kind", [
    (95, 92, 3.2, TriggerKind.SCALE_UP),
    (20, 50, 4.8, TriggerKind.SCALE_DOWN),
    (50, 60, 3.0, TriggerKind.QUALITY_NOT_LOAD),
    (50, 60, 4.5, TriggerKind.HEALTHY),
])
def test_precheck_cases(cpu, ram, mos, kind):
    assert threshold_precheck(reading(cpu, ram, mos), Thresholds(mos_target=4.0)) is kind


def test_precheck_region_aggregation():
    th = Thresholds(mos_target=4.0)
    calm, hot = reading(20, 50, 4.8), reading(95, 95, 3.0)
    assert threshold_precheck({"a": calm, "b": hot}, th) is TriggerKind.SCALE_UP
    assert threshold_precheck({"a": calm, "b": reading(50, 50, 4.8)}, th) is TriggerKind.HEALTHY
    assert threshold_precheck({"a": calm, "b": calm}, th) is TriggerKind.SCALE_DOWN
    assert threshold_precheck({}, th) is TriggerKind.HEALTHY


@pytest.fixture
def edge():
    return make_catalog({"edge": (8, [("e1", 1, 0.05), ("e2", 2, 0.09)])})


def overload_case(edge):
    insts = [snap("r1", edge.flavor("e2"), 95.0, sessions=11400)]
    return insts, SolveParams(q_min=4.0, l_min=25, l_max=90)


def underload_case(edge):
    insts = [snap("a", edge.flavor("e2"), 10.0, 600), snap("b", edge.flavor("e2"), 10.0, 600)]
    return insts, SolveParams(q_min=4.0, l_min=25, l_max=90)


def hopeless_case(edge):
    insts = [snap("r1", edge.flavor("e1"), 50.0, sessions=20000)]
    return insts, SolveParams(q_min=4.9, l_min=10, l_max=90, sigma=0.0)


def test_scale_out_after_load_ceiling_probe(edge):
    insts, params = overload_case(edge)
    d = edm_step(insts, edge, params)
    assert d.kind is DecisionKind.SCALE_OUT
    assert d.trace[0].startswith("solve") and "Infeasible" in d.trace[0]
    assert d.trace[1].startswith("probe-C3") and "Optimal" in d.trace[1]
    assert len(d.added) == 1 and d.instance_count == 2
    assert sum(s.sessions for s in d.instances) == pytest.approx(11400)
    assert solve_exact(d.instances, edge, params).feasible


def test_scale_in_after_load_floor_probe(edge):
    insts, params = underload_case(edge)
    d = edm_step(insts, edge, params)
    assert d.kind is DecisionKind.SCALE_IN
    assert any(t.startswith("probe-C4") and "Optimal" in t for t in d.trace)
    assert d.removed == ["a"] and d.instance_count == 1
    assert d.instances[0].sessions == pytest.approx(1200)


def test_alarm_when_both_probes_fail(edge):
    insts, params = hopeless_case(edge)
    d = edm_step(insts, edge, params)
    assert d.kind is DecisionKind.ALARM
    assert [t.split()[0] for t in d.trace] == ["solve", "probe-C3", "probe-C4", "both"]
    assert d.instances == insts and not d.added and not d.removed and d.solution is None


def test_scale_in_refused_for_last_instance(edge):
    insts = [snap("only", edge.flavor("e2"), 10.0, 600)]
    d = edm_step(insts, edge, SolveParams(q_min=4.0, l_min=25, l_max=90))
    assert d.kind is DecisionKind.ALARM
    assert "last instance" in d.trace[-1]


def test_healthy_is_single_solve(edge):
    insts = [snap("r1", edge.flavor("e2"), 50.0, 6000)]
    d = edm_step(insts, edge, SolveParams(q_min=4.0, l_min=25, l_max=90))
    assert d.kind in (DecisionKind.NO_ACTION, DecisionKind.REALLOCATE)
    assert len(d.trace) == 1


def test_empty_input_rejected(edge):
    with pytest.raises(ValueError):
        edm_step([], edge, SolveParams(q_min=4.0, l_min=25, l_max=90))


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from(["e1", "e2"]), st.floats(0.5, 100), st.floats(0, 15000)),
                min_size=1, max_size=3),
       st.floats(1, 4.9), st.floats(0, 50), st.floats(55, 100))
def test_decisions_deterministic_and_justified(rows, q, lo, hi):
    edge = make_catalog({"edge": (8, [("e1", 1, 0.05), ("e2", 2, 0.09)])})
    insts = [snap(f"i{k}", edge.flavor(f), load, s) for k, (f, load, s) in enumerate(rows)]
    params = SolveParams(q_min=q, l_min=lo, l_max=hi)
    d = edm_step(insts, edge, params)
    again = edm_step(insts, edge, params)
    assert (d.kind, d.trace) == (again.kind, again.trace)
    assert not (d.added and d.removed)
    if d.kind is DecisionKind.SCALE_OUT:
        assert any(t.startswith("probe-C3") for t in d.trace)
    if d.kind is DecisionKind.SCALE_IN:
        assert any(t.startswith("probe-C4") for t in d.trace)
