import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdnslice.edm import (SolveParams, Status, build_coefficients, check_feasibility, solve, solve_bruteforce,
                          solve_exact, solve_heuristic)
from cdnslice.edm.model import QOE_TOL
from cdnslice.errors import TooLarge, UnknownFlavor
from cdnslice.catalog import Flavor
from cdnslice.qoe import mos_flavored
from helpers import make_catalog, random_problem, snap

SLACK = dict(q_min=1.0, sigma=0.0)


def test_load_scaling_and_identity(two_flavor_catalog):
    cat = two_flavor_catalog
    inst = snap("i1", cat.flavor("A"), 80.0, sessions=3000)
    coef = build_coefficients([inst], cat, SolveParams(l_min=0, l_max=100, **SLACK))
    a, b = coef.flavor_ids.index("A"), coef.flavor_ids.index("B")
    assert coef.load[0, b] == pytest.approx(40.0)
    assert coef.load[0, a] == 80.0
    assert coef.qoe[0, a] == mos_flavored(3000, 1, cat.eta("A"), 0.0)


def test_session_cap_marks_inadmissible(two_flavor_catalog):
    cat = two_flavor_catalog
    inst = snap("i1", cat.flavor("A"), 50.0, sessions=30000)
    coef = build_coefficients([inst], cat, SolveParams(l_min=0, l_max=100, **SLACK))
    assert not coef.admissible[0, coef.flavor_ids.index("A")]
    assert coef.admissible[0, coef.flavor_ids.index("B")]


def test_unknown_flavor(two_flavor_catalog):
    stray = Flavor("Z", "c1", 1, 512, 0.01)
    with pytest.raises(UnknownFlavor):
        build_coefficients([snap("i1", stray, 50.0)], two_flavor_catalog, SolveParams(1.0, 0, 100))


def test_bruteforce_two_instance_example(two_flavor_catalog):
    cat = two_flavor_catalog
    insts = [snap("i1", cat.flavor("A"), 80.0, 500), snap("i2", cat.flavor("A"), 80.0, 500)]
    params = SolveParams(l_min=30, l_max=70, **SLACK)
    sol = solve_bruteforce(insts, cat, params)
    assert sol.assignment == {"i1": "B", "i2": "B"}
    assert sol.total_cost == pytest.approx(0.24)
    assert check_feasibility(sol, insts, cat, params) == []
    assert solve_exact(insts, cat, params).total_cost == sol.total_cost


def test_single_feasible_flavor(two_flavor_catalog):
    cat = two_flavor_catalog
    insts = [snap("i1", cat.flavor("A"), 50.0)]
    sol = solve_bruteforce(insts, cat, SolveParams(l_min=40, l_max=60, **SLACK))
    assert sol.assignment == {"i1": "A"}


def test_band_violation_everywhere_is_infeasible(two_flavor_catalog):
    cat = two_flavor_catalog
    insts = [snap("i1", cat.flavor("A"), 90.0)]
    params = SolveParams(l_min=10, l_max=30, **SLACK)
    assert solve_bruteforce(insts, cat, params).status is Status.INFEASIBLE
    assert solve_exact(insts, cat, params).status is Status.INFEASIBLE
    assert solve_heuristic(insts, cat, params).status is Status.INFEASIBLE


def test_capacity_coupling():
    cat = make_catalog({"c": (2, [("A", 1, 0.05), ("B", 2, 0.12)])})
    params = SolveParams(l_min=30, l_max=70, **SLACK)
    one = [snap("i1", cat.flavor("A"), 80.0)]
    two = one + [snap("i2", cat.flavor("A"), 80.0)]
    assert solve_exact(one, cat, params).assignment == {"i1": "B"}
    assert solve_exact(two, cat, params).status is Status.INFEASIBLE
    assert solve_bruteforce(two, cat, params).status is Status.INFEASIBLE
    assert solve_heuristic(two, cat, params).status is Status.INFEASIBLE


def test_feasibility_referee_codes():
    cat = make_catalog({"c": (20, [("s", 1, 0.05), ("m", 8, 0.4), ("l", 16, 0.8)])})
    insts = [snap("i1", cat.flavor("m"), 40.0), snap("i2", cat.flavor("m"), 40.0)]
    params = SolveParams(l_min=0, l_max=100, **SLACK)
    assert check_feasibility({"i1": "m", "i2": "m"}, insts, cat, params) == []
    assert check_feasibility({"i1": "l", "i2": "m"}, insts, cat, params) == ["C6"]
    assert check_feasibility({"i1": "m"}, insts, cat, params) == ["C1"]
    assert "C2" in check_feasibility({"i1": "m", "i2": "m", "ghost": "s"}, insts, cat, params)
    assert "C8" in check_feasibility({"i1": "m", "i2": "nope"}, insts, cat, params)
    tight = SolveParams(q_min=5.0, l_min=0, l_max=100, sigma=0.0)
    assert "C5" in check_feasibility({"i1": "m", "i2": "m"}, insts, cat, tight)


def test_bruteforce_cap(two_flavor_catalog):
    cat = two_flavor_catalog
    insts = [snap(f"i{k}", cat.flavor("A"), 50.0) for k in range(5)]
    with pytest.raises(TooLarge):
        solve_bruteforce(insts, cat, SolveParams(1.0, 0, 100), cap=10)


def test_exact_budget_exceeded_returns_incumbent():
    cat = make_catalog({"c": (200, [(f"f{k}", v, 0.01 * v + 0.001 * k) for k, v in
                                    enumerate([1, 1, 2, 2, 4, 4, 8, 8])])})
    insts = [snap(f"i{k:02d}", cat.flavor("f2"), 40.0 + k) for k in range(12)]
    params = SolveParams(q_min=4.95, l_min=5, l_max=95)
    sol = solve_exact(insts, cat, params, node_limit=50)
    assert sol.feasible
    if sol.budget_exceeded:
        assert sol.status is Status.HEURISTIC and sol.gap >= 0
    assert check_feasibility(sol, insts, cat, params) == []


def test_dispatch_uses_heuristic_above_budget(two_flavor_catalog):
    cat = two_flavor_catalog
    insts = [snap(f"i{k}", cat.flavor("A"), 50.0) for k in range(3)]
    params = SolveParams(l_min=0, l_max=100, **SLACK)
    assert solve(insts, cat, params, exact_max_n=2) == solve_heuristic(insts, cat, params)
    assert solve(insts, cat, params, exact_max_n=3) == solve_exact(insts, cat, params)


@settings(max_examples=150)
@given(st.integers(0, 2 ** 32 - 1))
def test_exact_matches_bruteforce(seed):
    insts, cat, params = random_problem(np.random.default_rng(seed))
    a, b = solve_exact(insts, cat, params), solve_bruteforce(insts, cat, params)
    assert a.feasible == b.feasible
    if a.feasible:
        assert a.total_cost == b.total_cost
        assert check_feasibility(a, insts, cat, params) == []
        assert check_feasibility(b, insts, cat, params) == []


@settings(max_examples=150)
@given(st.integers(0, 2 ** 32 - 1))
def test_heuristic_never_beats_exact(seed):
    insts, cat, params = random_problem(np.random.default_rng(seed))
    exact = solve_exact(insts, cat, params)
    heur = solve_heuristic(insts, cat, params)
    if heur.feasible:
        assert check_feasibility(heur, insts, cat, params) == []
        assert exact.feasible and heur.total_cost >= exact.total_cost - 1e-12
        assert heur.gap is not None and heur.gap >= -1e-12


@settings(max_examples=150)
@given(st.integers(0, 2 ** 32 - 1))
def test_heuristic_exact_when_constraints_decouple(seed):
    rng = np.random.default_rng(seed)
    insts, cat, params = random_problem(rng)
    roomy = make_catalog({c.id: (10_000, [(f.id, f.vcpu, f.cost_per_hour) for f in cat.flavors_in(c.id)])
                          for c in cat.clouds})
    insts = [snap(s.instance_id, roomy.flavor(s.current_flavor.id), s.avg_load, s.sessions) for s in insts]
    loose = SolveParams(q_min=1.0, l_min=params.l_min, l_max=params.l_max, sigma=params.sigma,
                        cross_cloud_moves=params.cross_cloud_moves)
    exact = solve_exact(insts, roomy, loose)
    heur = solve_heuristic(insts, roomy, loose)
    # with q_min = 1 the QoE floor can only bind through the admissibility guard
    assert heur.feasible == exact.feasible
    if exact.feasible:
        assert heur.total_cost == exact.total_cost


def _cost(insts, cat, params):
    sol = solve_exact(insts, cat, params)
    return sol.total_cost if sol.feasible else math.inf


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 2), st.floats(0, 30))
def test_cost_monotone_in_floors(seed, dq, dl):
    insts, cat, params = random_problem(np.random.default_rng(seed))
    base = _cost(insts, cat, params)
    q2 = min(5.0, params.q_min + dq)
    l2 = min(params.l_max - 1e-6, params.l_min + dl)
    from dataclasses import replace
    assert _cost(insts, cat, replace(params, q_min=q2)) >= base
    assert _cost(insts, cat, replace(params, l_min=l2)) >= base


def test_qoe_tolerance_is_tiny():
    assert QOE_TOL <= 1e-9


def test_determinism():
    rng = np.random.default_rng(5)
    insts, cat, params = random_problem(rng)
    assert solve_exact(insts, cat, params) == solve_exact(insts, cat, params)
    assert solve_heuristic(insts, cat, params) == solve_heuristic(insts, cat, params)
