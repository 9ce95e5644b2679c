import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from cdnslice.config import load_config
from cdnslice.edm import check_feasibility
from cdnslice.sweep import mean_ci, replication_instances, run_sweep, write_sweep_tables


@pytest.fixture(scope="module")
def cfg():
    c = load_config("sweep")
    return replace(c, sweep=replace(c.sweep, sizes=(10, 20, 40)))


@pytest.fixture(scope="module")
def q_result(cfg):
    return run_sweep(cfg, "q_min", replications=3)


def test_mean_ci_matches_t_interval():
    x = np.array([1.0, 2.0, 4.0, 7.0])
    mean, half = mean_ci(x)
    lo, hi = stats.t.interval(0.95, len(x) - 1, loc=x.mean(), scale=stats.sem(x))
    assert mean == pytest.approx(x.mean()) and half == pytest.approx((hi - lo) / 2)
    assert mean_ci(np.array([1.0, math.inf]))[0] == math.inf
    assert math.isnan(mean_ci(np.array([3.0]))[1])


def test_instances_are_nested_prefixes(cfg):
    small, big = replication_instances(cfg, 0, 10), replication_instances(cfg, 0, 40)
    assert big[:10] == small
    assert replication_instances(cfg, 1, 10) != small


def test_points_independent_of_replication_count(cfg, q_result):
    one = run_sweep(cfg, "q_min", replications=1)
    for v in one.values:
        for n in one.sizes:
            assert one.cost(v, n) == q_result.cost(v, n)[:1]


def test_q_min_ordering_per_seed(q_result):
    for lo, hi in zip(q_result.values, q_result.values[1:]):
        for n in q_result.sizes:
            assert all(a <= b for a, b in zip(q_result.cost(lo, n), q_result.cost(hi, n)))


def test_feasible_points_meet_qoe_floor(q_result):
    ok = [p for p in q_result.points if p.feasible]
    assert ok and all(p.mean_qoe >= p.axis_value - 1e-9 for p in ok)
    assert all(p.capacity_premium >= -1e-9 for p in ok)


def test_solutions_pass_referee(cfg):
    from cdnslice.edm import solve
    from cdnslice.sweep import _params
    insts = replication_instances(cfg, 0, 40)
    params = _params(cfg.sweep, 4.5, 50.0)
    sol = solve(insts, cfg.catalog, params, exact_max_n=cfg.sweep.exact_max_n, node_limit=cfg.sweep.node_limit)
    assert sol.feasible and check_feasibility(sol, insts, cfg.catalog, params) == []


def test_tables(q_result, tmp_path):
    agg, pts = write_sweep_tables(q_result, tmp_path)
    rows = list(csv.DictReader(agg.open()))
    assert len(rows) == len(q_result.values) * len(q_result.sizes)
    assert "wall_s" not in rows[0]
    assert len(list(csv.DictReader(pts.open()))) == len(q_result.points)
    agg2, _ = write_sweep_tables(q_result, tmp_path / "t", with_timing=True)
    assert "wall_s" in next(csv.DictReader(agg2.open()))


def test_bad_axis(cfg):
    with pytest.raises(ValueError):
        run_sweep(cfg, "sigma")
    with pytest.raises(ValueError):
        run_sweep(cfg, "q_min", replications=0)
