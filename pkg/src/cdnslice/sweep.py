"""Replicated parameter sweeps over the flavor-assignment model on a synthetic catalog."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .catalog import Catalog
from .config import ScenarioConfig, SweepConfig
from .edm import Coefficients, InstanceSnapshot, SolveParams, solve
from .edm.heuristic import relaxed_lower_bound
from .edm.model import MICRO
from .engine import HOURS_PER_MONTH
from .qoe import QUAD_COEFF

AXES = ("n_instances", "q_min", "l_min")
TARGET_VCPUS = (1, 2, 4)
TARGET_WEIGHTS = (0.5, 0.3, 0.2)


def sweep_instances(catalog: Catalog, n: int, rng: np.random.Generator, mos_lo: float = 4.0,
                    util: tuple[float, float] = (80.0, 100.0)) -> list[InstanceSnapshot]:
    """Random running instances: each sits on a uniformly drawn flavor.

    An instance needs a target number of vCPUs to run at ``util`` load; on
    its current flavor the load is scaled accordingly.  Its session count is
    what the target size serves at a QoE drawn in [mos_lo, 5].
    """
    flavors = catalog.flavors
    out = []
    for i in range(n):
        f = flavors[int(rng.integers(len(flavors)))]
        s = min(int(rng.choice(TARGET_VCPUS, p=TARGET_WEIGHTS)), f.vcpu)
        u = rng.uniform(*util)
        q = rng.uniform(mos_lo, 5.0)
        rho = s * math.sqrt((5.0 - q) / QUAD_COEFF)
        out.append(InstanceSnapshot(f"i{i:03d}", f.cloud_id, f, min(100.0, u * s / f.vcpu), rho))
    return out


def replication_instances(config: ScenarioConfig, rep: int, n: int) -> list[InstanceSnapshot]:
    """The first ``n`` instances of replication ``rep``.

    Every replication draws one population from its own derived seed and
    smaller slices are prefixes of it, so neighbouring sizes share instances
    and the size trend is not buried in sampling noise.
    """
    sc = config.sweep
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(rep,)))
    return sweep_instances(config.catalog, max(n, max(sc.sizes, default=n)), rng, sc.mos_lo)[:n]


@dataclass(frozen=True)
class SweepPoint:
    axis_value: float
    n: int
    rep: int
    status: str
    cost_usd_h: float
    monthly_cost_per_instance: float
    mean_qoe: float
    mean_load: float
    wall_s: float
    # cheapest in-band flavors ignoring the QoE floor and cloud capacity
    lower_bound_usd_h: float = math.nan

    @property
    def capacity_premium(self) -> float:
        """Relative cost above the decoupled lower bound."""
        return self.cost_usd_h / self.lower_bound_usd_h - 1.0

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.monthly_cost_per_instance)


@dataclass
class SweepResult:
    axis: str
    values: tuple[float, ...]
    sizes: tuple[int, ...]
    replications: int
    q_min: float
    l_min: float
    points: list[SweepPoint] = field(default_factory=list)

    def cost(self, value: float, n: int) -> list[float]:
        """Per-replication monthly cost per instance, in replication order."""
        pts = sorted((p for p in self.points if p.axis_value == value and p.n == n), key=lambda p: p.rep)
        return [p.monthly_cost_per_instance for p in pts]

    def table(self, confidence: float = 0.95) -> list[dict]:
        rows = []
        for v in self.values:
            for n in self.sizes:
                pts = [p for p in self.points if p.axis_value == v and p.n == n]
                ok = [p for p in pts if p.feasible]
                costs = np.array([p.monthly_cost_per_instance for p in pts])
                mean, half = mean_ci(costs, confidence)
                rows.append({
                    "axis": self.axis, "value": v, "n": n, "reps": len(pts), "feasible": len(ok),
                    "cost_month_per_instance": mean, "ci_half_width": half,
                    "mean_qoe": float(np.mean([p.mean_qoe for p in ok])) if ok else math.nan,
                    "mean_load": float(np.mean([p.mean_load for p in ok])) if ok else math.nan,
                    "capacity_premium": float(np.mean([p.capacity_premium for p in ok])) if ok else math.nan,
                    "wall_s": float(np.mean([p.wall_s for p in pts])) if pts else math.nan,
                })
        return rows


def mean_ci(samples: np.ndarray, confidence: float = 0.95) -> tuple[float, float]:
    """Sample mean and Student-t half width; infinite samples make the point infinite."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return math.nan, math.nan
    if not np.all(np.isfinite(samples)):
        return math.inf, math.nan
    mean = float(samples.mean())
    if samples.size < 2:
        return mean, math.nan
    sem = float(samples.std(ddof=1)) / math.sqrt(samples.size)
    return mean, float(stats.t.ppf(0.5 + confidence / 2, samples.size - 1)) * sem


def _params(sc: SweepConfig, q_min: float, l_min: float) -> SolveParams:
    return SolveParams(q_min=q_min, l_min=l_min, l_max=sc.l_max, sigma=sc.sigma,
                       cross_cloud_moves=sc.cross_cloud_moves)


def _point(value, n, rep, sol, wall, lb) -> SweepPoint:
    lb_usd = lb / MICRO if lb is not None else math.nan
    if not sol.feasible:
        return SweepPoint(value, n, rep, sol.status.value, math.inf, math.inf, math.nan, math.nan, wall, lb_usd)
    loads = list(sol.per_instance_load.values())
    return SweepPoint(value, n, rep, sol.status.value, sol.total_cost,
                      sol.total_cost * HOURS_PER_MONTH / n, sol.avg_qoe, float(np.mean(loads)), wall, lb_usd)


def run_sweep(config: ScenarioConfig, axis: str = "q_min", replications: int | None = None,
              sizes: Sequence[int] | None = None) -> SweepResult:
    """Solve the assignment model over a grid of slice sizes and one constraint axis.

    Instances come from :func:`replication_instances`, so a point's value
    does not depend on how many replications run.
    Along the constraint axis the tightest setting is solved first and its
    assignment seeds the looser ones: any assignment feasible under a
    tighter floor stays feasible under a looser one.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    sc = config.sweep
    reps = sc.replications if replications is None else int(replications)
    if reps < 1:
        raise ValueError("replications must be >= 1")
    sizes = tuple(sizes or sc.sizes)
    if axis == "q_min":
        values = tuple(sorted(sc.q_min_values))
    elif axis == "l_min":
        values = tuple(sorted(sc.l_min_values))
    else:
        values = (float(sc.base_q_min),)
    result = SweepResult(axis, values, sizes, reps, sc.base_q_min, sc.base_l_min)

    for rep in range(reps):
        for n in sizes:
            instances = replication_instances(config, rep, n)
            incumbent = None
            for v in reversed(values):
                q_min = v if axis in ("q_min", "n_instances") else sc.base_q_min
                l_min = v if axis == "l_min" else sc.base_l_min
                params = _params(sc, q_min, l_min)
                t0 = time.perf_counter()
                sol = solve(instances, config.catalog, params,
                            exact_max_n=sc.exact_max_n, node_limit=sc.node_limit, incumbent=incumbent)
                wall = time.perf_counter() - t0
                coef = Coefficients(instances, config.catalog, params)
                lb = relaxed_lower_bound(coef, coef.band_mask(params))
                result.points.append(_point(v, n, rep, sol, wall, lb))
                if sol.feasible:
                    incumbent = sol
    result.points.sort(key=lambda p: (p.axis_value, p.n, p.rep))
    return result


def solver_timing(config: ScenarioConfig, sizes: Sequence[int] = (30, 300), repeats: int = 3,
                  rep: int = 0) -> dict[int, float]:
    """Median wall time of one sweep-budget solve per slice size."""
    sc = config.sweep
    params = _params(sc, sc.base_q_min, sc.base_l_min)
    out = {}
    for n in sizes:
        instances = replication_instances(config, rep, n)
        walls = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            solve(instances, config.catalog, params, exact_max_n=sc.exact_max_n, node_limit=sc.node_limit)
            walls.append(time.perf_counter() - t0)
        out[n] = float(np.median(walls))
    return out


SWEEP_COLUMNS = ("axis", "value", "n", "reps", "feasible", "cost_month_per_instance", "ci_half_width",
                 "mean_qoe", "mean_load", "capacity_premium", "wall_s")
POINT_COLUMNS = ("axis_value", "n", "rep", "status", "cost_usd_h", "monthly_cost_per_instance",
                 "mean_qoe", "mean_load", "lower_bound_usd_h")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.6f" % v if math.isfinite(v) else ("inf" if v > 0 else "nan" if math.isnan(v) else "-inf")
    return str(v)


def write_sweep_tables(result: SweepResult, directory: str | Path, with_timing: bool = False) -> list[Path]:
    """``sweep_<axis>.csv`` (aggregated) and ``sweep_<axis>_points.csv`` (per replication).

    Wall times vary run to run, so they are left out unless asked for.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cols = SWEEP_COLUMNS if with_timing else SWEEP_COLUMNS[:-1]
    agg = directory / f"sweep_{result.axis}.csv"
    with agg.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in result.table():
            w.writerow([_fmt(row[c]) for c in cols])
    pts = directory / f"sweep_{result.axis}_points.csv"
    with pts.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_COLUMNS)
        for p in result.points:
            w.writerow([_fmt(getattr(p, c)) for c in POINT_COLUMNS])
    return [agg, pts]
