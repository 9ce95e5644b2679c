"""Threshold pre-check and the relaxation-driven elasticity step."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from ..catalog import Catalog
from ..qoe import clamp_mos
from .branch_bound import DEFAULT_MAX_INSTANCES, DEFAULT_NODE_LIMIT, solve
from .model import AssignmentSolution, InstanceSnapshot, SolveParams


class TriggerKind(str, enum.Enum):
    SCALE_UP = "ScaleUpHint"
    SCALE_DOWN = "ScaleDownHint"
    QUALITY_NOT_LOAD = "QualityNotLoad"
    HEALTHY = "Healthy"


@dataclass(frozen=True)
class Thresholds:
    cpu_up: float = 90.0
    ram_up: float = 90.0
    cpu_down: float = 25.0
    ram_down: float = 65.0
    mos_target: float = 4.0

    def overloaded(self, cpu: float, ram: float) -> bool:
        return cpu > self.cpu_up or ram > self.ram_up

    def underloaded(self, cpu: float, ram: float) -> bool:
        return cpu < self.cpu_down and ram < self.ram_down


def classify_reading(cpu: float, ram: float, mos: float, thresholds: Thresholds) -> TriggerKind:
    low_mos = mos < thresholds.mos_target
    if thresholds.overloaded(cpu, ram):
        return TriggerKind.SCALE_UP if low_mos else TriggerKind.HEALTHY
    if low_mos:
        # usage is not the cause, whatever the utilization level
        return TriggerKind.QUALITY_NOT_LOAD
    if thresholds.underloaded(cpu, ram):
        return TriggerKind.SCALE_DOWN
    return TriggerKind.HEALTHY


def threshold_precheck(telemetry, thresholds: Thresholds) -> TriggerKind:
    """Region-level trigger from per-instance CPU, RAM and MOS readings.

    ``telemetry`` is a sample exposing ``instances``, a mapping of readings
    with ``cpu_pct``, ``ram_pct`` and ``probe_mos``, the mapping itself, or
    a single reading.
    Any overloaded instance with a low MOS asks for more resources; a region
    scales down only when every instance is under-used with acceptable MOS.
    """
    readings = getattr(telemetry, "instances", telemetry)
    if hasattr(readings, "values"):
        readings = list(readings.values())
    elif hasattr(readings, "cpu_pct"):
        readings = [readings]
    kinds = [classify_reading(r.cpu_pct, r.ram_pct, r.probe_mos, thresholds) for r in readings]
    if not kinds:
        return TriggerKind.HEALTHY
    for kind in (TriggerKind.SCALE_UP, TriggerKind.QUALITY_NOT_LOAD):
        if kind in kinds:
            return kind
    if all(k is TriggerKind.SCALE_DOWN for k in kinds):
        return TriggerKind.SCALE_DOWN
    return TriggerKind.HEALTHY


class DecisionKind(str, enum.Enum):
    REALLOCATE = "Reallocate"
    SCALE_OUT = "ScaleOut"
    SCALE_IN = "ScaleIn"
    NO_ACTION = "NoAction"
    ALARM = "Alarm"


@dataclass(frozen=True)
class SolveBudget:
    exact_max_n: int = DEFAULT_MAX_INSTANCES
    node_limit: int = DEFAULT_NODE_LIMIT


@dataclass
class EdmDecision:
    kind: DecisionKind
    trace: list[str] = field(default_factory=list)
    solution: AssignmentSolution | None = None
    # instance set the solution refers to (after any scale out / in)
    instances: list[InstanceSnapshot] = field(default_factory=list)
    added: list[InstanceSnapshot] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    reason: str = ""
    epoch: int = 0

    @property
    def instance_count(self) -> int:
        return len(self.instances)

    def summary(self) -> str:
        parts = [self.kind.value]
        if self.kind is DecisionKind.SCALE_OUT:
            parts.append(f"instances={self.instance_count} added={len(self.added)}")
        elif self.kind is DecisionKind.SCALE_IN:
            parts.append(f"removed={','.join(self.removed)}")
        elif self.kind is DecisionKind.ALARM:
            parts.append(f"reason={self.reason!r}")
        if self.solution is not None and self.solution.feasible:
            parts.append(f"cost_usd_h={self.solution.total_cost:.6f} avg_qoe={self.solution.avg_qoe:.4f}")
        return " ".join(parts)


NEW_ID_PREFIX = "new"


def _solve(instances, catalog, params, budget: SolveBudget, trace: list[str], label: str):
    sol = solve(instances, catalog, params, exact_max_n=budget.exact_max_n, node_limit=budget.node_limit)
    loads = sol.per_instance_load.values()
    span = f" load=[{min(loads):.2f},{max(loads):.2f}]" if sol.feasible and loads else ""
    trace.append(f"{label} n={len(instances)} l=[{params.l_min:g},{params.l_max:g}] "
                 f"status={sol.status.value}{span}")
    return sol


def _used_vcpus(instances: Sequence[InstanceSnapshot]) -> dict[str, int]:
    used: dict[str, int] = {}
    for inst in instances:
        used[inst.cloud_id] = used.get(inst.cloud_id, 0) + inst.current_flavor.vcpu
    return used


def _with_sessions(inst: InstanceSnapshot, sessions: float) -> InstanceSnapshot:
    if inst.sessions > 0:
        load = inst.avg_load * sessions / inst.sessions
    else:
        load = inst.avg_load
    return replace(inst, sessions=sessions, avg_load=min(100.0, load))


def _load_per_session_vcpu(instances: Sequence[InstanceSnapshot]) -> float:
    num = sum(s.avg_load * s.current_flavor.vcpu for s in instances)
    den = sum(s.sessions for s in instances)
    return num / den if den > 0 else 0.0


def add_instance(instances: Sequence[InstanceSnapshot], catalog: Catalog,
                 params: SolveParams) -> tuple[list[InstanceSnapshot], InstanceSnapshot]:
    """One more instance on the cloud with the most spare vCPUs; sessions split evenly."""
    used = _used_vcpus(instances)
    spare = {c.id: c.capacity_vcpus - params.reserved_vcpus.get(c.id, 0) - used.get(c.id, 0)
             for c in catalog.clouds}
    cloud = max(catalog.clouds, key=lambda c: (spare[c.id], -catalog.clouds.index(c))).id
    flavor = min(catalog.flavors_in(cloud), key=lambda f: (f.cost_per_hour, f.id))
    taken = {s.instance_id for s in instances}
    k = 1
    while f"{NEW_ID_PREFIX}{k}" in taken:
        k += 1
    share = sum(s.sessions for s in instances) / (len(instances) + 1)
    density = _load_per_session_vcpu(instances)
    new = InstanceSnapshot(f"{NEW_ID_PREFIX}{k}", cloud, flavor,
                           min(100.0, density * share / flavor.vcpu), share)
    return [_with_sessions(s, share) for s in instances] + [new], new


def remove_instance(instances: Sequence[InstanceSnapshot]) -> tuple[list[InstanceSnapshot], str]:
    """Drop the least-loaded instance and spread its sessions evenly over the rest."""
    victim = min(instances, key=lambda s: (s.avg_load, s.instance_id))
    rest = [s for s in instances if s.instance_id != victim.instance_id]
    extra = victim.sessions / len(rest)
    return [_with_sessions(s, s.sessions + extra) for s in rest], victim.instance_id


def edm_step(instances: Sequence[InstanceSnapshot], catalog: Catalog, params: SolveParams,
             solve_budget: SolveBudget | None = None, max_depth: int = 8) -> EdmDecision:
    """One elasticity decision for a group of running instances.

    The assignment model is solved first.  When it is infeasible, the
    load ceiling is lifted to test whether the instances are simply
    over-utilized (add an instance and retry), then the load floor is lifted
    to test for under-utilization (remove one and retry).  The QoE floor is
    never relaxed.  Every solve and probe is recorded in ``trace``.
    """
    if not instances:
        raise ValueError("edm_step needs at least one instance")
    budget = solve_budget or SolveBudget()
    trace: list[str] = []
    current = sorted(instances, key=lambda s: s.instance_id)
    added: list[InstanceSnapshot] = []
    removed: list[str] = []
    direction = None

    for depth in range(max_depth + 1):
        sol = _solve(current, catalog, params, budget, trace, "solve")
        if sol.feasible:
            if direction == "out":
                kind = DecisionKind.SCALE_OUT
            elif direction == "in":
                kind = DecisionKind.SCALE_IN
            elif all(sol.assignment[s.instance_id] == s.current_flavor.id for s in current):
                kind = DecisionKind.NO_ACTION
            else:
                kind = DecisionKind.REALLOCATE
            return EdmDecision(kind, trace, sol, current, added, removed)
        if depth == max_depth:
            break

        if direction in (None, "out"):
            probe = _solve(current, catalog, params.relax_c3(), budget, trace, "probe-C3")
            if probe.feasible and max(probe.per_instance_load.values()) >= params.l_max:
                current, new = add_instance(current, catalog, params)
                added.append(new)
                direction = "out"
                trace.append(f"scale-out add={new.instance_id} cloud={new.cloud_id}")
                continue
        if direction in (None, "in"):
            probe = _solve(current, catalog, params.relax_c4(), budget, trace, "probe-C4")
            if probe.feasible and min(probe.per_instance_load.values()) <= params.l_min:
                if len(current) == 1:
                    trace.append("scale-in refused: last instance")
                    return EdmDecision(DecisionKind.ALARM, trace, None, list(instances),
                                       reason="scale-in would leave no instance")
                current, victim = remove_instance(current)
                removed.append(victim)
                direction = "in"
                trace.append(f"scale-in remove={victim}")
                continue
        trace.append("both probes failed")
        return EdmDecision(DecisionKind.ALARM, trace, None, list(instances),
                           reason="infeasible under relaxations")

    trace.append(f"depth limit {max_depth} reached")
    return EdmDecision(DecisionKind.ALARM, trace, None, list(instances), reason="recursion depth exhausted")


def mean_reported_qoe(solution: AssignmentSolution) -> float:
    return clamp_mos(solution.avg_qoe) if not math.isnan(solution.avg_qoe) else math.nan
