"""Flavor-assignment model: problem types, coefficient tables and the feasibility referee."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..catalog import Catalog, Flavor
from ..errors import UnknownFlavor
from ..qoe import BASE_MOS, QUAD_COEFF, mos_flavored, rho_max

# slack on the average-QoE constraint; every solver and the referee share it
QOE_TOL = 1e-9
MICRO = 1_000_000


@dataclass(frozen=True)
class InstanceSnapshot:
    instance_id: str
    cloud_id: str
    current_flavor: Flavor
    avg_load: float
    sessions: float
    measured_qoe: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.avg_load <= 100.0:
            raise ValueError(f"{self.instance_id}: avg_load must lie in [0, 100]")
        if self.sessions < 0:
            raise ValueError(f"{self.instance_id}: sessions must be >= 0")


@dataclass(frozen=True)
class SolveParams:
    q_min: float
    l_min: float
    l_max: float
    sigma: float = 0.1
    period_hours: float = 1.0 / 60.0
    cross_cloud_moves: bool = False
    # vCPUs per cloud already held by instances outside this problem
    reserved_vcpus: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.l_min < self.l_max <= 100.0:
            raise ValueError("need 0 <= l_min < l_max <= 100")
        if not 1.0 <= self.q_min <= 5.0:
            raise ValueError("q_min must lie in [1, 5]")

    def relax_c3(self) -> "SolveParams":
        return replace(self, l_max=100.0)

    def relax_c4(self) -> "SolveParams":
        return replace(self, l_min=0.0)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    HEURISTIC = "HeuristicFeasible"


@dataclass
class AssignmentSolution:
    assignment: dict[str, str]
    total_cost: float
    avg_qoe: float
    per_instance_load: dict[str, float]
    status: Status
    gap: float | None = None
    nodes: int = 0
    budget_exceeded: bool = False

    @property
    def feasible(self) -> bool:
        return self.status is not Status.INFEASIBLE

    @classmethod
    def infeasible(cls, nodes: int = 0) -> "AssignmentSolution":
        return cls({}, math.inf, math.nan, {}, Status.INFEASIBLE, nodes=nodes)


def estimated_load(inst: InstanceSnapshot, vcpu: int) -> float:
    """Load the instance would show on a flavor with ``vcpu`` cores (linear scaling)."""
    return inst.avg_load * inst.current_flavor.vcpu / vcpu


def qoe_ok(qoe_values: Sequence[float], n: int, q_min: float) -> bool:
    return math.fsum(qoe_values) >= n * q_min - QOE_TOL


class Coefficients:
    """Per (instance, flavor) cost, load and QoE tables.

    Rows follow instance ids in sorted order and columns follow flavor ids in
    sorted order, so positional ties resolve lexicographically.
    """

    def __init__(self, instances: Sequence[InstanceSnapshot], catalog: Catalog, params: SolveParams):
        self.instances = sorted(instances, key=lambda s: s.instance_id)
        self.instance_ids = [s.instance_id for s in self.instances]
        self.catalog = catalog
        self.params = params
        self.flavor_ids = sorted(f.id for f in catalog.flavors)
        flavors = [catalog.flavor(fid) for fid in self.flavor_ids]
        for inst in self.instances:
            if not catalog.has_flavor(inst.current_flavor.id):
                raise UnknownFlavor(inst.current_flavor.id)

        cloud_ids = [c.id for c in catalog.clouds]
        cloud_pos = {cid: k for k, cid in enumerate(cloud_ids)}
        self.cloud_ids = cloud_ids
        self.cost = np.array([f.cost_per_hour for f in flavors])
        self.cost_micro = np.array([round(f.cost_per_hour * MICRO) for f in flavors], dtype=np.int64)
        self.vcpu = np.array([f.vcpu for f in flavors], dtype=np.int64)
        self.cloud = np.array([cloud_pos[f.cloud_id] for f in flavors], dtype=np.int64)
        eta = np.array([catalog.eta(f.id) for f in flavors])
        self.capacity = np.array(
            [c.capacity_vcpus - int(params.reserved_vcpus.get(c.id, 0)) for c in catalog.clouds],
            dtype=np.int64)

        n, p = len(self.instances), len(flavors)
        self.load = np.empty((n, p))
        self.qoe = np.empty((n, p))
        self.admissible = np.zeros((n, p), dtype=bool)
        cap_of = {int(v): rho_max(int(v)) for v in np.unique(self.vcpu)}
        caps = np.array([cap_of[int(v)] for v in self.vcpu])
        vcpu_f = self.vcpu.astype(float)
        bonus = 5.0 * params.sigma * eta
        for i, inst in enumerate(self.instances):
            # same operation order as estimated_load / mos_flavored, so the
            # referee recomputes bit-identical values
            self.load[i] = inst.avg_load * inst.current_flavor.vcpu / vcpu_f
            per_cpu = inst.sessions / vcpu_f
            self.qoe[i] = BASE_MOS - QUAD_COEFF * per_cpu * per_cpu + bonus
            ok = (inst.sessions <= caps) & (self.load[i] > 0) & (self.qoe[i] > 0) & (self.cost > 0)
            if not params.cross_cloud_moves:
                ok &= self.cloud == cloud_pos[inst.cloud_id]
            self.admissible[i] = ok

    def band_mask(self, params: SolveParams | None = None) -> np.ndarray:
        """Admissible entries that also respect the per-instance load band."""
        params = params or self.params
        return self.admissible & (self.load <= params.l_max) & (self.load >= params.l_min)

    def solution(self, cols: Sequence[int], status: Status, **extra) -> AssignmentSolution:
        n = len(self.instances)
        qvals = [float(self.qoe[i, j]) for i, j in enumerate(cols)]
        return AssignmentSolution(
            assignment={self.instance_ids[i]: self.flavor_ids[j] for i, j in enumerate(cols)},
            total_cost=int(sum(int(self.cost_micro[j]) for j in cols)) / MICRO,
            avg_qoe=math.fsum(qvals) / n if n else math.nan,
            per_instance_load={self.instance_ids[i]: float(self.load[i, j]) for i, j in enumerate(cols)},
            status=status, **extra)


def build_coefficients(instances, catalog: Catalog, params: SolveParams) -> Coefficients:
    return Coefficients(instances, catalog, params)


def check_feasibility(assignment, instances: Sequence[InstanceSnapshot], catalog: Catalog,
                      params: SolveParams) -> list[str]:
    """Constraint codes violated by ``assignment`` (empty list when feasible).

    Recomputes every coefficient from the catalog and the QoE model rather
    than trusting solver tables, so it can referee any solver.
    """
    mapping: Mapping = getattr(assignment, "assignment", assignment) or {}
    by_id = {s.instance_id: s for s in instances}
    bad: set[str] = set()

    for iid in by_id:
        fid = mapping.get(iid)
        if fid is None:
            bad.add("C1")
        elif not isinstance(fid, str) or not catalog.has_flavor(fid):
            bad.add("C8")
    if set(mapping) - set(by_id):
        bad.add("C2")

    chosen: list[tuple[InstanceSnapshot, Flavor]] = []
    for iid, inst in sorted(by_id.items()):
        fid = mapping.get(iid)
        if isinstance(fid, str) and catalog.has_flavor(fid):
            chosen.append((inst, catalog.flavor(fid)))

    qvals = []
    used: dict[str, int] = {}
    for inst, fl in chosen:
        load = estimated_load(inst, fl.vcpu)
        q = mos_flavored(inst.sessions, fl.vcpu, catalog.eta(fl.id), params.sigma)
        qvals.append(q)
        if load > params.l_max:
            bad.add("C3")
        if load < params.l_min:
            bad.add("C4")
        if not (fl.cost_per_hour > 0 and load > 0 and q > 0) or inst.sessions > rho_max(fl.vcpu):
            bad.add("C7")
        if not params.cross_cloud_moves and fl.cloud_id != inst.cloud_id:
            bad.add("MOVE")
        used[fl.cloud_id] = used.get(fl.cloud_id, 0) + fl.vcpu

    if by_id and not qoe_ok(qvals, len(by_id), params.q_min):
        bad.add("C5")
    for cloud_id, vcpus in used.items():
        cap = catalog.cloud(cloud_id).capacity_vcpus - int(params.reserved_vcpus.get(cloud_id, 0))
        if vcpus > cap:
            bad.add("C6")
    order = ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "MOVE"]
    return [c for c in order if c in bad]
