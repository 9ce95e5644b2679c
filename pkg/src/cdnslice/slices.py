"""Slice lifecycle: dimensioning, instance bookkeeping and changeover timing."""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from .catalog import Catalog, Flavor
from .edm.algorithm import DecisionKind, EdmDecision, Thresholds
from .edm.model import InstanceSnapshot, SolveParams
from .errors import CapacityError, StaleDecision, ValidationError
from .qoe import clamp_mos, max_streams_for_qoe


@dataclass(frozen=True)
class RegionDemand:
    region_id: str
    max_streams: int
    q_min: float

    def __post_init__(self):
        if self.max_streams < 0:
            raise ValidationError(f"region {self.region_id}: max_streams must be >= 0")


@dataclass(frozen=True)
class SliceThresholds:
    l_min: float = 25.0
    l_max: float = 90.0
    cpu_up: float = 90.0
    ram_up: float = 90.0
    cpu_down: float = 25.0
    ram_down: float = 65.0


@dataclass(frozen=True)
class SliceRequest:
    customer_id: str
    regions: tuple[RegionDemand, ...]
    duration_h: float = 24.0
    thresholds: SliceThresholds = SliceThresholds()
    monitoring_period: float = 60.0
    sigma: float = 0.1

    def __post_init__(self):
        if not self.regions:
            raise ValidationError("a slice needs at least one region")
        ids = [r.region_id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate region id")
        if self.monitoring_period <= 0:
            raise ValidationError("monitoring_period must be positive")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValidationError("sigma must lie in [0, 1]")
        t = self.thresholds
        if not 0.0 <= t.l_min < t.l_max <= 100.0:
            raise ValidationError("need 0 <= l_min < l_max <= 100")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SliceRequest":
        try:
            regions = tuple(RegionDemand(str(r["region_id"]), int(r["max_streams"]), float(r["q_min"]))
                            for r in doc["regions"])
            return cls(customer_id=str(doc["customer_id"]), regions=regions,
                       duration_h=float(doc.get("duration_h", 24.0)),
                       thresholds=SliceThresholds(**doc.get("thresholds", {})),
                       monitoring_period=float(doc.get("monitoring_period", 60.0)),
                       sigma=float(doc.get("sigma", 0.1)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad slice request: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def region(self, region_id: str) -> RegionDemand:
        for r in self.regions:
            if r.region_id == region_id:
                return r
        raise KeyError(region_id)

    def trigger_thresholds(self, region_id: str) -> Thresholds:
        t = self.thresholds
        return Thresholds(t.cpu_up, t.ram_up, t.cpu_down, t.ram_down, self.region(region_id).q_min)

    def solve_params(self, region_id: str, **overrides) -> SolveParams:
        t = self.thresholds
        return SolveParams(q_min=self.region(region_id).q_min, l_min=t.l_min, l_max=t.l_max,
                           sigma=self.sigma, period_hours=self.monitoring_period / 3600.0, **overrides)


@dataclass(frozen=True)
class ChangeoverTiming:
    boot_delay: float = 10.0
    drain_sleep: float = 8.0

    def __post_init__(self):
        if self.boot_delay < 0 or self.drain_sleep < 0:
            raise ValidationError("changeover delays must be non-negative")

    @property
    def total_changeover(self) -> float:
        return self.boot_delay + self.drain_sleep


class Phase(str, enum.Enum):
    BOOTING = "Booting"
    ACTIVE = "Active"
    DRAINING = "Draining"
    TERMINATED = "Terminated"


@dataclass
class VnfInstance:
    instance_id: str
    region_id: str
    flavor: Flavor
    created_t: float
    phase: Phase = Phase.BOOTING
    active_t: float | None = None
    drain_t: float | None = None
    end_t: float | None = None
    replaces: str | None = None
    sessions: int = 0
    cpu_pct: float = 0.0
    ram_pct: float = 0.0
    probe_mos: float = 5.0

    @property
    def cloud_id(self) -> str:
        return self.flavor.cloud_id

    @property
    def alive(self) -> bool:
        return self.phase is not Phase.TERMINATED

    def billed_hours(self, clock: float) -> float:
        end = clock if self.end_t is None else min(self.end_t, clock)
        return max(0.0, end - self.created_t) / 3600.0


@dataclass
class RegionPlan:
    region_id: str
    n_star: int
    vcpus: int
    flavors: list[Flavor]

    @property
    def dormant(self) -> bool:
        return not self.flavors


@dataclass
class RegionState:
    region_id: str
    instances: list[VnfInstance] = field(default_factory=list)
    epoch: int = 0
    applied: set[int] = field(default_factory=set)

    def active(self) -> list[VnfInstance]:
        return [v for v in self.instances if v.phase is Phase.ACTIVE]

    def alive(self) -> list[VnfInstance]:
        return [v for v in self.instances if v.alive]

    def serving(self) -> list[VnfInstance]:
        return [v for v in self.instances if v.phase in (Phase.ACTIVE, Phase.DRAINING)]

    def changeover_pending(self) -> bool:
        return any(v.phase in (Phase.BOOTING, Phase.DRAINING) for v in self.instances)

    @property
    def dormant(self) -> bool:
        return not self.alive()


@dataclass(order=True)
class LifecycleEvent:
    t: float
    seq: int
    kind: str = field(compare=False)
    region_id: str = field(compare=False)
    instance_id: str = field(compare=False)


@dataclass
class LogEntry:
    t: float
    region_id: str
    epoch: int
    text: str

    def line(self) -> str:
        return f"t={self.t:.1f} region={self.region_id} epoch={self.epoch} {self.text}"


@dataclass
class SliceState:
    slice_id: str
    request: SliceRequest
    catalog: Catalog
    timing: ChangeoverTiming
    regions: dict[str, RegionState]
    log: list[LogEntry] = field(default_factory=list)
    events: list[LifecycleEvent] = field(default_factory=list)
    _seq: itertools.count = field(default_factory=itertools.count, repr=False)
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1), repr=False)

    def instance(self, instance_id: str) -> VnfInstance:
        for region in self.regions.values():
            for v in region.instances:
                if v.instance_id == instance_id:
                    return v
        raise KeyError(instance_id)

    def all_instances(self) -> list[VnfInstance]:
        return [v for r in self.regions.values() for v in r.instances]

    def accumulated_cost(self, clock: float) -> float:
        return math.fsum(v.flavor.cost_per_hour * v.billed_hours(clock) for v in self.all_instances())

    def routing_table(self) -> dict[str, list[str]]:
        return {rid: [v.instance_id for v in r.active()] for rid, r in self.regions.items()}

    def record(self, t: float, region_id: str, text: str) -> None:
        if self.log and t < self.log[-1].t:
            raise ValueError("log entries must be appended in time order")
        self.log.append(LogEntry(t, region_id, self.regions[region_id].epoch, text))

    def schedule(self, t: float, kind: str, region_id: str, instance_id: str) -> LifecycleEvent:
        ev = LifecycleEvent(t, next(self._seq), kind, region_id, instance_id)
        heapq.heappush(self.events, ev)
        return ev

    def launch(self, region_id: str, flavor: Flavor, clock: float, replaces: str | None = None) -> VnfInstance:
        inst = VnfInstance(f"{region_id}-vnf{next(self._ids)}", region_id, flavor, clock, replaces=replaces)
        self.regions[region_id].instances.append(inst)
        self.schedule(clock + self.timing.boot_delay, "activate", region_id, inst.instance_id)
        return inst

    def used_vcpus(self, exclude_region: str | None = None) -> dict[str, int]:
        used: dict[str, int] = {}
        for rid, region in self.regions.items():
            if rid == exclude_region:
                continue
            for v in region.alive():
                used[v.cloud_id] = used.get(v.cloud_id, 0) + v.flavor.vcpu
        return used


def _cover_in_cloud(flavors: Sequence[Flavor], need: int, capacity: int) -> tuple[int, list[Flavor]] | None:
    """Cheapest multiset of flavors with vcpu total in [need, capacity] (micro-USD, flavors)."""
    if need > capacity:
        return None
    inf = math.inf
    best = [inf] * (capacity + 1)
    pick: list[Flavor | None] = [None] * (capacity + 1)
    best[0] = 0
    options = sorted(flavors, key=lambda f: (f.vcpu, f.cost_per_hour, f.id))
    for total in range(1, capacity + 1):
        for f in options:
            if f.vcpu > total:
                break
            c = best[total - f.vcpu] + round(f.cost_per_hour * 1_000_000)
            if c < best[total]:
                best[total], pick[total] = c, f
    feasible = [(best[t], t) for t in range(need, capacity + 1) if best[t] < inf]
    if not feasible:
        return None
    cost, total = min(feasible)
    chosen = []
    while total > 0:
        f = pick[total]
        chosen.append(f)
        total -= f.vcpu
    return int(cost), sorted(chosen, key=lambda f: (-f.vcpu, f.id))


def dimension_slice(request: SliceRequest, catalog: Catalog | None = None,
                    used_vcpus: Mapping[str, int] | None = None) -> dict[str, RegionPlan]:
    """Per-region vCPU budget and, given a catalog, the cheapest flavors covering it.

    Each region is served from a single cloud.  Regions are planned in
    request order and consume capacity as they go.
    """
    used = dict(used_vcpus or {})
    plans = {}
    for region in request.regions:
        n_star = max_streams_for_qoe(region.q_min)
        if region.max_streams == 0:
            plans[region.region_id] = RegionPlan(region.region_id, n_star, 0, [])
            continue
        vcpus = max(1, math.ceil(region.max_streams / n_star))
        flavors: list[Flavor] = []
        if catalog is not None:
            best = None
            for cloud in catalog.clouds:
                spare = cloud.capacity_vcpus - used.get(cloud.id, 0)
                cover = _cover_in_cloud(catalog.flavors_in(cloud.id), vcpus, spare)
                if cover is not None and (best is None or cover[0] < best[0]):
                    best = cover
            if best is None:
                raise CapacityError(f"region {region.region_id}: no cloud can host {vcpus} vCPUs")
            flavors = best[1]
            for f in flavors:
                used[f.cloud_id] = used.get(f.cloud_id, 0) + f.vcpu
        plans[region.region_id] = RegionPlan(region.region_id, n_star, vcpus, flavors)
    return plans


def create_slice(request: SliceRequest, catalog: Catalog, timing: ChangeoverTiming | None = None,
                 clock: float = 0.0, slice_id: str = "slice-1",
                 used_vcpus: Mapping[str, int] | None = None) -> SliceState:
    timing = timing or ChangeoverTiming()
    plans = dimension_slice(request, catalog, used_vcpus)
    state = SliceState(slice_id, request, catalog, timing,
                       {r.region_id: RegionState(r.region_id) for r in request.regions})
    for rid, plan in plans.items():
        for f in plan.flavors:
            state.launch(rid, f, clock)
        if plan.dormant:
            state.record(clock, rid, "dimension dormant (no demand)")
        else:
            state.record(clock, rid, f"dimension n_star={plan.n_star} vcpus={plan.vcpus} "
                                     f"flavors={','.join(f.id for f in plan.flavors)}")
    return state


def advance(state: SliceState, clock: float) -> list[LifecycleEvent]:
    """Fire every lifecycle event due at or before ``clock``."""
    fired = []
    while state.events and state.events[0].t <= clock + 1e-9:
        ev = heapq.heappop(state.events)
        inst = state.instance(ev.instance_id)
        if ev.kind == "activate" and inst.phase is Phase.BOOTING:
            inst.phase, inst.active_t = Phase.ACTIVE, ev.t
            state.record(ev.t, inst.region_id, f"active instance={inst.instance_id} flavor={inst.flavor.id}")
            if inst.replaces is not None:
                _start_drain(state, state.instance(inst.replaces), ev.t)
        elif ev.kind == "terminate" and inst.phase is Phase.DRAINING:
            inst.phase, inst.end_t = Phase.TERMINATED, ev.t
            inst.sessions = 0
            state.record(ev.t, inst.region_id, f"released instance={inst.instance_id}")
        fired.append(ev)
    return fired


def _start_drain(state: SliceState, inst: VnfInstance, t: float) -> None:
    if inst.phase not in (Phase.ACTIVE, Phase.BOOTING):
        return
    inst.phase, inst.drain_t = Phase.DRAINING, t
    inst.sessions = 0  # never routed new sessions; its clients move to the active pool
    state.schedule(t + state.timing.drain_sleep, "terminate", inst.region_id, inst.instance_id)


def apply_decision(state: SliceState, region_id: str, decision: EdmDecision, clock: float,
                   timing: ChangeoverTiming | None = None) -> list[LifecycleEvent]:
    """Turn an elasticity decision into instance launches and drains.

    Flavor changes are realized as boot-new / drain-old: the replacement
    boots, and the old instance drains once it is active.  Re-applying a
    decision for an epoch already applied is a no-op.
    """
    if timing is not None:
        state.timing = timing
    region = state.regions[region_id]
    if decision.epoch in region.applied:
        return []
    if decision.epoch != region.epoch:
        raise StaleDecision(f"decision for epoch {decision.epoch}, region is at {region.epoch}")
    seen = {e.seq for e in state.events}

    kind = decision.kind
    if kind is DecisionKind.SCALE_IN and len(region.active()) - len(decision.removed) < 1:
        state.record(clock, region_id, "Alarm reason='scale-in would leave no active instance'")
        _close_epoch(region, decision)
        return []
    state.record(clock, region_id, decision.summary() + (f" trace=[{'; '.join(decision.trace)}]"
                                                         if decision.trace else ""))
    if kind in (DecisionKind.REALLOCATE, DecisionKind.SCALE_OUT, DecisionKind.SCALE_IN):
        current = {v.instance_id: v for v in region.alive()}
        for victim in decision.removed:
            if victim in current:
                _start_drain(state, current[victim], clock)
        for snap in decision.instances:
            target = state.catalog.flavor(decision.solution.assignment[snap.instance_id])
            old = current.get(snap.instance_id)
            if old is None:
                state.launch(region_id, target, clock)
            elif old.flavor.id != target.id:
                state.launch(region_id, target, clock, replaces=old.instance_id)
    _close_epoch(region, decision)
    return sorted(e for e in state.events if e.seq not in seen)


def _close_epoch(region: RegionState, decision: EdmDecision) -> None:
    region.applied.add(decision.epoch)
    region.epoch += 1


def instance_snapshots(region: RegionState, stats: Mapping[str, tuple[float, float, float]]) -> list[InstanceSnapshot]:
    """EDM inputs for the active instances from per-instance (load, sessions, mos) period means."""
    out = []
    for v in region.active():
        load, sessions, mos = stats.get(v.instance_id, (v.cpu_pct, float(v.sessions), v.probe_mos))
        out.append(InstanceSnapshot(v.instance_id, v.cloud_id, v.flavor, min(100.0, max(0.0, load)),
                                    max(0.0, sessions), mos))
    return out


@dataclass(frozen=True)
class RegionMetrics:
    region_id: str
    instances: int
    vcpus: int
    cost_usd: float
    cost_usd_h: float
    mos_mean: float
    load_mean: float


def snapshot_metrics(state: SliceState, clock: float) -> dict[str, RegionMetrics]:
    out = {}
    for rid, region in state.regions.items():
        alive = region.alive()
        active = region.active()
        sessions = sum(v.sessions for v in active)
        if active and sessions > 0:
            mos = sum(clamp_mos(v.probe_mos) * v.sessions for v in active) / sessions
        else:
            mos = 5.0
        load = sum(v.cpu_pct for v in active) / len(active) if active else 0.0
        out[rid] = RegionMetrics(
            rid, len(alive), sum(v.flavor.vcpu for v in alive),
            math.fsum(v.flavor.cost_per_hour * v.billed_hours(clock) for v in region.instances),
            sum(v.flavor.cost_per_hour for v in alive), mos, load)
    return out
