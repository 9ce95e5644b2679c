"""Deterministic tick-driven run of one scenario across all modules."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .edm.algorithm import DecisionKind, SolveBudget, TriggerKind, edm_step, threshold_precheck
from .qoe import clamp_mos
from .slices import (Phase, SliceState, advance, apply_decision, create_slice, instance_snapshots,
                     snapshot_metrics)
from .transcoding import JobPhase, TranscodeJob, TranscodingController
from .workload import (RadioProfile, RateProfile, SessionState, collect_telemetry, cqi_to_throughput,
                       generate_arrivals, instance_reading, step_client)

TIMESERIES_COLUMNS = ("t_s", "region", "instances", "vcpus", "cost_usd_h", "mos_mean", "mos_p10", "load_mean")
HOURS_PER_MONTH = 730.0


@dataclass
class RegionCounters:
    arrivals: int = 0
    completions: int = 0
    aborts: int = 0

    def expected_active(self) -> int:
        return self.arrivals - self.completions - self.aborts


@dataclass
class Population:
    """Sessions of one region: a departure heap plus arrival order for concurrent trimming."""

    sessions: dict[str, SessionState] = field(default_factory=dict)
    departures: list[tuple[float, str]] = field(default_factory=list)
    counters: RegionCounters = field(default_factory=RegionCounters)

    def add(self, s: SessionState) -> None:
        self.sessions[s.user_id] = s
        self.counters.arrivals += 1
        if math.isfinite(s.end_time):
            heapq.heappush(self.departures, (s.end_time, s.user_id))

    def remove(self, user_id: str) -> SessionState | None:
        s = self.sessions.pop(user_id, None)
        if s is not None:
            self.counters.completions += 1
        return s

    def __len__(self) -> int:
        return len(self.sessions)


@dataclass
class RunReport:
    name: str
    seed: int
    timeseries: list[dict] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    decisions: list[tuple[float, str, object]] = field(default_factory=list)
    triggers: list[tuple[float, str, TriggerKind]] = field(default_factory=list)
    jobs: list[TranscodeJob] = field(default_factory=list)
    job_region: dict[str, str] = field(default_factory=dict)
    episodes: list[list[float]] = field(default_factory=list)
    user_trace: dict[str, list[tuple[float, float | None, float, int, float]]] = field(default_factory=dict)
    tracked: dict[str, SessionState] = field(default_factory=dict)
    state: SliceState | None = None
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return not self.violations and self.failure is None


def _region_rngs(seed: int, regions: list[str]) -> dict[str, np.random.Generator]:
    return {rid: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
            for k, rid in enumerate(regions)}


def _route(state: SliceState, region_id: str, total: int) -> None:
    """Split ``total`` sessions over the active instances in proportion to their vCPUs."""
    region = state.regions[region_id]
    active = sorted(region.active(), key=lambda v: v.instance_id)
    for v in region.instances:
        if v.phase is not Phase.ACTIVE:
            v.sessions = 0
    if not active:
        return
    weights = np.array([v.flavor.vcpu for v in active], dtype=float)
    exact = total * weights / weights.sum()
    base = np.floor(exact).astype(int)
    left = total - int(base.sum())
    order = np.lexsort((np.arange(len(active)), -(exact - base)))
    base[order[:left]] += 1
    for v, n in zip(active, base):
        v.sessions = int(n)


def run_scenario(config: ScenarioConfig) -> RunReport:
    cfg = config
    req = cfg.slice_request
    regions = [r.region_id for r in req.regions]
    report = RunReport(cfg.name, cfg.seed)
    state = create_slice(req, cfg.catalog, cfg.timing, clock=0.0)
    report.state = state
    rngs = _region_rngs(cfg.seed, regions)
    pops = {rid: Population() for rid in regions}
    workload = {rid: cfg.workload.get(rid, RateProfile()) for rid in regions}
    radio = {rid: cfg.radio.get(rid, RadioProfile()) for rid in regions}
    controllers = {}
    if cfg.transcoding.enabled:
        for rid in regions:
            tc = cfg.transcoding
            controllers[rid] = TranscodingController(
                tc.ladder, tc.policy, tc.timing, tc.edge_pool(), thresholds=req.trigger_thresholds(rid),
                cqi_seeding=tc.cqi_seeding, asset_scope=tc.asset_scope, asset_id=f"{rid}-asset")
            controllers[rid].cache.enabled = tc.cache
    pending_users = sorted(cfg.tracked_users, key=lambda u: (u.start_s, u.user_id))
    tracked = report.tracked

    dt = cfg.tick_s
    period_ticks = int(round(req.monitoring_period / dt))
    n_ticks = int(math.ceil(cfg.duration_s / dt - 1e-9))
    rum_ticks = max(1, int(round(min(cfg.rum_window_s, req.monitoring_period) / dt)))
    recent: dict[str, deque] = {}
    last_cost = 0.0
    last_progress: dict[str, tuple[int, int]] = {}

    def log(t: float, rid: str, text: str) -> None:
        state.record(t, rid, text)

    for k in range(n_ticks):
        t = k * dt
        t_next = (k + 1) * dt
        advance(state, t)

        for rid in regions:
            pop, region = pops[rid], state.regions[rid]
            serving = region.serving()
            # departures due inside this tick
            while pop.departures and pop.departures[0][0] < t_next:
                _, uid = heapq.heappop(pop.departures)
                if uid in pop.sessions and not pop.sessions[uid].tracked:
                    pop.remove(uid)
            prof = workload[rid]
            if prof.mode == "concurrent":
                target = int(round(prof.value(t)))
                untracked = [uid for uid, s in pop.sessions.items() if not s.tracked]
                surplus = len(pop) - target
                for uid in reversed(untracked[max(0, len(untracked) - max(0, surplus)):]):
                    pop.remove(uid)
                if serving:
                    for s in generate_arrivals(rid, prof, t, dt, rngs[rid], active=len(pop)):
                        pop.add(s)
            else:
                for s in generate_arrivals(rid, prof, t, dt, rngs[rid]):
                    pop.add(s)
                    if not serving:
                        pop.sessions.pop(s.user_id)
                        pop.counters.aborts += 1
            for u in [u for u in pending_users if u.region_id == rid and u.start_s < t_next]:
                pending_users.remove(u)
                s = SessionState(u.user_id, rid, u.start_s, current_rung=u.rung_kbps, tracked=True,
                                 segment_seconds=u.segment_s, total_segments=u.segments,
                                 startup_buffer=u.startup_buffer_s, buffer_cap=u.buffer_cap_s)
                pop.add(s)
                tracked[u.user_id] = s
                report.user_trace[u.user_id] = []
            _route(state, rid, len(pop))

            for v in region.active():
                r = instance_reading(v.sessions, v.flavor.vcpu, v.flavor.ram_mb, cfg.ram_base_pct,
                                     cfg.ram_mb_per_session)
                v.cpu_pct, v.ram_pct, v.probe_mos = r.cpu_pct, r.ram_pct, r.probe_mos
                recent.setdefault(v.instance_id, deque(maxlen=rum_ticks)).append(
                    (r.cpu_pct, float(v.sessions), r.probe_mos))

            # tracked clients and their transcoding loop
            cqi, users, bg = radio[rid].at(t)
            for uid in sorted(u for u, s in tracked.items() if s.region_id == rid):
                s = tracked[uid]
                if s.done or s.start_time >= t_next:
                    continue
                bw = cqi_to_throughput(cqi, users, radio[rid].prb_budget) * (1.0 - bg)
                step_client(s, bw, t_next - max(t, s.clock))
                mos = s.mos(t_next, cfg.qoe)
                report.user_trace[uid].append((t_next, mos, s.buffer_level, s.last_downloaded_segment,
                                               s.current_rung))
                ctrl = controllers.get(rid)
                if ctrl is not None:
                    active = sorted(region.active(), key=lambda v: v.instance_id)
                    reading = instance_reading(active[0].sessions, active[0].flavor.vcpu, active[0].flavor.ram_mb,
                                               cfg.ram_base_pct, cfg.ram_mb_per_session) if active else None
                    estimate = cqi_to_throughput(cqi, users, radio[rid].prb_budget)
                    for line in ctrl.observe(s, mos, reading, t_next, estimate):
                        log(t_next, rid, line)
                if s.done:
                    pop.remove(uid)
                    _route(state, rid, len(pop))
            ctrl = controllers.get(rid)
            if ctrl is not None:
                for line in ctrl.advance(t_next, tracked):
                    log(t_next, rid, line)

        # in-run invariants
        for rid in regions:
            _check_tick(report, state, rid, pops[rid], t_next, last_progress)
        cost = state.accumulated_cost(t_next)
        if cost < last_cost - 1e-12:
            report.violations.append(f"t={t_next}: accumulated cost decreased")
        last_cost = cost

        if (k + 1) % period_ticks == 0:
            _period(cfg, report, state, t_next, regions, pops, recent, tracked, controllers, log)

    for rid, ctrl in controllers.items():
        report.jobs.extend(ctrl.jobs)
        report.job_region.update({j.job_id: rid for j in ctrl.jobs})
        report.episodes.extend(ctrl.episodes)
        report.episodes.extend(w.episode_rungs for w in ctrl.users.values() if w.in_episode)
    _check_end(report, state, n_ticks * dt, tracked)
    report.log_lines = [e.line() for e in state.log]
    report.summary = _summary(report, state, regions, n_ticks * dt)
    return report


def _period(cfg, report, state, t, regions, pops, recent, tracked, controllers, log):
    req = cfg.slice_request
    budget = SolveBudget(cfg.solver.exact_max_n, cfg.solver.node_limit)
    cells = {rid: (cfg.radio[rid].at(t)[1] if rid in cfg.radio else 1,
                   [cfg.radio[rid].at(t)[0] if rid in cfg.radio else 15 for s in tracked.values()
                    if s.region_id == rid and not s.done]) for rid in regions}
    sample = collect_telemetry(state, [s for s in tracked.values() if not s.done], cells, t,
                               cfg.ram_base_pct, cfg.ram_mb_per_session, cfg.qoe)
    metrics = snapshot_metrics(state, t)
    for rid in regions:
        region = state.regions[rid]
        m = metrics[rid]
        user_mos = sorted(sample.user_mos[s.user_id] for s in tracked.values()
                          if s.region_id == rid and s.user_id in sample.user_mos)
        probe = sorted(clamp_mos(v.probe_mos) for v in region.active())
        p10_pool = user_mos or probe or [5.0]
        report.timeseries.append({
            "t_s": t, "region": rid, "instances": m.instances, "vcpus": m.vcpus,
            "cost_usd_h": m.cost_usd_h, "mos_mean": m.mos_mean,
            "mos_p10": float(np.percentile(p10_pool, 10, method="lower")), "load_mean": m.load_mean})

        readings = {v.instance_id: sample.instances[v.instance_id] for v in region.active()}
        if not readings:
            continue
        kind = threshold_precheck(readings, req.trigger_thresholds(rid))
        if kind is TriggerKind.HEALTHY:
            continue
        report.triggers.append((t, rid, kind))
        if kind is TriggerKind.QUALITY_NOT_LOAD:
            # per-user issues are handled by the transcoding watchdog
            log(t, rid, f"trigger {kind.value} routed to transcoding")
            continue
        if len(pops[rid]) == 0 or region.changeover_pending():
            continue
        stats = {}
        for v in region.active():
            window = recent.get(v.instance_id) or [(v.cpu_pct, float(v.sessions), v.probe_mos)]
            stats[v.instance_id] = tuple(math.fsum(x[i] for x in window) / len(window) for i in range(3))
        snaps = instance_snapshots(region, stats)
        if any(s.sessions <= 0 or s.avg_load <= 0 for s in snaps):
            continue
        reserved = state.used_vcpus(exclude_region=rid)
        params = req.solve_params(rid, cross_cloud_moves=cfg.solver.cross_cloud_moves, reserved_vcpus=reserved)
        decision = edm_step(snaps, cfg.catalog, params, budget, cfg.solver.max_depth)
        decision.epoch = region.epoch
        if decision.solution is not None and decision.solution.feasible:
            if decision.solution.avg_qoe < params.q_min - 1e-9:
                report.violations.append(f"t={t}: EDM solution mean QoE below q_min")
        log(t, rid, f"trigger {kind.value}")
        apply_decision(state, rid, decision, t)
        report.decisions.append((t, rid, decision))


def _check_tick(report: RunReport, state: SliceState, rid: str, pop: Population, t: float,
                last_progress: dict) -> None:
    region = state.regions[rid]
    c = pop.counters
    if c.expected_active() != len(pop):
        report.violations.append(f"t={t} {rid}: session conservation broken")
    if region.active():
        routed = sum(v.sessions for v in region.active())
        if routed != len(pop):
            report.violations.append(f"t={t} {rid}: routed {routed} of {len(pop)} sessions")
    if any(v.phase is Phase.DRAINING and v.sessions for v in region.instances):
        report.violations.append(f"t={t} {rid}: draining instance holds sessions")
    started = any(v.active_t is not None for v in region.instances)
    if started and not region.serving() and region.alive():
        report.violations.append(f"t={t} {rid}: no serving instance during changeover")
    for s in pop.sessions.values():
        if not s.tracked:
            continue
        if s.playing_segment > s.last_downloaded_segment:
            report.violations.append(f"t={t} {s.user_id}: playing ahead of download")
        prev = last_progress.get(s.user_id, (0, 0))
        if s.playing_segment < prev[0] or s.last_downloaded_segment < prev[1]:
            report.violations.append(f"t={t} {s.user_id}: segment index went backwards")
        last_progress[s.user_id] = (s.playing_segment, s.last_downloaded_segment)
        if s.startup_time is not None:
            wall = (s.finished_at if s.done else s.clock) - s.start_time - s.startup_time
            if abs(s.play_time + s.total_stall_time - wall) > 1e-6:
                report.violations.append(f"t={t} {s.user_id}: playback time accounting off")


def _check_end(report: RunReport, state: SliceState, t_end: float, tracked) -> None:
    for job in report.jobs:
        if job.segments_to_replace is not None and job.segments_to_replace[0] <= job.last_downloaded_at_mix:
            report.violations.append(f"{job.job_id}: mixer replaced an already downloaded segment")
    for ep in report.episodes:
        if any(b >= a for a, b in zip(ep, ep[1:])):
            report.violations.append(f"rung sequence {ep} not strictly decreasing")
    times = [e.t for e in state.log]
    if times != sorted(times):
        report.violations.append("decision log out of order")
    billed = math.fsum(v.flavor.cost_per_hour * v.billed_hours(t_end) for v in state.all_instances())
    if abs(billed - state.accumulated_cost(t_end)) > 1e-9:
        report.violations.append("cost accounting mismatch")


def _summary(report: RunReport, state: SliceState, regions, t_end: float) -> list[dict]:
    rows = []
    hours = t_end / 3600.0
    for rid in regions:
        series = [r for r in report.timeseries if r["region"] == rid]
        total = math.fsum(v.flavor.cost_per_hour * v.billed_hours(t_end) for v in state.regions[rid].instances)
        mean_h = total / hours if hours > 0 else 0.0
        decided = [d for (_, r, d) in report.decisions if r == rid]
        count = lambda kind: sum(1 for d in decided if d.kind is kind)  # noqa: E731
        inst = [r["instances"] for r in series] or [0]
        rows.append({
            "region": rid,
            "duration_h": hours,
            "total_cost_usd": total,
            "mean_cost_usd_h": mean_h,
            "monthly_cost_usd_730h": mean_h * HOURS_PER_MONTH,
            "mean_instances": sum(inst) / len(inst),
            "monthly_cost_per_instance_usd": mean_h * HOURS_PER_MONTH / max(1e-12, sum(inst) / len(inst))
            if any(inst) else 0.0,
            "reallocations": count(DecisionKind.REALLOCATE),
            "scale_outs": count(DecisionKind.SCALE_OUT),
            "scale_ins": count(DecisionKind.SCALE_IN),
            "alarms": count(DecisionKind.ALARM),
            "transcode_jobs": sum(1 for j in report.jobs if report.job_region.get(j.job_id) == rid
                                  and j.phase is not JobPhase.CANCELLED),
            "mos_mean": (sum(r["mos_mean"] for r in series) / len(series)) if series else 5.0,
            "invariant_violations": len(report.violations),
        })
    return rows
