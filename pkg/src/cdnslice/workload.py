"""Session workload, client playback dynamics, radio conditions and telemetry."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import OutOfRange, ParseError
from .qoe import PlayoutReport, QoeModelParams, clamp_mos, mos_flavored, mos_from_playout

STREAMS_AT_SATURATION = 6000  # per vCPU
PRB_BANDWIDTH_HZ = 180_000.0


@lru_cache(maxsize=None)
def _packaged_table() -> tuple[float, ...]:
    doc = json.loads(resources.files("cdnslice.data").joinpath("cqi_table.json").read_text())
    return _table_from_doc(doc)


def _table_from_doc(doc: Mapping) -> tuple[float, ...]:
    entries = sorted(doc["entries"], key=lambda e: e["cqi"])
    if [e["cqi"] for e in entries] != list(range(1, 16)):
        raise ParseError("CQI table needs exactly the indices 1..15")
    return tuple(float(e["efficiency"]) for e in entries)


def load_cqi_table(path: str | Path | None = None) -> tuple[float, ...]:
    """Spectral efficiency (bit/s/Hz) for CQI 1..15, from ``path`` or the bundled table."""
    if path is None:
        return _packaged_table()
    return _table_from_doc(json.loads(Path(path).read_text()))


def cqi_to_throughput(cqi: int, cell_load: int, prb_budget: int = 25,
                      table: Sequence[float] | None = None,
                      prb_bandwidth: float = PRB_BANDWIDTH_HZ) -> float:
    """Rough per-user radio capacity in bit/s for a cell shared by ``cell_load`` users."""
    if not 1 <= cqi <= 15:
        raise OutOfRange(f"cqi {cqi} outside 1..15")
    if cell_load < 1:
        raise OutOfRange("cell_load must be >= 1")
    eff = (table or load_cqi_table())[int(cqi) - 1]
    return eff * prb_bandwidth * prb_budget / cell_load


def cpu_util_model(sessions: float, vcpus: int, streams_per_vcpu: float = STREAMS_AT_SATURATION) -> float:
    if vcpus < 1:
        raise ValueError("vcpus must be >= 1")
    return min(100.0, 100.0 * sessions / (streams_per_vcpu * vcpus))


def ram_util_model(sessions: float, ram_mb: int, base_pct: float = 20.0, mb_per_session: float = 0.08) -> float:
    return min(100.0, base_pct + 100.0 * mb_per_session * sessions / ram_mb)


# -- workload ------------------------------------------------------------------------

@dataclass(frozen=True)
class RateProfile:
    """Piecewise-constant profile: ``steps`` are (start time s, value) pairs.

    In ``poisson`` mode the value is an arrival rate (sessions/s); in
    ``concurrent`` mode it is a target number of simultaneous sessions.
    """

    steps: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    mode: str = "poisson"
    mean_duration: float = 300.0

    def __post_init__(self):
        if self.mode not in ("poisson", "concurrent"):
            raise ValueError(f"unknown profile mode {self.mode!r}")
        if any(v < 0 for _, v in self.steps):
            raise ValueError("profile values must be >= 0")
        times = [t for t, _ in self.steps]
        if times != sorted(times):
            raise ValueError("profile steps must be time-ordered")
        if self.mean_duration <= 0:
            raise ValueError("mean_duration must be positive")

    def value(self, t: float) -> float:
        k = bisect.bisect_right([s for s, _ in self.steps], t) - 1
        return self.steps[k][1] if k >= 0 else 0.0


@dataclass
class SessionState:
    user_id: str
    region_id: str
    start_time: float
    end_time: float = math.inf
    current_rung: float = 0.0  # kbps
    cqi: int = 15
    tracked: bool = False
    segment_seconds: float = 2.0
    total_segments: int = 298
    startup_buffer: float = 4.0
    buffer_cap: float = 12.0
    last_downloaded_segment: int = 0
    playing_segment: int = 0
    buffer_level: float = 0.0
    stall_events: list[list[float]] = field(default_factory=list)
    total_stall_time: float = 0.0
    play_time: float = 0.0
    startup_time: float | None = None
    finished_at: float | None = None
    clock: float | None = None
    inflight_bits: float = 0.0
    inflight_rate: float = 0.0
    stalled: bool = False
    downloaded_at: dict[int, float] = field(default_factory=dict)
    segment_rate: dict[int, float] = field(default_factory=dict)
    buffering_dt: dict[int, float] = field(default_factory=dict)
    # mixer window: segments start..frontier are served at mix_rate
    mix_start: int | None = None
    mix_frontier: float = 0.0
    mix_rate: float = 0.0

    def __post_init__(self):
        if self.clock is None:
            self.clock = self.start_time

    @property
    def done(self) -> bool:
        return self.finished_at is not None

    def rate_for(self, k: int) -> float:
        if self.mix_start is not None and self.mix_start <= k <= self.mix_frontier:
            return self.mix_rate
        return self.current_rung

    def window_report(self, now: float, window: float = 16.0) -> PlayoutReport | None:
        """Stall statistics over the trailing window, None until 8 segments have played."""
        if self.play_time < 8 * self.segment_seconds:
            return None
        starts = sum(1 for s, _ in self.stall_events if now - window < s <= now)
        stalled = 0.0
        for s, d in self.stall_events:
            end = s + d
            if self.stalled and s == self.stall_events[-1][0]:
                end = now
            stalled += max(0.0, min(end, now) - max(s, now - window))
        return PlayoutReport(starts * 60.0 / window, min(1.0, stalled / window), window_seconds=window)

    def mos(self, now: float, params: QoeModelParams | None = None) -> float | None:
        report = self.window_report(now)
        return None if report is None else mos_from_playout(report, params or QoeModelParams())


@dataclass(frozen=True)
class PlayoutDelta:
    play_s: float
    stall_s: float
    stalls_started: int
    segments_downloaded: tuple[int, ...]


def step_client(session: SessionState, available_bw: float, dt: float) -> tuple[SessionState, PlayoutDelta]:
    """Advance progressive playback by ``dt`` seconds at ``available_bw`` bit/s.

    One segment is in flight at a time.  Events inside the step (download
    completions, buffer running dry, segment boundaries) are resolved
    exactly rather than at tick granularity.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = session
    t, t_end = s.clock, s.clock + dt
    seg = s.segment_seconds
    play0, stall0 = s.play_time, s.total_stall_time
    starts, got = 0, []
    eps = 1e-9

    while t < t_end - eps and not s.done:
        # start the next download when there is room in the buffer
        if s.inflight_bits <= 0 and s.last_downloaded_segment < s.total_segments \
                and s.buffer_level + seg <= s.buffer_cap + eps:
            k = s.last_downloaded_segment + 1
            s.inflight_rate = s.rate_for(k)
            s.inflight_bits = s.inflight_rate * 1000.0 * seg
        playing = s.startup_time is not None
        horizon = t_end - t
        if s.inflight_bits > 0 and available_bw > 0:
            horizon = min(horizon, s.inflight_bits / available_bw)
        if playing and s.buffer_level > eps:
            horizon = min(horizon, s.buffer_level)
            to_boundary = seg - math.fmod(s.play_time, seg)
            horizon = min(horizon, to_boundary if to_boundary > eps else seg)
            if s.inflight_bits <= 0 and s.last_downloaded_segment < s.total_segments:
                horizon = min(horizon, max(eps, s.buffer_level + seg - s.buffer_cap))
        h = max(horizon, 0.0)

        if s.inflight_bits > 0:
            s.inflight_bits = max(0.0, s.inflight_bits - available_bw * h)
        if playing:
            if s.buffer_level > eps:
                used = min(h, s.buffer_level)
                s.buffer_level -= used
                s.play_time += used
                if used < h:  # ran dry inside the step
                    s.total_stall_time += h - used
            else:
                s.total_stall_time += h
                if s.stalled:
                    s.stall_events[-1][1] += h
        t += h

        if s.inflight_bits <= eps and s.inflight_rate > 0 and s.last_downloaded_segment < s.total_segments:
            s.inflight_bits = 0.0
            k = s.last_downloaded_segment + 1
            s.last_downloaded_segment = k
            s.downloaded_at[k] = t
            s.segment_rate[k] = s.inflight_rate
            s.inflight_rate = 0.0
            s.buffer_level += seg
            got.append(k)
            if s.stalled:
                s.stalled = False
        if s.startup_time is None and (s.buffer_level >= s.startup_buffer - eps
                                       or s.last_downloaded_segment == s.total_segments):
            s.startup_time = t - s.start_time
        if s.startup_time is not None:
            _mark_playing_segment(s, t)
            if s.play_time >= s.total_segments * seg - eps:
                s.finished_at = t
                s.stalled = False
            elif s.buffer_level <= eps and not s.stalled:
                s.buffer_level = 0.0
                s.stalled = True
                s.stall_events.append([t, 0.0])
                starts += 1
    s.clock = t_end
    return s, PlayoutDelta(s.play_time - play0, s.total_stall_time - stall0, starts, tuple(got))


def _mark_playing_segment(s: SessionState, t: float) -> None:
    k = min(s.total_segments, int(math.floor(s.play_time / s.segment_seconds + 1e-9)) + 1)
    if s.play_time >= s.total_segments * s.segment_seconds - 1e-9:
        k = s.total_segments
    while s.playing_segment < k and s.playing_segment < s.last_downloaded_segment:
        s.playing_segment += 1
        done_at = s.downloaded_at.get(s.playing_segment)
        if done_at is not None:
            s.buffering_dt[s.playing_segment] = max(0.0, t - done_at)


def generate_arrivals(region_id: str, profile: RateProfile, clock: float, dt: float,
                      rng: np.random.Generator, active: int = 0, id_prefix: str = "u") -> list[SessionState]:
    """Sessions starting in [clock, clock + dt).

    Poisson mode draws the count from the profile rate and exponential
    holding times.  Concurrent mode tops the population up to the target;
    the caller ends surplus sessions.
    """
    stem = f"{id_prefix}{region_id}-{int(round(clock * 1000))}-"
    value = profile.value(clock)
    if profile.mode == "concurrent":
        count = max(0, int(round(value)) - active)
        return [SessionState(f"{stem}{k}", region_id, clock) for k in range(count)]
    if value <= 0:
        return []
    count = int(rng.poisson(value * dt))
    offsets = np.sort(rng.uniform(0.0, dt, size=count))
    holds = rng.exponential(profile.mean_duration, size=count)
    return [SessionState(f"{stem}{k}", region_id, clock + float(o), clock + float(o + h))
            for k, (o, h) in enumerate(zip(offsets, holds))]


# -- telemetry -----------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceReading:
    cpu_pct: float
    ram_pct: float
    session_count: int
    probe_mos: float


@dataclass(frozen=True)
class CellReading:
    connected_users: int
    cqi_histogram: tuple[int, ...]  # counts for CQI 1..15


@dataclass(frozen=True)
class TelemetrySample:
    timestamp: float
    instances: dict[str, InstanceReading]
    cells: dict[str, CellReading]
    user_mos: dict[str, float]


def instance_reading(sessions: int, vcpu: int, ram_mb: int, ram_base_pct: float = 20.0,
                     ram_mb_per_session: float = 0.08) -> InstanceReading:
    probe = clamp_mos(mos_flavored(sessions, vcpu, 0.0, 0.0))
    return InstanceReading(cpu_util_model(sessions, vcpu),
                           ram_util_model(sessions, ram_mb, ram_base_pct, ram_mb_per_session),
                           int(sessions), probe)


def collect_telemetry(slice_state, sessions: Iterable[SessionState], cells: Mapping[str, tuple[int, Sequence[int]]],
                      clock: float, ram_base_pct: float = 20.0, ram_mb_per_session: float = 0.08,
                      qoe_params: QoeModelParams | None = None) -> TelemetrySample:
    """Per-instance usage and probe MOS, per-cell radio state and per-user MOS.

    ``cells`` maps a cell id to (connected users, CQIs of reporting users).
    """
    instances = {}
    for region in slice_state.regions.values():
        for v in region.active():
            instances[v.instance_id] = instance_reading(v.sessions, v.flavor.vcpu, v.flavor.ram_mb,
                                                        ram_base_pct, ram_mb_per_session)
    cell_out = {}
    for cid, (users, cqis) in sorted(cells.items()):
        hist = [0] * 15
        for q in cqis:
            hist[int(q) - 1] += 1
        cell_out[cid] = CellReading(int(users), tuple(hist))
    user_mos = {}
    for s in sessions:
        m = s.mos(clock, qoe_params)
        if m is not None:
            user_mos[s.user_id] = m
    return TelemetrySample(clock, instances, cell_out, user_mos)


# -- trace input ---------------------------------------------------------------------

TRACE_COLUMNS = ("time_s", "region_id", "arrival_rate_per_s", "mean_cell_cqi", "cell_users",
                 "background_bw_fraction")


@dataclass(frozen=True)
class TraceRow:
    time_s: float
    region_id: str
    arrival_rate_per_s: float
    mean_cell_cqi: int
    cell_users: int
    background_bw_fraction: float


def load_workload_trace(path: str | Path) -> list[TraceRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ParseError(f"trace columns must be {','.join(TRACE_COLUMNS)}")
        for n, rec in enumerate(reader, start=2):
            try:
                row = TraceRow(float(rec["time_s"]), rec["region_id"], float(rec["arrival_rate_per_s"]),
                               int(rec["mean_cell_cqi"]), int(rec["cell_users"]),
                               float(rec["background_bw_fraction"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{n}: {exc}") from None
            if not 0.0 <= row.background_bw_fraction < 1.0 or not 1 <= row.mean_cell_cqi <= 15:
                raise ParseError(f"{path}:{n}: value out of range")
            rows.append(row)
    return sorted(rows, key=lambda r: (r.region_id, r.time_s))


@dataclass(frozen=True)
class RadioProfile:
    """Piecewise-constant cell conditions: (start time, cqi, cell users, background fraction)."""

    steps: tuple[tuple[float, int, int, float], ...] = ((0.0, 15, 1, 0.0),)
    prb_budget: int = 25

    def at(self, t: float) -> tuple[int, int, float]:
        k = bisect.bisect_right([s[0] for s in self.steps], t) - 1
        _, cqi, users, bg = self.steps[max(k, 0)]
        return cqi, users, bg

    def bandwidth(self, t: float, table: Sequence[float] | None = None) -> float:
        cqi, users, bg = self.at(t)
        return cqi_to_throughput(cqi, users, self.prb_budget, table) * (1.0 - bg)


def profiles_from_trace(rows: Sequence[TraceRow], mean_duration: float = 300.0,
                        prb_budget: int = 25) -> dict[str, tuple[RateProfile, RadioProfile]]:
    out = {}
    for rid in sorted({r.region_id for r in rows}):
        mine = [r for r in rows if r.region_id == rid]
        rate = RateProfile(tuple((r.time_s, r.arrival_rate_per_s) for r in mine), "poisson", mean_duration)
        radio = RadioProfile(tuple((r.time_s, r.mean_cell_cqi, r.cell_users, r.background_bw_fraction)
                                   for r in mine), prb_budget)
        out[rid] = (rate, radio)
    return out
