"""Per-user stepwise bitrate reduction through on-demand edge transcoders."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .edm.algorithm import Thresholds
from .errors import AlreadyLowest, ResourceUnavailable
from .workload import SessionState


@dataclass(frozen=True)
class BitrateLadder:
    rungs: tuple[float, ...]  # kbps, highest first

    def __post_init__(self):
        if len(self.rungs) < 2:
            raise ValueError("a ladder needs at least two rungs")
        if any(a <= b for a, b in zip(self.rungs, self.rungs[1:])):
            raise ValueError("ladder rungs must be strictly decreasing")

    @property
    def lowest(self) -> float:
        return self.rungs[-1]

    def index(self, rung: float) -> int:
        try:
            return self.rungs.index(rung)
        except ValueError:
            raise ValueError(f"{rung} kbps is not on the ladder") from None


@dataclass(frozen=True)
class TriggerPolicy:
    mos_threshold: float = 3.5
    window_samples: int = 4
    cooldown: float = 60.0
    idle_terminate: float = 120.0
    hysteresis: float = 0.3
    safety_factor: float = 0.8

    def __post_init__(self):
        if not 1.0 < self.mos_threshold < 5.0:
            raise ValueError("mos_threshold must lie in (1, 5)")
        if self.window_samples < 1:
            raise ValueError("window_samples must be >= 1")
        if self.cooldown < 0 or self.idle_terminate < 0:
            raise ValueError("cooldown and idle_terminate must be >= 0")


def should_transcode(user_mos_window: Sequence[float], instance_telemetry, policy: TriggerPolicy,
                     last_trigger_time: float | None, clock: float, at_lowest: bool = False,
                     thresholds: Thresholds | None = None) -> tuple[bool, str]:
    """Whether a user's low QoE is an individual issue worth a rung drop."""
    if not user_mos_window:
        raise ValueError("empty MOS window")
    mean = math.fsum(user_mos_window) / len(user_mos_window)
    if mean >= policy.mos_threshold:
        return False, f"mos {mean:.2f} acceptable"
    th = thresholds or Thresholds()
    if instance_telemetry is not None and th.overloaded(instance_telemetry.cpu_pct, instance_telemetry.ram_pct):
        return False, "load-caused degradation"
    if last_trigger_time is not None and clock - last_trigger_time < policy.cooldown:
        return False, "cooldown"
    if at_lowest:
        return False, "already at lowest rung"
    return True, f"mos {mean:.2f} below {policy.mos_threshold}"


def select_target_rung(current: float, ladder: BitrateLadder, cqi_estimate: float | None = None,
                       safety_factor: float = 0.8) -> float:
    """Next rung down, or lower when a radio-capacity estimate (bit/s) says so."""
    k = ladder.index(current)
    if k == len(ladder.rungs) - 1:
        raise AlreadyLowest(f"{current} kbps is the lowest rung")
    below = ladder.rungs[k + 1:]
    if cqi_estimate is None:
        return below[0]
    budget = cqi_estimate * safety_factor / 1000.0
    fitting = [r for r in below if r <= budget]
    return fitting[0] if fitting else ladder.lowest


@dataclass(frozen=True)
class TimingModel:
    boot: float = 3.0
    transcode_ref: float = 70.0
    ref_segments: int = 298
    ref_vcpus: int = 2
    mix_ref: float = 26.0
    mix_ref_segments: int = 298

    def transcode_seconds(self, segments: int, vcpus: int) -> float:
        return self.transcode_ref * (segments / self.ref_segments) * (self.ref_vcpus / vcpus)

    def mix_seconds(self, segments: int) -> float:
        return self.mix_ref * segments / self.mix_ref_segments


class JobPhase(str, enum.Enum):
    BOOTING = "Booting"
    TRANSCODING = "Transcoding"
    MIXING = "Mixing"
    DONE = "Done"
    CANCELLED = "Cancelled"


@dataclass
class Transcoder:
    transcoder_id: str
    vcpus: int
    ram_mb: int
    job_id: str | None = None
    idle_since: float | None = None


@dataclass
class EdgePool:
    """An edge host's spare resources and the transcoder instances it runs."""

    vcpus: int = 8
    ram_mb: int = 8192
    transcoder_vcpus: int = 2
    transcoder_ram_mb: int = 1024
    transcoders: list[Transcoder] = field(default_factory=list)
    _next: int = 1

    def used(self) -> tuple[int, int]:
        return (sum(t.vcpus for t in self.transcoders), sum(t.ram_mb for t in self.transcoders))

    def acquire(self, job_id: str, clock: float) -> tuple[Transcoder, bool]:
        """An idle transcoder (reused, no boot) or a newly started one."""
        idle = [t for t in self.transcoders if t.job_id is None]
        if idle:
            t = min(idle, key=lambda x: x.transcoder_id)
            t.job_id, t.idle_since = job_id, None
            return t, False
        cpu, ram = self.used()
        if cpu + self.transcoder_vcpus > self.vcpus or ram + self.transcoder_ram_mb > self.ram_mb:
            raise ResourceUnavailable("edge host has no room for another transcoder")
        t = Transcoder(f"tc{self._next}", self.transcoder_vcpus, self.transcoder_ram_mb, job_id)
        self._next += 1
        self.transcoders.append(t)
        return t, True

    def release(self, transcoder_id: str, clock: float) -> None:
        for t in self.transcoders:
            if t.transcoder_id == transcoder_id:
                t.job_id, t.idle_since = None, clock


@dataclass
class TranscodeJob:
    job_id: str
    user_id: str
    source_rung: float
    target_rung: float
    transcoder_id: str
    transcoder_vcpus: int
    remaining_segments: int
    created_t: float
    boot_end: float
    transcode_end: float
    phase: JobPhase = JobPhase.BOOTING
    phase_times: dict[str, float] = field(default_factory=dict)
    segments_to_replace: tuple[int, int] | None = None  # inclusive range
    mix_end: float | None = None
    last_downloaded_at_mix: int | None = None

    @property
    def finished(self) -> bool:
        return self.phase in (JobPhase.DONE, JobPhase.CANCELLED)

    def degraded_window(self) -> float | None:
        done = self.phase_times.get(JobPhase.DONE.value)
        return None if done is None else done - self.created_t


@dataclass
class ChunkCache:
    enabled: bool = False
    entries: set[tuple[str, float]] = field(default_factory=set)

    def has(self, asset: str, rung: float) -> bool:
        return self.enabled and (asset, rung) in self.entries

    def add(self, asset: str, rung: float) -> None:
        if self.enabled:
            self.entries.add((asset, rung))


def start_job(user: SessionState, target_rung: float, remaining_segments: int, edge_resources: EdgePool,
              timing_model: TimingModel, clock: float, job_id: str, cached: bool = False) -> TranscodeJob:
    if target_rung >= user.current_rung:
        raise ValueError("target rung must be below the current rung")
    tc, fresh = edge_resources.acquire(job_id, clock)
    boot_end = clock + (timing_model.boot if fresh else 0.0)
    work = 0.0 if cached else timing_model.transcode_seconds(remaining_segments, tc.vcpus)
    job = TranscodeJob(job_id, user.user_id, user.current_rung, target_rung, tc.transcoder_id, tc.vcpus,
                       remaining_segments, clock, boot_end, boot_end + work)
    job.phase_times[JobPhase.BOOTING.value] = clock
    return job


def advance_job(job: TranscodeJob, clock: float, user_session: SessionState | None,
                timing_model: TimingModel | None = None,
                edge: EdgePool | None = None) -> list[tuple[float, JobPhase]]:
    """Move ``job`` through every phase boundary up to ``clock``; returns the transitions."""
    tm = timing_model or TimingModel()
    out: list[tuple[float, JobPhase]] = []
    if job.finished:
        return out
    if user_session is None or user_session.done or user_session.clock is None \
            or user_session.end_time <= clock:
        _enter(job, JobPhase.CANCELLED, clock, out)
        if user_session is not None:
            user_session.mix_start = None
        if edge is not None:
            edge.release(job.transcoder_id, clock)
        return out
    s = user_session
    while True:
        if job.phase is JobPhase.BOOTING and clock >= job.boot_end:
            _enter(job, JobPhase.TRANSCODING, job.boot_end, out)
        elif job.phase is JobPhase.TRANSCODING and clock >= job.transcode_end:
            t = job.transcode_end
            first = s.last_downloaded_segment + 1
            job.last_downloaded_at_mix = s.last_downloaded_segment
            if first <= s.total_segments:
                job.segments_to_replace = (first, s.total_segments)
                count = s.total_segments - first + 1
            else:
                count = 0
            job.mix_end = t + tm.mix_seconds(count)
            _enter(job, JobPhase.MIXING, t, out)
            if count:
                s.mix_start, s.mix_frontier, s.mix_rate = first, first - 1, job.target_rung
        elif job.phase is JobPhase.MIXING and clock >= job.mix_end:
            _enter(job, JobPhase.DONE, job.mix_end, out)
            s.current_rung = job.target_rung
            s.mix_start = None
            if edge is not None:
                edge.release(job.transcoder_id, job.mix_end)
        else:
            break
    if job.phase is JobPhase.MIXING and job.segments_to_replace is not None:
        a, b = job.segments_to_replace
        span = job.mix_end - job.phase_times[JobPhase.MIXING.value]
        frac = 1.0 if span <= 0 else min(1.0, (clock - job.phase_times[JobPhase.MIXING.value]) / span)
        # sequential replacement: segments a..frontier are already swapped
        s.mix_frontier = a - 1 + math.floor(frac * (b - a + 1) + 1e-9)
    return out


def _enter(job: TranscodeJob, phase: JobPhase, t: float, out: list) -> None:
    job.phase = phase
    job.phase_times[phase.value] = t
    out.append((t, phase))


def maybe_terminate_transcoder(edge_state: EdgePool, policy: TriggerPolicy, clock: float) -> list[tuple[float, str]]:
    """Release transcoders idle for at least ``idle_terminate`` seconds."""
    gone = []
    for t in list(edge_state.transcoders):
        if t.job_id is None and t.idle_since is not None and clock - t.idle_since >= policy.idle_terminate:
            edge_state.transcoders.remove(t)
            gone.append((t.idle_since + policy.idle_terminate, t.transcoder_id))
    return gone


@dataclass
class UserWatch:
    samples: deque
    last_trigger: float | None = None
    in_episode: bool = False
    episode_rungs: list[float] = field(default_factory=list)
    job: TranscodeJob | None = None


class TranscodingController:
    """Watches per-user MOS in one region and runs stepwise transcoding jobs."""

    def __init__(self, ladder: BitrateLadder, policy: TriggerPolicy | None = None,
                 timing: TimingModel | None = None, edge: EdgePool | None = None,
                 cache: ChunkCache | None = None, thresholds: Thresholds | None = None,
                 cqi_seeding: bool = True, asset_scope: bool = True, asset_id: str = "asset"):
        self.ladder = ladder
        self.policy = policy or TriggerPolicy()
        self.timing = timing or TimingModel()
        self.edge = edge or EdgePool()
        self.cache = cache or ChunkCache()
        self.thresholds = thresholds or Thresholds()
        self.cqi_seeding = cqi_seeding
        # transcode the whole asset (as the measured reference job did) or only what is left
        self.asset_scope = asset_scope
        self.asset_id = asset_id
        self.users: dict[str, UserWatch] = {}
        self.jobs: list[TranscodeJob] = []
        self.episodes: list[list[float]] = []
        self._job_ids = 0

    def _watch(self, user_id: str) -> UserWatch:
        if user_id not in self.users:
            self.users[user_id] = UserWatch(deque(maxlen=self.policy.window_samples))
        return self.users[user_id]

    def observe(self, session: SessionState, mos: float | None, reading, clock: float,
                cqi_estimate: float | None = None) -> list[str]:
        """Feed one MOS sample; may start a job.  Returns log lines."""
        w = self._watch(session.user_id)
        if mos is None:
            return []
        w.samples.append(mos)
        if len(w.samples) < w.samples.maxlen:
            return []
        mean = math.fsum(w.samples) / len(w.samples)
        lines = []
        if w.in_episode and w.job is None and mean >= self.policy.mos_threshold + self.policy.hysteresis:
            w.in_episode = False
            self.episodes.append(w.episode_rungs)
            w.episode_rungs = []
            lines.append(f"user={session.user_id} recovered mos={mean:.2f}")
        if w.job is not None:
            return lines
        at_lowest = session.current_rung == self.ladder.lowest
        ok, why = should_transcode(list(w.samples), reading, self.policy, w.last_trigger, clock,
                                   at_lowest, self.thresholds)
        if not ok:
            return lines
        target = select_target_rung(session.current_rung, self.ladder,
                                    cqi_estimate if self.cqi_seeding else None, self.policy.safety_factor)
        self._job_ids += 1
        job_id = f"job{self._job_ids}"
        segments = session.total_segments if self.asset_scope \
            else session.total_segments - session.last_downloaded_segment
        cached = self.cache.has(self.asset_id, target)
        try:
            job = start_job(session, target, segments, self.edge, self.timing, clock, job_id, cached)
        except ResourceUnavailable as exc:
            self._job_ids -= 1
            return lines + [f"user={session.user_id} transcode refused: {exc}"]
        if not w.in_episode:
            w.in_episode = True
            w.episode_rungs = [session.current_rung]
        w.episode_rungs.append(target)
        w.last_trigger = clock
        w.job = job
        self.jobs.append(job)
        lines.append(f"job={job_id} user={session.user_id} phase=Booting t={clock:.1f} "
                     f"rung={job.source_rung:g}->{target:g} reason='{why}' segments={segments} "
                     f"vcpus={job.transcoder_vcpus}")
        return lines

    def advance(self, clock: float, sessions: dict[str, SessionState]) -> list[str]:
        lines = []
        for job in self.jobs:
            if job.finished:
                continue
            for t, phase in advance_job(job, clock, sessions.get(job.user_id), self.timing, self.edge):
                extra = ""
                if phase is JobPhase.MIXING and job.segments_to_replace:
                    extra = f" replace={job.segments_to_replace[0]}..{job.segments_to_replace[1]}"
                lines.append(f"job={job.job_id} user={job.user_id} phase={phase.value} t={t:.1f}{extra}")
                if phase in (JobPhase.DONE, JobPhase.CANCELLED):
                    w = self._watch(job.user_id)
                    w.job = None
                    # cooldown runs from the end of the job
                    w.last_trigger = t
                    w.samples.clear()
                    if phase is JobPhase.DONE:
                        self.cache.add(self.asset_id, job.target_rung)
        for t, tid in maybe_terminate_transcoder(self.edge, self.policy, clock):
            lines.append(f"transcoder={tid} terminated t={t:.1f}")
        return lines
