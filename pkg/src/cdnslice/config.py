"""Scenario configuration: a single JSON document describing one experiment."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .catalog import Catalog, generate_synthetic_catalog, load_catalog
from .errors import CdnSliceError, ConfigError
from .qoe import QoeModelParams
from .slices import ChangeoverTiming, SliceRequest
from .transcoding import BitrateLadder, EdgePool, TimingModel, TriggerPolicy
from .workload import RadioProfile, RateProfile, load_workload_trace, profiles_from_trace

OUTPUT_DIR_ENV = "CDNSLICE_OUTPUT_DIR"


@dataclass(frozen=True)
class TrackedUser:
    user_id: str
    region_id: str
    start_s: float
    rung_kbps: float
    segments: int = 298
    segment_s: float = 2.0
    startup_buffer_s: float = 4.0
    buffer_cap_s: float = 12.0


@dataclass
class TranscodingConfig:
    enabled: bool = False
    ladder: BitrateLadder = field(default_factory=lambda: BitrateLadder((3000.0, 1500.0, 800.0, 400.0)))
    policy: TriggerPolicy = field(default_factory=TriggerPolicy)
    timing: TimingModel = field(default_factory=TimingModel)
    edge_vcpus: int = 8
    edge_ram_mb: int = 8192
    transcoder_vcpus: int = 2
    transcoder_ram_mb: int = 1024
    cache: bool = False
    cqi_seeding: bool = True
    asset_scope: bool = True

    def edge_pool(self) -> EdgePool:
        return EdgePool(self.edge_vcpus, self.edge_ram_mb, self.transcoder_vcpus, self.transcoder_ram_mb)


@dataclass(frozen=True)
class SolverConfig:
    exact_max_n: int = 60
    node_limit: int = 200_000
    cross_cloud_moves: bool = False
    max_depth: int = 8


@dataclass(frozen=True)
class SweepConfig:
    sizes: tuple[int, ...] = tuple(range(10, 301, 10))
    q_min_values: tuple[float, ...] = (2.5, 3.5, 4.5)
    l_min_values: tuple[float, ...] = (50.0, 80.0)
    base_q_min: float = 3.5
    base_l_min: float = 50.0
    l_max: float = 100.0
    sigma: float = 0.1
    replications: int = 5
    mos_lo: float = 4.0
    exact_max_n: int = 20
    node_limit: int = 20_000
    cross_cloud_moves: bool = True


@dataclass
class ScenarioConfig:
    seed: int
    catalog: Catalog
    slice_request: SliceRequest
    duration_s: float = 600.0
    tick_s: float = 1.0
    rum_window_s: float = 10.0
    timing: ChangeoverTiming = field(default_factory=ChangeoverTiming)
    workload: dict[str, RateProfile] = field(default_factory=dict)
    radio: dict[str, RadioProfile] = field(default_factory=dict)
    tracked_users: list[TrackedUser] = field(default_factory=list)
    transcoding: TranscodingConfig = field(default_factory=TranscodingConfig)
    qoe: QoeModelParams = field(default_factory=QoeModelParams)
    ram_base_pct: float = 20.0
    ram_mb_per_session: float = 0.08
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: Path = Path("out")
    name: str = "scenario"

    def resolved_output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_DIR_ENV)
        return Path(env) if env else self.output_dir


def _catalog_from(doc: Any, base: Path) -> Catalog:
    if not isinstance(doc, Mapping):
        raise ConfigError("'catalog' must be an object")
    if "path" in doc:
        path = Path(doc["path"])
        return load_catalog(path if path.is_absolute() else base / path, strict=bool(doc.get("strict", False)))
    if "synthetic" in doc:
        syn = dict(doc["synthetic"])
        return generate_synthetic_catalog(
            seed=int(syn.get("seed", 42)), n_clouds=int(syn.get("n_clouds", 45)),
            total_flavors=int(syn.get("total_flavors", 1417)),
            capacity_vcpus=int(syn.get("capacity_vcpus", 20)))
    if "clouds" in doc:
        return Catalog.from_dict(doc)
    raise ConfigError("catalog needs one of 'path', 'synthetic' or 'clouds'")


def _dataclass_kwargs(cls, doc: Mapping | None, what: str) -> dict:
    doc = dict(doc or {})
    known = set(cls.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
    return doc


def config_from_dict(doc: Mapping, base: Path | None = None) -> ScenarioConfig:
    base = base or Path(".")
    if "seed" not in doc:
        raise ConfigError("'seed' is mandatory")
    try:
        catalog = _catalog_from(doc.get("catalog"), base)
        request = SliceRequest.from_dict(doc["slice"])
        regions = {r.region_id for r in request.regions}

        workload: dict[str, RateProfile] = {}
        radio: dict[str, RadioProfile] = {}
        if "trace" in doc:
            path = Path(doc["trace"])
            rows = load_workload_trace(path if path.is_absolute() else base / path)
            for rid, (rate, rad) in profiles_from_trace(rows).items():
                workload[rid], radio[rid] = rate, rad
        for rid, w in (doc.get("workload") or {}).items():
            workload[rid] = RateProfile(tuple((float(t), float(v)) for t, v in w.get("steps", [[0, 0]])),
                                        w.get("mode", "poisson"), float(w.get("mean_duration", 300.0)))
        for rid, r in (doc.get("radio") or {}).items():
            radio[rid] = RadioProfile(tuple((float(t), int(c), int(u), float(b)) for t, c, u, b in r["steps"]),
                                      int(r.get("prb_budget", 25)))
        for rid in list(workload) + list(radio):
            if rid not in regions:
                raise ConfigError(f"profile for undefined region {rid!r}")

        users = [TrackedUser(**_dataclass_kwargs(TrackedUser, u, "tracked user")) for u in doc.get("tracked_users", [])]
        for u in users:
            if u.region_id not in regions:
                raise ConfigError(f"tracked user {u.user_id} in undefined region {u.region_id!r}")

        tc_doc = dict(doc.get("transcoding") or {})
        tc = TranscodingConfig()
        if "ladder" in tc_doc:
            tc.ladder = BitrateLadder(tuple(float(x) for x in tc_doc.pop("ladder")))
        if "policy" in tc_doc:
            tc.policy = TriggerPolicy(**_dataclass_kwargs(TriggerPolicy, tc_doc.pop("policy"), "policy"))
        if "timing" in tc_doc:
            tc.timing = TimingModel(**_dataclass_kwargs(TimingModel, tc_doc.pop("timing"), "timing model"))
        for k, v in _dataclass_kwargs(TranscodingConfig, tc_doc, "transcoding").items():
            setattr(tc, k, v)
        for u in users:
            if u.rung_kbps not in tc.ladder.rungs:
                raise ConfigError(f"tracked user {u.user_id}: {u.rung_kbps} kbps not on the ladder")

        tel = doc.get("telemetry") or {}
        cfg = ScenarioConfig(
            seed=int(doc["seed"]), catalog=catalog, slice_request=request,
            duration_s=float(doc.get("duration_s", 600.0)), tick_s=float(doc.get("tick_s", 1.0)),
            rum_window_s=float(doc.get("rum_window_s", 10.0)),
            timing=ChangeoverTiming(**_dataclass_kwargs(ChangeoverTiming, doc.get("timing"), "timing")),
            workload=workload, radio=radio, tracked_users=users, transcoding=tc,
            qoe=QoeModelParams(**_dataclass_kwargs(QoeModelParams, doc.get("qoe"), "qoe")),
            ram_base_pct=float(tel.get("ram_base_pct", 20.0)),
            ram_mb_per_session=float(tel.get("ram_mb_per_session", 0.08)),
            solver=SolverConfig(**_dataclass_kwargs(SolverConfig, doc.get("solver"), "solver")),
            sweep=_sweep_from(doc.get("sweep")),
            output_dir=Path(doc.get("output_dir", "out")),
            name=str(doc.get("name", "scenario")))
    except ConfigError:
        raise
    except (CdnSliceError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    if cfg.tick_s <= 0 or cfg.duration_s <= 0:
        raise ConfigError("tick_s and duration_s must be positive")
    if abs(cfg.slice_request.monitoring_period / cfg.tick_s - round(cfg.slice_request.monitoring_period / cfg.tick_s)) > 1e-9:
        raise ConfigError("monitoring_period must be a whole number of ticks")
    return cfg


def _sweep_from(doc: Mapping | None) -> SweepConfig:
    doc = _dataclass_kwargs(SweepConfig, doc, "sweep")
    for key in ("sizes", "q_min_values", "l_min_values"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return SweepConfig(**doc)


PRESETS = ("elasticity_step", "transcoding_drop", "empty_workload", "scale_out", "sweep")


def preset_path(name: str) -> Path:
    return Path(str(resources.files("cdnslice.scenarios").joinpath(f"{name}.json")))


def load_config(path_or_preset: str | Path) -> ScenarioConfig:
    path = Path(path_or_preset)
    if not path.exists() and str(path_or_preset) in PRESETS:
        path = preset_path(str(path_or_preset))
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such config: {path_or_preset}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc, path.parent)
