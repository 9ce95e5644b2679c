"""JSON-over-HTTP control service for live slices.

Mutations on one slice are serialized by a per-slice lock that is only ever
tried, never waited on: a second concurrent mutation gets 409.  Reads are
served from the snapshot published after the last completed mutation, so a
half-applied decision is never visible.
"""

from __future__ import annotations

import itertools
import json
import logging
import re
import threading
from dataclasses import asdict, dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, urlparse

from .catalog import Catalog
from .config import SolverConfig
from .edm.algorithm import SolveBudget, TriggerKind, edm_step, threshold_precheck
from .errors import CdnSliceError, InvalidQoeTarget
from .slices import (ChangeoverTiming, SliceRequest, SliceState, advance, apply_decision, create_slice,
                     instance_snapshots, snapshot_metrics)
from .workload import InstanceReading

log = logging.getLogger(__name__)


class ApiError(Exception):
    def __init__(self, status: HTTPStatus, kind: str, message: str):
        super().__init__(message)
        self.status, self.kind, self.message = status, kind, message


@dataclass
class _Record:
    state: SliceState
    clock: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)
    snapshot: dict = field(default_factory=dict)


class SliceStore:
    """All live slices of one service, sharing a catalog and cloud capacity."""

    def __init__(self, catalog: Catalog, timing: ChangeoverTiming | None = None,
                 solver: SolverConfig | None = None):
        self.catalog = catalog
        self.timing = timing or ChangeoverTiming()
        self.solver = solver or SolverConfig()
        self._slices: dict[str, _Record] = {}
        self._ids = itertools.count(1)
        # guards the slice table and cross-slice capacity accounting
        self._table = threading.Lock()

    def _used_vcpus(self) -> dict[str, int]:
        used: dict[str, int] = {}
        for rec in self._slices.values():
            for cid, v in rec.state.used_vcpus().items():
                used[cid] = used.get(cid, 0) + v
        return used

    def create(self, doc: Any) -> str:
        if not isinstance(doc, dict):
            raise ApiError(HTTPStatus.BAD_REQUEST, "ValidationError", "request body must be a JSON object")
        clock = float(doc.pop("clock", 0.0)) if "clock" in doc else 0.0
        request = SliceRequest.from_dict(doc)
        with self._table:
            slice_id = f"slice-{next(self._ids)}"
            state = create_slice(request, self.catalog, self.timing, clock, slice_id, self._used_vcpus())
            rec = _Record(state, clock)
            rec.snapshot = _snapshot(rec)
            self._slices[slice_id] = rec
        log.info("created %s for %s", slice_id, request.customer_id)
        return slice_id

    def record(self, slice_id: str) -> _Record:
        rec = self._slices.get(slice_id)
        if rec is None:
            raise ApiError(HTTPStatus.NOT_FOUND, "UnknownSlice", f"no slice {slice_id!r}")
        return rec

    def snapshot(self, slice_id: str) -> dict:
        return self.record(slice_id).snapshot

    def decisions(self, slice_id: str, offset: int = 0, limit: int = 100) -> dict:
        entries = self.snapshot(slice_id)["log"]
        page = entries[offset:offset + limit]
        return {"slice_id": slice_id, "total": len(entries), "offset": offset, "entries": page}

    def delete(self, slice_id: str) -> None:
        rec = self.record(slice_id)
        with self._mutation(rec):
            with self._table:
                self._slices.pop(slice_id, None)

    def _mutation(self, rec: _Record):
        if not rec.lock.acquire(blocking=False):
            raise ApiError(HTTPStatus.CONFLICT, "ConcurrentMutation", "another command is in flight for this slice")
        return _Held(rec.lock)

    def advance(self, slice_id: str, clock: float) -> dict:
        rec = self.record(slice_id)
        with self._mutation(rec):
            self._tick(rec, clock)
            rec.snapshot = _snapshot(rec)
            return rec.snapshot

    def _tick(self, rec: _Record, clock: float) -> None:
        if clock < rec.clock:
            raise ApiError(HTTPStatus.BAD_REQUEST, "ValidationError",
                           f"clock {clock} is behind the slice clock {rec.clock}")
        advance(rec.state, clock)
        rec.clock = clock

    def telemetry(self, slice_id: str, doc: Any) -> dict:
        """One monitoring report for a region: pre-check, then the elasticity step if warranted."""
        rec = self.record(slice_id)
        with self._mutation(rec):
            try:
                clock = float(doc["t"])
                rid = str(doc["region"])
                raw = doc["instances"]
                region = rec.state.regions[rid]
            except (KeyError, TypeError, ValueError) as exc:
                raise ApiError(HTTPStatus.BAD_REQUEST, "ValidationError", f"bad telemetry: {exc}") from None
            self._tick(rec, clock)
            active = {v.instance_id: v for v in region.active()}
            readings, stats = {}, {}
            for iid, r in raw.items():
                if iid not in active:
                    raise ApiError(HTTPStatus.BAD_REQUEST, "ValidationError", f"{iid} is not an active instance")
                v = active[iid]
                try:
                    reading = InstanceReading(float(r["cpu_pct"]), float(r["ram_pct"]),
                                              int(r.get("sessions", v.sessions)), float(r["probe_mos"]))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ApiError(HTTPStatus.BAD_REQUEST, "ValidationError", f"bad reading for {iid}: {exc}") from None
                readings[iid] = reading
                v.cpu_pct, v.ram_pct, v.probe_mos = reading.cpu_pct, reading.ram_pct, reading.probe_mos
                v.sessions = reading.session_count
                stats[iid] = (reading.cpu_pct, float(v.sessions), reading.probe_mos)

            req = rec.state.request
            kind = threshold_precheck(readings, req.trigger_thresholds(rid)) if readings else TriggerKind.HEALTHY
            result: dict = {"trigger": kind.value, "decision": None}
            if kind in (TriggerKind.SCALE_UP, TriggerKind.SCALE_DOWN) and not region.changeover_pending():
                snaps = instance_snapshots(region, stats)
                if snaps and all(s.sessions > 0 and s.avg_load > 0 for s in snaps):
                    with self._table:
                        reserved = self._used_vcpus()
                    own = rec.state.used_vcpus()
                    mine = rec.state.used_vcpus(exclude_region=rid)
                    # capacity held by other slices plus this slice's other regions
                    for cid, v in own.items():
                        reserved[cid] = reserved.get(cid, 0) - v + mine.get(cid, 0)
                    params = req.solve_params(rid, cross_cloud_moves=self.solver.cross_cloud_moves,
                                              reserved_vcpus={c: v for c, v in reserved.items() if v})
                    budget = SolveBudget(self.solver.exact_max_n, self.solver.node_limit)
                    decision = edm_step(snaps, self.catalog, params, budget, self.solver.max_depth)
                    decision.epoch = region.epoch
                    rec.state.record(clock, rid, f"trigger {kind.value}")
                    apply_decision(rec.state, rid, decision, clock)
                    result["decision"] = decision.summary()
            elif kind is TriggerKind.QUALITY_NOT_LOAD:
                rec.state.record(clock, rid, f"trigger {kind.value} routed to transcoding")
            rec.snapshot = _snapshot(rec)
            return result


class _Held:
    def __init__(self, lock: threading.Lock):
        self.lock = lock

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.lock.release()
        return False


def _snapshot(rec: _Record) -> dict:
    state = rec.state
    metrics = snapshot_metrics(state, rec.clock)
    regions = {}
    for rid, region in state.regions.items():
        regions[rid] = asdict(metrics[rid]) | {
            "epoch": region.epoch,
            "instances_detail": [{"instance_id": v.instance_id, "flavor": v.flavor.id, "cloud": v.cloud_id,
                                  "vcpu": v.flavor.vcpu, "phase": v.phase.value} for v in region.instances]}
    return {
        "slice_id": state.slice_id, "customer_id": state.request.customer_id, "clock": rec.clock,
        "regions": regions,
        "log": [{"t": e.t, "region": e.region_id, "epoch": e.epoch, "text": e.text} for e in state.log],
    }


_SLICE = re.compile(r"^/slices/([A-Za-z0-9_.-]+)(/decisions|/advance|/telemetry)?/?$")


class ControlHandler(BaseHTTPRequestHandler):
    store: SliceStore  # set on the server-specific subclass

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: HTTPStatus, body: Any) -> None:
        data = json.dumps(body, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> Any:
        n = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(n) if n else b"{}"
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ApiError(HTTPStatus.BAD_REQUEST, "ParseError", str(exc)) from None

    def _dispatch(self, method: str) -> None:
        url = urlparse(self.path)
        try:
            if url.path.rstrip("/") == "/slices" and method == "POST":
                self._send(HTTPStatus.CREATED, {"slice_id": self.store.create(self._body())})
                return
            m = _SLICE.match(url.path)
            if not m:
                raise ApiError(HTTPStatus.NOT_FOUND, "NotFound", f"no route for {url.path}")
            sid, sub = m.group(1), m.group(2)
            if method == "GET" and sub is None:
                snap = dict(self.store.snapshot(sid))
                snap.pop("log")
                self._send(HTTPStatus.OK, snap)
            elif method == "GET" and sub == "/decisions":
                q = parse_qs(url.query)
                offset = int(q.get("offset", ["0"])[0])
                limit = int(q.get("limit", ["100"])[0])
                self._send(HTTPStatus.OK, self.store.decisions(sid, offset, limit))
            elif method == "DELETE" and sub is None:
                self.store.delete(sid)
                self._send(HTTPStatus.OK, {"deleted": sid})
            elif method == "POST" and sub == "/advance":
                body = self._body()
                self._send(HTTPStatus.OK, _public(self.store.advance(sid, float(body["t"]))))
            elif method == "POST" and sub == "/telemetry":
                self._send(HTTPStatus.OK, self.store.telemetry(sid, self._body()))
            else:
                raise ApiError(HTTPStatus.METHOD_NOT_ALLOWED, "MethodNotAllowed", f"{method} {url.path}")
        except ApiError as exc:
            self._send(exc.status, {"error": exc.kind, "message": exc.message})
        except (InvalidQoeTarget, CdnSliceError, KeyError, TypeError, ValueError) as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": type(exc).__name__, "message": str(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")


def _public(snapshot: dict) -> dict:
    return {k: v for k, v in snapshot.items() if k != "log"}


class ControlServer:
    """A running service; ``url`` is its base address."""

    def __init__(self, store: SliceStore, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundControlHandler", (ControlHandler,), {"store": store})
        self.store = store
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ControlServer":
        if not self._thread.is_alive():
            self._thread.start()
        return self

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def serve_control_api(store: SliceStore, host: str = "127.0.0.1", port: int = 0) -> ControlServer:
    return ControlServer(store, host, port).start()
