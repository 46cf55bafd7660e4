"""Pipeline definition, validation and the threaded runner.

Each processor owns one bounded inbox; a worker thread per processor drains
it. ``(from, connectionName)`` is wired to at most one target. A record sent
down an unwired connection leaves the pipeline: as delivered output, or as a
dead letter when the connection is ``failure``. Hence, once idle::

    sourcesOut == delivered + deadLettered
"""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import yaml

from ..clock import ManualClock, SystemClock
from ..errors import LodError, PipelineError
from ..httpd import Request, Response, Router, Server
from .processors import FAILURE, KINDS, SUCCESS, DeviceGateway, HttpListen, Processor
from .records import FlowRecord

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1000


@dataclass(frozen=True)
class ProcessorConfig:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Connection:
    source: str
    name: str
    target: str


@dataclass
class Pipeline:
    processors: list[ProcessorConfig]
    connections: list[Connection] = field(default_factory=list)
    queue_capacity: int = DEFAULT_CAPACITY
    name: str = "pipeline"
    dead_letter_dir: str | None = None
    services: dict[str, str] = field(default_factory=dict)
    host: str = "127.0.0.1"
    port: int = 0

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Pipeline":
        try:
            jsonschema.validate(doc, pipeline_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
            raise PipelineError(f"invalid pipeline at {where}: {exc.message}") from exc
        listen = doc.get("listen", {})
        pipeline = cls(
            processors=[ProcessorConfig(p["name"], p["kind"], dict(p.get("params", {}))) for p in doc["processors"]],
            connections=[Connection(c["from"], c.get("connectionName", SUCCESS), c["to"])
                         for c in doc.get("connections", ())],
            queue_capacity=doc.get("queueCapacity", DEFAULT_CAPACITY),
            name=doc.get("name", "pipeline"),
            dead_letter_dir=doc.get("deadLetterDir"),
            services=dict(doc.get("services", {})),
            host=listen.get("host", "127.0.0.1"),
            port=listen.get("port", 0),
        )
        pipeline.validate()
        return pipeline

    def validate(self) -> None:
        names = [p.name for p in self.processors]
        if len(set(names)) != len(names):
            raise PipelineError("processor names must be unique")
        for p in self.processors:
            if p.kind not in KINDS:
                raise PipelineError(f"processor {p.name}: unknown kind {p.kind!r}")
        kinds = {p.name: p.kind for p in self.processors}
        seen = set()
        for c in self.connections:
            for end in (c.source, c.target):
                if end not in kinds:
                    raise PipelineError(f"connection {c.source}.{c.name} -> {c.target}: unknown processor {end!r}")
            if (c.source, c.name) in seen:
                raise PipelineError(f"connection {c.source}.{c.name} is wired twice")
            seen.add((c.source, c.name))
            if KINDS[kinds[c.target]].is_source:
                raise PipelineError(f"source processor {c.target} cannot receive records")
        if sum(p.kind == "device-gateway" for p in self.processors) > 1:
            raise PipelineError("at most one device-gateway per pipeline")
        listen_ids = [p.params.get("sourceId", p.name) for p in self.processors if p.kind == "http-listen"]
        if len(set(listen_ids)) != len(listen_ids):
            raise PipelineError("http-listen sourceIds must be unique")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        edges: dict[str, set[str]] = {p.name: set() for p in self.processors}
        indegree = Counter()
        for c in self.connections:
            if c.target not in edges[c.source]:
                edges[c.source].add(c.target)
                indegree[c.target] += 1
        ready = [n for n in edges if indegree[n] == 0]
        visited = 0
        while ready:
            node = ready.pop()
            visited += 1
            for nxt in edges[node]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        if visited != len(edges):
            raise PipelineError("pipeline connections form a cycle")


@lru_cache(maxsize=1)
def pipeline_schema() -> dict:
    return json.loads(resources.files("lodbridge.data").joinpath("pipeline.schema.json").read_text("utf-8"))


def load_pipeline(source: str | Path | Mapping) -> Pipeline:
    """Read a pipeline from a YAML/JSON file (or an already parsed mapping)."""
    if isinstance(source, Mapping):
        return Pipeline.from_dict(source)
    path = Path(source)
    text = path.read_text("utf-8")
    doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise PipelineError(f"{path} does not hold a pipeline mapping")
    pipeline = Pipeline.from_dict(doc)
    if pipeline.dead_letter_dir and not Path(pipeline.dead_letter_dir).is_absolute():
        pipeline.dead_letter_dir = str(path.parent / pipeline.dead_letter_dir)
    historian = pipeline.services.get("historian")
    if historian and "://" not in historian and not Path(historian).is_absolute():
        pipeline.services["historian"] = str(path.parent / historian)
    return pipeline


@dataclass
class RunReport:
    processors: dict[str, dict]
    connections: list[dict]
    sources_out: int
    delivered: int
    dead_lettered: int
    in_flight: int
    poll_errors: int

    @property
    def conserved(self) -> bool:
        return self.sources_out == self.delivered + self.dead_lettered + self.in_flight

    def to_dict(self) -> dict:
        return {"sourcesOut": self.sources_out, "delivered": self.delivered, "deadLettered": self.dead_lettered,
                "inFlight": self.in_flight, "pollErrors": self.poll_errors, "processors": self.processors,
                "connections": self.connections}


def resolve_services(declared: Mapping[str, Any]) -> dict[str, Any]:
    """Turn service URLs (or a historian directory) into client objects."""
    from ..broker.api import BrokerClient
    from ..catalog.api import CatalogClient
    from ..historian import Historian, HistorianClient

    out: dict[str, Any] = {}
    for key, value in declared.items():
        if not isinstance(value, str) or key == "brokerUrl":
            out[key] = value
        elif key == "broker":
            out[key] = BrokerClient(value)
            out.setdefault("brokerUrl", value)
        elif key == "catalog":
            out[key] = CatalogClient(value)
        elif key == "historian":
            out[key] = HistorianClient(value) if value.startswith(("http://", "https://")) else Historian(value)
        else:
            out[key] = value
    return out


class PipelineRunner:
    def __init__(self, pipeline: Pipeline, *, services: Mapping[str, Any] | None = None, clock=None,
                 dead_letter_dir: str | Path | None = None):
        self.pipeline = pipeline
        self.clock = clock or SystemClock()
        self.services = resolve_services({**pipeline.services, **(services or {})})
        dlq = dead_letter_dir or pipeline.dead_letter_dir
        self.dead_letter_dir = Path(dlq) if dlq else None
        self.host = pipeline.host
        self.wiring = {(c.source, c.name): c.target for c in pipeline.connections}
        self.processors: dict[str, Processor] = {}
        self.inboxes: dict[str, queue.Queue] = {}
        self.deadline: datetime | None = None
        self.server: Server | None = None
        self._stop = threading.Event()
        self._cond = threading.Condition()
        self._threads: list[threading.Thread] = []
        self._active_sources = 0
        self._in_flight = 0
        self._sources_out = 0
        self._delivered = 0
        self._dead = 0
        self._poll_errors = 0
        self._received: Counter = Counter()
        self._emitted: Counter = Counter()
        self._started = False

    # -- lifecycle -------------------------------------------------------------

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()

    @property
    def url(self) -> str | None:
        return self.server.url if self.server else None

    def processor(self, name: str) -> Processor:
        return self.processors[name]

    def start(self, duration: float | None = None) -> "PipelineRunner":
        if self._started:
            raise PipelineError("runner already started")
        self._started = True
        if duration is not None:
            self.deadline = self.clock.now() + timedelta(seconds=duration)
        for cfg in self.pipeline.processors:
            proc = KINDS[cfg.kind](cfg.name, cfg.params, self)
            self.processors[cfg.name] = proc
            if not proc.is_source:
                self.inboxes[cfg.name] = queue.Queue(maxsize=self.pipeline.queue_capacity)
        try:
            for proc in self.processors.values():
                proc.setup()
        except Exception:
            self._close_processors()
            raise
        self._start_server()
        for name in self.inboxes:
            self._spawn(self._work, name)
        for proc in self.processors.values():
            if hasattr(proc, "run_source"):
                with self._cond:
                    self._active_sources += 1
                self._spawn(self._source, proc)
        return self

    def _spawn(self, target, arg) -> None:
        t = threading.Thread(target=target, args=(arg,), name=f"flow-{getattr(arg, 'name', arg)}", daemon=True)
        self._threads.append(t)
        t.start()

    def _start_server(self) -> None:
        listeners = {p.source_id: p for p in self.processors.values() if isinstance(p, HttpListen)}
        gateways = [p for p in self.processors.values() if isinstance(p, DeviceGateway)]
        if not listeners and not gateways:
            return
        router = Router()

        def ingest(req: Request) -> Response:
            proc = listeners.get(req.params["source_id"])
            if proc is None:
                return Response(404, {"title": "unknown source", "detail": req.params["source_id"]})
            return proc.accept(req)

        router.add("POST", "/ingest/{source_id}", ingest)
        if gateways:
            router.add("POST", "/devices/{device_id}/measures", gateways[0].accept)
        self.server = Server(router, self.pipeline.host, self.pipeline.port).start()

    def sleep_until(self, when: datetime) -> bool:
        """Wait on the runner clock; False if the runner was stopped meanwhile."""
        if isinstance(self.clock, ManualClock):
            self.clock.sleep_until(when)
            return not self.stopping
        while not self.stopping:
            delta = (when - self.clock.now()).total_seconds()
            if delta <= 0:
                return True
            self._stop.wait(min(delta, 0.25))
        return False

    def _source(self, proc: Processor) -> None:
        try:
            proc.run_source()
        except Exception:  # noqa: BLE001 - a crashed source must not hang wait_idle
            log.exception("source %s crashed", proc.name)
        finally:
            with self._cond:
                self._active_sources -= 1
                self._cond.notify_all()

    def _work(self, name: str) -> None:
        proc = self.processors[name]
        inbox = self.inboxes[name]
        while True:
            try:
                record = inbox.get(timeout=0.05)
            except queue.Empty:
                if self.stopping:
                    return
                continue
            with self._cond:
                self._received[name] += 1
            try:
                connection, out = proc.process(record)
            except LodError as exc:
                connection, out = FAILURE, record.with_attributes(**{"error.type": exc.kind,
                                                                     "error.message": exc.detail})
            except Exception as exc:  # noqa: BLE001 - any processor fault becomes a failure record
                log.exception("processor %s failed on %s", name, record.lineage_id)
                connection, out = FAILURE, record.with_attributes(**{"error.type": type(exc).__name__,
                                                                     "error.message": str(exc)})
            if out.lineage_id != record.lineage_id:
                raise PipelineError(f"processor {name} changed a record's lineage")
            self._route(name, connection, out)

    # -- record movement ---------------------------------------------------------

    def emit(self, source: str, record: FlowRecord) -> None:
        """Inject a new record from a source processor."""
        with self._cond:
            self._in_flight += 1
            self._sources_out += 1
        self._route(source, SUCCESS, record)

    def note_poll_error(self, source: str, message: str) -> None:
        log.warning("poll by %s failed: %s", source, message)
        with self._cond:
            self._poll_errors += 1

    def _route(self, source: str, connection: str, record: FlowRecord) -> None:
        with self._cond:
            self._emitted[(source, connection)] += 1
        target = self.wiring.get((source, connection))
        if target is not None:
            inbox = self.inboxes[target]
            while True:
                try:
                    inbox.put(record, timeout=0.1)  # blocking back-pressure
                    return
                except queue.Full:
                    if self.stopping:
                        log.warning("dropping %s into %s at shutdown", record.lineage_id, target)
                        return
        if connection == FAILURE:
            self._dead_letter(source, record)
        with self._cond:
            if connection == FAILURE:
                self._dead += 1
            else:
                self._delivered += 1
            self._in_flight -= 1
            self._cond.notify_all()

    def _dead_letter(self, processor: str, record: FlowRecord) -> None:
        if self.dead_letter_dir is None:
            log.warning("dead letter from %s: %s", processor, record.attributes.get("error.message"))
            return
        folder = self.dead_letter_dir / processor
        folder.mkdir(parents=True, exist_ok=True)
        doc = {"processor": processor, **record.to_dict()}
        (folder / f"{record.lineage_id}.json").write_text(json.dumps(doc, indent=2, ensure_ascii=False),
                                                          encoding="utf-8")

    # -- waiting and stopping ------------------------------------------------------

    def wait_idle(self, timeout: float | None = 60.0) -> bool:
        """Block until every poll source finished and no record is in flight."""
        end = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while self._active_sources or self._in_flight:
                remaining = None if end is None else end - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._cond.wait(0.1 if remaining is None else min(remaining, 0.1))
        return True

    def _close_processors(self) -> None:
        for proc in self.processors.values():
            try:
                proc.close()
            except Exception:  # noqa: BLE001
                log.exception("closing %s failed", proc.name)

    def stop(self) -> RunReport:
        self._stop.set()
        if self.server:
            self.server.close()
            self.server = None
        self._close_processors()
        for t in self._threads:
            t.join(timeout=5)
        return self.report()

    def report(self) -> RunReport:
        with self._cond:
            processors = {}
            for cfg in self.pipeline.processors:
                emitted = {conn: n for (src, conn), n in sorted(self._emitted.items()) if src == cfg.name}
                processors[cfg.name] = {"kind": cfg.kind, "received": self._received[cfg.name], "emitted": emitted}
            connections = []
            for (src, conn), n in sorted(self._emitted.items()):
                connections.append({"from": src, "connectionName": conn, "to": self.wiring.get((src, conn)),
                                    "count": n})
            return RunReport(processors, connections, self._sources_out, self._delivered, self._dead,
                             self._in_flight, self._poll_errors)

    def __enter__(self) -> "PipelineRunner":
        if not self._started:
            self.start()
        return self

    def __exit__(self, *exc) -> None:
        if not self.stopping:
            self.stop()


def run_pipeline(pipeline: Pipeline | Mapping | str | Path, *, duration: float | None = None,
                 services: Mapping[str, Any] | None = None, clock=None, dead_letter_dir=None,
                 timeout: float = 120.0) -> RunReport:
    """Run until idle (all poll sources done, nothing in flight); ``duration`` bounds polling time."""
    if not isinstance(pipeline, Pipeline):
        pipeline = load_pipeline(pipeline)
    runner = PipelineRunner(pipeline, services=services, clock=clock, dead_letter_dir=dead_letter_dir)
    runner.start(duration=duration)
    try:
        if not runner.wait_idle(timeout):
            log.warning("pipeline %s did not reach idle within %ss", pipeline.name, timeout)
    finally:
        report = runner.stop()
    return report
