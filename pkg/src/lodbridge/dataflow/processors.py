"""Processor kinds. Sources feed records into the runner; every other kind maps
one input record to exactly one output record on a named connection."""
from __future__ import annotations

import json
import logging
import re
import socketserver
import threading
import urllib.parse
from datetime import timedelta
from pathlib import Path
from typing import TYPE_CHECKING, Any, ClassVar

from ..clock import format_instant
from ..entity import entity_from_document, from_key_values, from_normalized, load_templates, to_normalized
from ..errors import BadRequest, LodError, PipelineError
from ..httpd import Request, Response, http_request
from .devices import DeviceRegistry, ingest_device_measure
from .publication import (DatasetMetadata, PublicationParams, generate_catalog_metadata, notification_entities,
                          publish_dataset_to_catalog)
from .records import FlowRecord
from .transform import TransformSpec, apply_transform, get_path, load_spec

if TYPE_CHECKING:
    from .pipeline import PipelineRunner

log = logging.getLogger(__name__)

SUCCESS = "success"
FAILURE = "failure"


class Processor:
    kind: ClassVar[str]
    is_source: ClassVar[bool] = False

    def __init__(self, name: str, params: dict, runner: "PipelineRunner"):
        self.name = name
        self.params = params
        self.runner = runner

    def setup(self) -> None:
        """Bind resources (services, routes, sockets) before any record flows."""

    def close(self) -> None:
        pass

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        raise NotImplementedError

    def service(self, default: str) -> Any:
        key = self.params.get("service", default)
        try:
            return self.runner.services[key]
        except KeyError as exc:
            raise PipelineError(f"processor {self.name} needs service {key!r}") from exc


# -- sources -------------------------------------------------------------------

class HttpPoll(Processor):
    kind = "http-poll"
    is_source = True

    def run_source(self) -> None:
        url = self.params["url"]
        interval = timedelta(seconds=float(self.params["intervalSeconds"]))
        max_polls = self.params.get("maxPolls")
        runner = self.runner
        start = runner.clock.now()
        k = 0
        while not runner.stopping and (max_polls is None or k < max_polls):
            due = start + k * interval
            if runner.deadline is not None and due >= runner.deadline:
                break
            if not runner.sleep_until(due):
                break
            k += 1
            try:
                res = http_request(self.params.get("method", "GET"), url,
                                   timeout=float(self.params.get("timeoutSeconds", 10)))
            except LodError as exc:
                runner.note_poll_error(self.name, str(exc))
                continue
            if not res.ok:
                runner.note_poll_error(self.name, f"{url} answered {res.status}")
                continue
            runner.emit(self.name, FlowRecord(res.body, {
                "source.id": self.name, "source.url": url, "http.status": str(res.status),
                "content-type": res.headers.get("content-type", "application/octet-stream"),
                "fetch.time": format_instant(runner.clock.now()), "poll.index": str(k),
            }))


class HttpListen(Processor):
    kind = "http-listen"
    is_source = True

    @property
    def source_id(self) -> str:
        return self.params.get("sourceId", self.name)

    def accept(self, req: Request) -> Response:
        record = FlowRecord(req.body, {
            "source.id": self.source_id,
            "content-type": req.headers.get("content-type", "application/octet-stream"),
            "received.time": format_instant(self.runner.clock.now()),
        })
        self.runner.emit(self.name, record)
        return Response(202, {"lineageId": record.lineage_id})


class _LineHandler(socketserver.StreamRequestHandler):
    gateway: "DeviceGateway"

    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace").strip()
            if not line:
                continue
            topic, _, body = line.partition(" ")
            parts = topic.split("/")
            try:
                if len(parts) != 3 or parts[0] != "devices" or parts[2] != "measures":
                    raise BadRequest(f"unknown topic {topic!r}")
                lineage = self.gateway.ingest(parts[1], body.encode("utf-8"))
                reply = f"OK {lineage}\n"
            except LodError as exc:
                reply = f"ERR {exc.detail}\n"
            self.wfile.write(reply.encode("utf-8"))
            self.wfile.flush()


class DeviceGateway(Processor):
    kind = "device-gateway"
    is_source = True

    def setup(self) -> None:
        registry = self.params.get("registry")
        self.registry = (DeviceRegistry.from_dict(registry) if isinstance(registry, dict)
                         else DeviceRegistry.load(registry))
        self.tcp = None
        if "tcpPort" in self.params:
            handler = type("BoundLineHandler", (_LineHandler,), {"gateway": self})
            self.tcp = socketserver.ThreadingTCPServer((self.runner.host, int(self.params["tcpPort"])), handler)
            self.tcp.daemon_threads = True
            threading.Thread(target=self.tcp.serve_forever, name=f"tcp-{self.name}", daemon=True).start()

    @property
    def tcp_address(self) -> tuple[str, int] | None:
        return self.tcp.server_address[:2] if self.tcp else None

    def ingest(self, device_id: str, body: bytes) -> str:
        try:
            measure = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadRequest(f"measure is not valid JSON: {exc}") from exc
        entity = ingest_device_measure(measure, self.registry, device_id)
        record = FlowRecord(json.dumps(to_normalized(entity)).encode("utf-8"), {
            "source.id": self.name, "device.id": device_id, "entity.id": entity.id, "entity.type": entity.type,
            "content-type": "application/ld+json", "received.time": format_instant(self.runner.clock.now()),
        })
        self.runner.emit(self.name, record)
        return record.lineage_id

    def accept(self, req: Request) -> Response:
        return Response(202, {"lineageId": self.ingest(req.params["device_id"], req.body)})

    def close(self) -> None:
        if self.tcp:
            self.tcp.shutdown()
            self.tcp.server_close()


# -- transforming ----------------------------------------------------------------

class Transform(Processor):
    kind = "transform"

    def setup(self) -> None:
        spec = self.params.get("spec")
        if isinstance(spec, dict):
            self.spec = TransformSpec.from_dict(spec)
        elif spec:
            self.spec = load_spec(Path(spec))
        else:
            self.spec = load_spec(name=self.params.get("specName", "weather_transform.json"))
        if "onMissing" in self.params:
            self.spec = TransformSpec(self.spec.rules, self.params["onMissing"])

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        out = apply_transform(_json(record), self.spec)
        return SUCCESS, record.with_payload(out, **{"content-type": "application/json"})


class Route(Processor):
    kind = "route"

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        doc = None
        for rule in self.params["rules"]:
            if "attribute" in rule:
                value = record.attributes.get(rule["attribute"])
            else:
                if doc is None:
                    doc = _json(record)
                value = get_path(doc, rule["path"], None)
            if _rule_matches(rule, value):
                return rule["connection"], record
        return "unmatched", record


def _rule_matches(rule: dict, value: Any) -> bool:
    if value is None:
        return False
    if "equals" in rule:
        return value == rule["equals"]
    if "matches" in rule:
        return re.search(rule["matches"], str(value)) is not None
    return True  # an "exists" rule


# -- sinks -----------------------------------------------------------------------

class ToBroker(Processor):
    kind = "to-broker"

    def setup(self) -> None:
        self.broker = self.service("broker")
        self.templates = load_templates()

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        doc = _json(record)
        fmt = self.params.get("format")
        if fmt == "keyValues":
            entity = from_key_values(doc, self.templates.get(doc.get("type")) if isinstance(doc, dict) else None)
        elif fmt == "normalized":
            entity = from_normalized(doc)
        else:
            entity = entity_from_document(doc, self.templates.get(doc.get("type")) if isinstance(doc, dict) else None)
        self.broker.upsert_entity(entity)
        return SUCCESS, record.with_attributes(**{"entity.id": entity.id, "entity.type": entity.type})


class UpdateCatalogMetadata(Processor):
    kind = "update-catalog-metadata"

    def setup(self) -> None:
        self.publication = _publication(self.params)

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        entities = notification_entities(_json(record))
        metas = [generate_catalog_metadata(e, self.publication.for_type(e.type), self.runner.clock).to_dict()
                 for e in entities]
        return SUCCESS, record.with_attributes(**{"catalog.metadata": json.dumps(metas)})


class NgsiToCatalog(Processor):
    kind = "ngsi-to-catalog"

    def setup(self) -> None:
        self.catalog = self.service("catalog")
        self.publication = _publication(self.params)
        base = self.params.get("brokerUrl") or self.runner.services.get("brokerUrl")
        broker = self.runner.services.get("broker")
        if base:
            base = base.rstrip("/")
            self.access_url = lambda eid: (f"{base}/ngsi-ld/v1/entities/{urllib.parse.quote(eid, safe=':')}"
                                           "?options=keyValues")
        elif broker is not None and hasattr(broker, "entity_url"):
            self.access_url = broker.entity_url
        else:
            raise PipelineError(f"processor {self.name} needs a brokerUrl to mint resource access URLs")

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        entities = notification_entities(_json(record))
        metas = json.loads(record.attributes.get("catalog.metadata", "null")) or [None] * len(entities)
        if len(metas) != len(entities):
            raise BadRequest("catalog metadata does not line up with the notified entities")
        published = []
        for entity, meta in zip(entities, metas):
            result = publish_dataset_to_catalog([entity], self.publication, self.catalog, self.access_url,
                                                self.runner.clock,
                                                DatasetMetadata.from_dict(meta) if meta else None)
            published.extend(result.datasets)
        return SUCCESS, record.with_attributes(**{"catalog.datasets": ",".join(published)})


class PersistHistorical(Processor):
    kind = "persist-historical"

    def setup(self) -> None:
        self.historian = self.service("historian")

    def process(self, record: FlowRecord) -> tuple[str, FlowRecord]:
        body = _json(record)
        if not (isinstance(body, dict) and body.get("type") == "Notification"):
            doc = to_normalized(entity_from_document(body)) if isinstance(body, dict) else body
            body = {"type": "Notification", "notifiedAt": format_instant(self.runner.clock.now()), "data": [doc]}
        appended = self.historian.on_notification(body)
        count = appended if isinstance(appended, int) else len(appended)
        return SUCCESS, record.with_attributes(**{"history.appended": str(count)})


def _json(record: FlowRecord) -> Any:
    try:
        return record.json()
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"payload is not JSON: {exc}") from exc


def _publication(params: dict) -> PublicationParams:
    pub = params.get("publication")
    if isinstance(pub, dict):
        return PublicationParams.from_dict(pub)
    return PublicationParams.load(pub)


KINDS: dict[str, type[Processor]] = {
    cls.kind: cls for cls in (HttpPoll, HttpListen, DeviceGateway, Transform, Route, ToBroker,
                              UpdateCatalogMetadata, NgsiToCatalog, PersistHistorical)
}
