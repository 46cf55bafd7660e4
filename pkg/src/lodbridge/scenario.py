"""The bundled Santander scenario: provider and consumer flows end to end.

Every service runs in-process on loopback. Timestamps come from injected
manual clocks, so ``scenario-report.json`` is identical across runs; wall
durations go to ``timings.json`` instead.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import socket
import statistics
import string
import time
import urllib.parse
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import yaml

from . import mqa, plotting
from .broker.api import BrokerClient
from .broker.api import build_router as broker_router
from .broker.core import ContextBroker, Subscription
from .catalog.api import CatalogClient
from .catalog.api import build_router as catalog_router
from .catalog.store import Catalog
from .clock import ManualClock, parse_instant
from .consumer.service import ConsumerService
from .consumer.service import build_router as consumer_router
from .dataflow.pipeline import PipelineRunner, RunReport, load_pipeline
from .errors import LodError
from .harvester import NamedGraphStore, SourcePortal
from .harvester.sparql import parse_query, results_json
from .historian import Historian, HistorianClient, parse_jsonl
from .historian import build_router as historian_router
from .httpd import Response, Router, Server, http_request
from .rdf import parse as parse_rdf
from .rdf import serialize
from .rdf.shapes import load_shapes, validate_shapes
from .rdf.terms import DCT, IRI, Literal, isomorphic

log = logging.getLogger(__name__)

SCENARIO_START = "2021-11-10T15:00:00Z"
PORTAL_BASE = "http://opendata.santander.example"
PHASES = ("Creation & Selection", "Harmonization", "Publication & Linking", "Curation",
          "Discovery & Exploration", "Exploitation")
REQUIRED_FIXTURES = ("aemet.json", "weather_observed.json", "devices.json", "bike_feed.csv",
                     "traffic_measures.json", "portal_catalog.ttl", "consumer_query.rq")
CHECKSUM_FILE = "CHECKSUMS.sha256"
WEATHER_ID = "urn:WeatherObserved:Santander"
PORTAL_BIKE_DATASET = "http://santander.example.org/dataset/bike-stations"
PROBE_STATION = "urn:BikeHireDockingStation:santander-001"
PROBE_AT = "2021-11-17T08:30:00Z"
EXPECTED_DATASETS = {"santander-aemet-weather": 1, "santander-traffic-intensity": 3,
                     "santander-bike-hire-docking-stations": 2}
DCAT_AP_LITERALS = (("title", "Santander AEMET Weather"), ("description", "Santander weather in real time"))
DISTRIBUTION_TITLE = "Santander WeatherObserved Entity"


class ScenarioError(LodError):
    kind = "ScenarioError"
    title = "Scenario step failed"


def bundled_fixtures() -> Path:
    return Path(str(resources.files("lodbridge.data").joinpath("fixtures")))


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def verify_fixtures(directory: str | Path) -> dict[str, str]:
    """Check the pinned checksums; every scenario input must be listed and intact."""
    directory = Path(directory)
    listing = directory / CHECKSUM_FILE
    if not listing.is_file():
        raise ScenarioError(f"no {CHECKSUM_FILE} in fixture directory {directory}")
    pinned = {}
    for line in listing.read_text("utf-8").splitlines():
        if line.strip():
            digest, name = line.split(maxsplit=1)
            pinned[name.lstrip("*")] = digest
    for name in REQUIRED_FIXTURES:
        if name not in pinned:
            raise ScenarioError(f"fixture {name} has no pinned checksum")
    for name, digest in sorted(pinned.items()):
        path = directory / name
        if not path.is_file():
            raise ScenarioError(f"fixture {name} is missing")
        if sha256(path) != digest:
            raise ScenarioError(f"fixture {name} does not match its pinned checksum")
    return pinned


def canonical(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def read_bike_feed(path: Path) -> list[dict]:
    rows = []
    with path.open(newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            rows.append({**row, "bikes": int(row["bikes"]), "freeSlots": int(row["freeSlots"])})
    return rows


def group_by_mean_oracle(csv_text: str, station: str, at: str) -> float:
    """Mean of the station's rows that share ``at``'s weekday and UTC hour (station mean if none)."""
    target = parse_instant(at).astimezone(timezone.utc)
    cell, everything = [], []
    for row in csv.DictReader(io.StringIO(csv_text)):
        if row["entityId"] != station or row["attrName"] != "availableBikeNumber":
            continue
        stamp = row["observedAt"]
        if not stamp.endswith("Z"):
            raise ScenarioError(f"oracle expects UTC timestamps, got {stamp!r}")
        seen = datetime.strptime(stamp[:19], "%Y-%m-%dT%H:%M:%S")
        value = float(row["value"])
        everything.append(value)
        if (seen.weekday(), seen.hour) == (target.weekday(), target.hour):
            cell.append(value)
    if not everything:
        raise ScenarioError(f"oracle has no rows for {station}")
    return statistics.fmean(cell or everything)


@dataclass
class StepResult:
    name: str
    phase: str
    status: str
    details: dict = field(default_factory=dict)
    error: str | None = None
    logs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = {"name": self.name, "phase": self.phase, "status": self.status, "details": self.details}
        if self.error is not None:
            doc["error"] = self.error
            doc["logs"] = self.logs
        return doc


@dataclass
class ScenarioReport:
    steps: list[StepResult]
    artifacts: list[str]
    timings: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(s.status == "pass" for s in self.steps)

    @property
    def failed_step(self) -> str | None:
        return next((s.name for s in self.steps if s.status == "fail"), None)

    def to_dict(self) -> dict:
        phases = {p: [s.name for s in self.steps if s.phase == p] for p in PHASES}
        return {"scenario": "santander", "clock": SCENARIO_START, "status": "pass" if self.passed else "fail",
                "failedStep": self.failed_step, "phases": phases, "steps": [s.to_dict() for s in self.steps],
                "artifacts": self.artifacts}


class _Capture(logging.Handler):
    def __init__(self):
        super().__init__(logging.INFO)
        self.lines: list[str] = []
        self.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))

    def emit(self, record: logging.LogRecord) -> None:
        self.lines.append(self.format(record))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioError(message)


def _flow_summary(report: RunReport) -> dict:
    return {"sourcesOut": report.sources_out, "delivered": report.delivered, "deadLettered": report.dead_lettered,
            "inFlight": report.in_flight, "pollErrors": report.poll_errors, "conserved": report.conserved,
            "received": {name: p["received"] for name, p in report.processors.items()}}


class Scenario:
    def __init__(self, workdir: str | Path, *, fixtures_dir: str | Path | None = None,
                 ports_base: int | None = None, host: str = "127.0.0.1"):
        self.workdir = Path(workdir)
        self.fixtures = Path(fixtures_dir) if fixtures_dir else bundled_fixtures()
        self.ports_base = ports_base
        self.host = host
        self.clock = ManualClock(SCENARIO_START)
        self.flow_clock = ManualClock(SCENARIO_START)
        self.servers: list[Server] = []
        self.runners: list[PipelineRunner] = []
        self.state: dict[str, Any] = {}

    # -- plumbing -----------------------------------------------------------------

    def _port(self, offset: int) -> int:
        return 0 if self.ports_base is None else self.ports_base + offset

    def _serve(self, router: Router, offset: int) -> str:
        server = Server(router, self.host, self._port(offset)).start()
        self.servers.append(server)
        return server.url

    def _pipeline(self, name: str, **values) -> Any:
        text = resources.files("lodbridge.data").joinpath(f"pipelines/{name}").read_text("utf-8")
        return load_pipeline(yaml.safe_load(string.Template(text).substitute(values)))

    def _fixture(self, name: str) -> Path:
        return self.fixtures / name

    def close(self) -> None:
        for runner in self.runners:
            if not runner.stopping:
                runner.stop()
        for server in reversed(self.servers):
            server.close()
        self.servers.clear()

    # -- steps ----------------------------------------------------------------------

    def steps(self) -> list[tuple[str, str, Callable[[], dict]]]:
        return [
            ("load-fixtures", PHASES[0], self.load_fixtures),
            ("start-services", PHASES[0], self.start_services),
            ("provider-flows", PHASES[1], self.provider_flows),
            ("weather-golden", PHASES[1], self.weather_golden),
            ("publish-catalog", PHASES[2], self.publish_catalog),
            ("export-dcat-ap", PHASES[2], self.export_dcat_ap),
            ("mqa-score", PHASES[3], self.mqa_score),
            ("harvest", PHASES[4], self.harvest),
            ("query", PHASES[4], self.query),
            ("history-export", PHASES[5], self.history_export),
            ("train", PHASES[5], self.train),
            ("predict", PHASES[5], self.predict),
        ]

    def load_fixtures(self) -> dict:
        pinned = verify_fixtures(self.fixtures)
        feed = read_bike_feed(self._fixture("bike_feed.csv"))
        measures = json.loads(self._fixture("traffic_measures.json").read_text("utf-8"))
        _require(len(feed) > 0 and len(measures) > 0, "bike feed and traffic measures must be non-empty")
        self.state.update(feed=feed, measures=measures)
        return {"fixtures": sorted(pinned), "bikeRows": len(feed), "stations": len({r["station"] for r in feed}),
                "trafficMeasures": len(measures)}

    def start_services(self) -> dict:
        wd = self.workdir
        self.broker = ContextBroker(clock=self.clock, max_attempts=3, backoff_base=0.05)
        self.catalog = Catalog(wd / "catalog-data", clock=self.clock)
        self.historian = Historian(wd / "history" / "log", clock=self.clock)
        self.broker_url = self._serve(broker_router(self.broker), 0)
        self.catalog_url = self._serve(catalog_router(self.catalog, portal_base=PORTAL_BASE,
                                                      title="Santander open data",
                                                      description="Smart-city datasets published from "
                                                                  "the context broker"), 1)
        self.historian_url = self._serve(historian_router(self.historian), 2)

        stubs = Router()
        aemet = self._fixture("aemet.json").read_bytes()
        portal = self._fixture("portal_catalog.ttl").read_bytes()
        feed = iter(self.state["feed"])
        stubs.add("GET", "/aemet/observacion/convencional/todas",
                  lambda req: Response(200, aemet, "application/json"))
        stubs.add("GET", "/portal/catalog.ttl", lambda req: Response(200, portal, "text/turtle"))

        def next_row(req):
            row = next(feed, None)
            return Response(200, row) if row is not None else Response(404, {"detail": "feed exhausted"})

        stubs.add("GET", "/bikes/next", next_row)
        self.stub_url = self._serve(stubs, 3)

        services = {"broker": BrokerClient(self.broker_url), "brokerUrl": self.broker_url,
                    "catalog": CatalogClient(self.catalog_url), "historian": HistorianClient(self.historian_url)}
        self.services = services
        publication = self._pipeline("publication.yaml")
        publication.host, publication.port = self.host, self._port(5)
        self.publication = PipelineRunner(publication, services=services, clock=self.flow_clock,
                                          dead_letter_dir=wd / "dead-letters")
        self.runners.append(self.publication)
        self.publication.start()
        types = ["WeatherObserved", "TrafficFlowObserved", "BikeHireDockingStation"]
        for sub_id, source in (("urn:ngsi-ld:Subscription:catalog", "catalog"),
                               ("urn:ngsi-ld:Subscription:history", "history")):
            self.broker.create_subscription(Subscription(sub_id, f"{self.publication.url}/ingest/{source}",
                                                         tuple(types)))
        return {"services": ["broker", "catalog", "historian", "stub-sources", "publication-flow"],
                "subscriptions": len(self.broker.subscriptions())}

    def provider_flows(self) -> dict:
        provider = self._pipeline(
            "provider.yaml", aemetUrl=self.stub_url + "/aemet/observacion/convencional/todas",
            bikeFeedUrl=self.stub_url + "/bikes/next", bikeRows=len(self.state["feed"]),
            deviceRegistry=str(self._fixture("devices.json")), tcpPort=self._port(7) if self.ports_base else 0)
        provider.host, provider.port = self.host, self._port(6)
        runner = PipelineRunner(provider, services=self.services, clock=self.flow_clock,
                                dead_letter_dir=self.workdir / "dead-letters")
        self.runners.append(runner)
        runner.start()
        measures = self.state["measures"]
        # all but the last measure arrive over HTTP; the last one over the TCP topic protocol
        for m in measures[:-1]:
            res = http_request("POST", f"{runner.url}/devices/{m['dev']}/measures", m)
            _require(res.status == 202, f"device gateway answered {res.status}")
        tcp_host, tcp_port = runner.processor("traffic-gateway").tcp_address
        last = measures[-1]
        with socket.create_connection((tcp_host, tcp_port), timeout=10) as conn:
            conn.sendall(f"devices/{last['dev']}/measures {json.dumps(last)}\n".encode("utf-8"))
            reply = conn.makefile("r", encoding="utf-8").readline()
        _require(reply.startswith("OK "), f"device gateway TCP reply: {reply.strip()}")
        _require(runner.wait_idle(60), "provider flows did not become idle")
        report = runner.stop()
        _require(report.conserved and report.in_flight == 0, "provider flow lost records")
        _require(report.dead_lettered == 0 and report.poll_errors == 0, "provider flow had failures")
        counts = {t: len(self.broker.query_entities(t, None, 1000))
                  for t in ("WeatherObserved", "TrafficFlowObserved", "BikeHireDockingStation")}
        _require(counts == {"WeatherObserved": 1, "TrafficFlowObserved": 3, "BikeHireDockingStation": 2},
                 f"unexpected broker contents {counts}")
        return {"flow": _flow_summary(report), "brokerEntities": counts,
                "pendingNotifications": self.broker.pending()}

    def weather_golden(self) -> dict:
        expected = json.loads(self._fixture("weather_observed.json").read_text("utf-8"))
        actual = self.broker.get_entity(WEATHER_ID, "keyValues")
        _require(canonical(actual) == canonical(expected),
                 f"WeatherObserved differs from the golden document: {canonical(actual)}")
        return {"entity": WEATHER_ID, "canonicalSha256": hashlib.sha256(canonical(actual).encode()).hexdigest()}

    def publish_catalog(self) -> dict:
        delivery = self.broker.drain()
        _require(delivery.dead_lettered == 0 and self.broker.pending() == 0, "notifications were not delivered")
        _require(self.publication.wait_idle(120), "publication flow did not become idle")
        report = self.publication.stop()
        _require(report.conserved and report.in_flight == 0, "publication flow lost records")
        _require(report.dead_lettered == 0, "publication flow dead-lettered records")
        datasets = {d.id: len(d.resources) for d in self.catalog.list_datasets()}
        _require(datasets == EXPECTED_DATASETS, f"unexpected catalog datasets {datasets}")
        orgs = [o.id for o in self.catalog.list_organizations()]
        self.broker.save_snapshot(self.workdir / "broker-snapshot" / "broker.json")
        return {"notificationsDelivered": delivery.delivered, "flow": _flow_summary(report),
                "organizations": orgs, "datasets": datasets, "historyRecords": len(self.historian)}

    def export_dcat_ap(self) -> dict:
        exports = self.workdir / "exports"
        exports.mkdir(parents=True, exist_ok=True)
        client = CatalogClient(self.catalog_url)
        res = http_request("GET", client.export_url("rdf", "dcat_ap"))
        _require(res.ok, f"catalog export answered {res.status}")
        text = res.body.decode("utf-8")
        (exports / "catalog.rdf").write_text(text, encoding="utf-8")
        graph = parse_rdf(text, "rdfxml")
        conformance = validate_shapes(graph, load_shapes())
        _require(conformance.conforms, f"catalog export violates shapes: {conformance.failures[:3]}")
        per_dataset = {}
        for ds_id in sorted(EXPECTED_DATASETS):
            res = http_request("GET", f"{self.catalog_url}/dataset/{ds_id}.rdf?profile=dcat_ap")
            _require(res.ok, f"dataset export {ds_id} answered {res.status}")
            (exports / f"{ds_id}.rdf").write_text(res.body.decode("utf-8"), encoding="utf-8")
            per_dataset[ds_id] = parse_rdf(res.body.decode("utf-8"), "rdfxml")
        weather = per_dataset["santander-aemet-weather"]
        ds_node = IRI(f"{PORTAL_BASE}/dataset/santander-aemet-weather")
        for prop, value in DCAT_AP_LITERALS:
            _require((ds_node, IRI(DCT + prop), Literal(value)) in weather, f"weather export lacks dct:{prop}")
        dist_titles = {t.object.value for t in weather.triples(None, IRI(DCT + "title"), None)
                       if t.subject != ds_node}
        _require(DISTRIBUTION_TITLE in dist_titles, "weather export lacks the distribution title")
        _require(isomorphic(parse_rdf(serialize(weather, "rdfxml"), "rdfxml"), weather),
                 "weather export does not round-trip")
        self.state["catalog_graph"] = graph
        return {"catalogTriples": len(graph), "conforms": True, "shapeChecks": len(conformance.results),
                "datasetTriples": {k: len(v) for k, v in sorted(per_dataset.items())},
                "weatherLiterals": [v for _, v in DCAT_AP_LITERALS] + [DISTRIBUTION_TITLE]}

    def mqa_score(self) -> dict:
        graph = self.state["catalog_graph"]
        checker = mqa.HttpChecker(timeout=5)
        reports = mqa.score_graph(graph, checker=checker)
        dist = mqa.score_catalog(reports)
        doc = {"datasets": [r.to_dict() for r in reports], "distribution": dist.to_dict()}
        (self.workdir / "mqa-report.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
        figures = self.workdir / "figures"
        plotting.plot_dimension_scores(reports, figures / "mqa-dimensions.png")
        plotting.plot_rating_distribution(dist, figures / "mqa-ratings.png")
        return {"scores": {r.dataset.rsplit("/", 1)[-1]: {"total": r.total, "rating": r.rating} for r in reports},
                "maxPossible": reports[0].max_possible if reports else 0, "distribution": dist.counts}

    def harvest(self) -> dict:
        self.store = NamedGraphStore(self.workdir / "harvest-store", clock=self.clock)
        self.store.add_source(SourcePortal("santander-portal", self.stub_url + "/portal/catalog.ttl", "turtle"))
        self.store.add_source(SourcePortal("lodbridge-catalog", CatalogClient(self.catalog_url).export_url(),
                                           "rdfxml"))
        reports = self.store.harvest_all()
        failed = [r.source for r in reports if not r.ok]
        _require(not failed, f"harvest failed for {failed}")
        return {"sources": {r.source: {"added": r.added, "updated": r.updated, "removed": r.removed}
                            for r in reports},
                "unionTriples": len(self.store.union())}

    def query(self) -> dict:
        text = self._fixture("consumer_query.rq").read_text("utf-8")
        plan, rows = self.store.query(parse_query(text))
        result = results_json(plan, rows)
        (self.workdir / "query-result.json").write_text(json.dumps(result, indent=2), encoding="utf-8")
        values = [[t.value for t in row] for row in rows]
        _require(values == [[PORTAL_BIKE_DATASET]], f"query returned {values}")
        return {"rows": values}

    def history_export(self) -> dict:
        folder = self.workdir / "history" / "exports"
        n_csv = self.historian.export(folder / "availableBikeNumber.csv", "csv", attr_name="availableBikeNumber")
        n_all = self.historian.export(folder / "all.jsonl", "jsonl")
        reparsed = parse_jsonl((folder / "all.jsonl").read_text("utf-8"))
        _require(reparsed == self.historian.query(), "jsonl export does not re-parse to the stored records")
        _require(n_csv == len(self.state["feed"]), f"expected {len(self.state['feed'])} bike rows, got {n_csv}")
        return {"bikeRecords": n_csv, "allRecords": n_all}

    def train(self) -> dict:
        self.consumer = ConsumerService(self.services["broker"], HistorianClient(self.historian_url), self.clock)
        self.consumer_url = self._serve(consumer_router(self.consumer), 4)
        res = http_request("POST", self.consumer_url + "/train")
        _require(res.ok, f"train answered {res.status}")
        return res.json()

    def predict(self) -> dict:
        query = urllib.parse.urlencode({"station": PROBE_STATION, "at": PROBE_AT})
        res = http_request("GET", f"{self.consumer_url}/predict?{query}")
        _require(res.ok, f"predict answered {res.status}")
        body = res.json()
        csv_text = (self.workdir / "history" / "exports" / "availableBikeNumber.csv").read_text("utf-8")
        oracle = group_by_mean_oracle(csv_text, PROBE_STATION, PROBE_AT)
        _require(body["predictedAvailableBikes"] == oracle,
                 f"prediction {body['predictedAvailableBikes']} differs from oracle {oracle}")
        flow = [step for step, _ in self.consumer.request_log]
        _require(flow == ["request", "collect_latest", "predict", "response"], f"unexpected request flow {flow}")
        return {"station": PROBE_STATION, "at": PROBE_AT, "prediction": body["predictedAvailableBikes"],
                "oracle": oracle, "confidence": body["confidence"], "latest": body.get("latest"),
                "requestFlow": flow}

    # -- driver ---------------------------------------------------------------------

    def run(self) -> ScenarioReport:
        if self.workdir.exists() and any(self.workdir.iterdir()):
            raise ScenarioError(f"work directory {self.workdir} is not empty")
        self.workdir.mkdir(parents=True, exist_ok=True)
        results: list[StepResult] = []
        timings: dict[str, float] = {}
        pkg_logger = logging.getLogger("lodbridge")
        failed = False
        try:
            for name, phase, fn in self.steps():
                if failed:
                    results.append(StepResult(name, phase, "skipped"))
                    continue
                capture = _Capture()
                pkg_logger.addHandler(capture)
                started = time.perf_counter()
                try:
                    details = fn()
                    results.append(StepResult(name, phase, "pass", details))
                except Exception as exc:  # noqa: BLE001 - any step failure aborts with its logs
                    log.error("scenario step %s failed: %s", name, exc)
                    detail = exc.detail if isinstance(exc, LodError) else f"{type(exc).__name__}: {exc}"
                    results.append(StepResult(name, phase, "fail", error=detail, logs=capture.lines[-50:]))
                    failed = True
                finally:
                    timings[name] = round(time.perf_counter() - started, 4)
                    pkg_logger.removeHandler(capture)
        finally:
            self.close()
        artifacts = sorted(str(p.relative_to(self.workdir)) for p in self.workdir.rglob("*") if p.is_file())
        report = ScenarioReport(results, artifacts + ["scenario-report.json", "timings.json"], timings)
        (self.workdir / "scenario-report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                                           encoding="utf-8")
        (self.workdir / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
        return report


def run_scenario(workdir: str | Path, *, fixtures_dir: str | Path | None = None,
                 ports_base: int | None = None) -> ScenarioReport:
    return Scenario(workdir, fixtures_dir=fixtures_dir, ports_base=ports_base).run()
