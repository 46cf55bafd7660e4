"""Harvesting DCAT catalogs into per-source named graphs.

Only catalog metadata is stored; distribution URLs stay pointers back to the
source portals. Layout under the store directory::

    sources.json
    provenance.json
    graphs/<sourceId>.ttl
"""
from __future__ import annotations

import json
import logging
import threading
import urllib.parse
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

from ..catalog.store import SLUG
from ..clock import SystemClock, format_instant
from ..errors import BadRequest, LodError, NotFound
from ..httpd import http_request
from ..rdf import FORMATS, Graph, parse, serialize
from ..rdf.terms import DCAT, RDF, IRI
from .sparql import QueryPlan, execute_query, parse_query

log = logging.getLogger(__name__)
Fetcher = Callable[[str], str]


@dataclass(frozen=True)
class SourcePortal:
    id: str
    endpoint: str
    format: str = "rdfxml"
    last_harvest: str | None = None

    def __post_init__(self):
        if not SLUG.match(self.id):
            raise BadRequest(f"source id must be a slug: {self.id!r}")
        parts = urllib.parse.urlsplit(self.endpoint)
        if not parts.scheme or (parts.scheme != "file" and not parts.netloc):
            raise BadRequest(f"source endpoint must be absolute: {self.endpoint!r}")
        if self.format not in FORMATS:
            raise BadRequest(f"source format must be one of {FORMATS}")

    def to_dict(self) -> dict:
        return {"id": self.id, "endpoint": self.endpoint, "format": self.format, "lastHarvest": self.last_harvest}

    @classmethod
    def from_dict(cls, doc: dict) -> "SourcePortal":
        return cls(doc["id"], doc["endpoint"], doc.get("format", "rdfxml"), doc.get("lastHarvest"))


@dataclass(frozen=True)
class Provenance:
    harvested_at: str
    dataset_count: int
    triple_count: int
    endpoint: str


@dataclass(frozen=True)
class HarvestReport:
    source: str
    ok: bool
    added: int = 0
    updated: int = 0
    removed: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {"source": self.source, "ok": self.ok, "datasetsAdded": self.added,
                "datasetsUpdated": self.updated, "datasetsRemoved": self.removed, "error": self.error}


def fetch(url: str, timeout: float = 30.0) -> str:
    parts = urllib.parse.urlsplit(url)
    if parts.scheme == "file":
        return Path(urllib.parse.unquote(parts.path)).read_text("utf-8")
    res = http_request("GET", url, timeout=timeout)
    if not res.ok:
        raise LodError(f"GET {url} answered {res.status}")
    return res.body.decode("utf-8")


def _datasets(g: Graph) -> dict:
    nodes = g.subjects(IRI(RDF + "type"), IRI(DCAT + "Dataset"))
    return {n: frozenset(g.triples(n, None, None)) for n in nodes}


class NamedGraphStore:
    def __init__(self, directory: str | Path | None = None, *, clock=None, fetcher: Fetcher = fetch):
        self.directory = Path(directory) if directory else None
        self.clock = clock or SystemClock()
        self.fetcher = fetcher
        self.sources: dict[str, SourcePortal] = {}
        self.graphs: dict[str, Graph] = {}
        self.provenance: dict[str, Provenance] = {}
        self._lock = threading.RLock()
        self._source_locks: dict[str, threading.Lock] = {}
        if self.directory:
            self._load()

    # -- persistence ---------------------------------------------------------

    def _load(self) -> None:
        sources = self.directory / "sources.json"
        if sources.exists():
            for doc in json.loads(sources.read_text("utf-8")):
                src = SourcePortal.from_dict(doc)
                self.sources[src.id] = src
        prov = self.directory / "provenance.json"
        if prov.exists():
            for sid, doc in json.loads(prov.read_text("utf-8")).items():
                path = self.directory / "graphs" / f"{sid}.ttl"
                if path.exists():
                    self.graphs[sid] = parse(path.read_text("utf-8"), "turtle")
                    self.provenance[sid] = Provenance(**doc)

    def _save(self) -> None:
        if not self.directory:
            return
        (self.directory / "graphs").mkdir(parents=True, exist_ok=True)
        docs = [s.to_dict() for s in sorted(self.sources.values(), key=lambda s: s.id)]
        _atomic_write(self.directory / "sources.json", json.dumps(docs, indent=2))
        prov = {sid: asdict(p) for sid, p in sorted(self.provenance.items())}
        _atomic_write(self.directory / "provenance.json", json.dumps(prov, indent=2))
        for sid, g in self.graphs.items():
            _atomic_write(self.directory / "graphs" / f"{sid}.ttl", serialize(g, "turtle"))

    # -- sources -------------------------------------------------------------

    def add_source(self, source: SourcePortal) -> None:
        with self._lock:
            previous = self.sources.get(source.id)
            if previous and previous.last_harvest and not source.last_harvest:
                source = SourcePortal(source.id, source.endpoint, source.format, previous.last_harvest)
            self.sources[source.id] = source
            self._save()

    def get_source(self, source_id: str) -> SourcePortal:
        with self._lock:
            if source_id not in self.sources:
                raise NotFound(f"unknown harvest source {source_id}")
            return self.sources[source_id]

    # -- harvesting ----------------------------------------------------------

    def harvest(self, source_id: str) -> HarvestReport:
        """Replace the source's named graph with a fresh parse; keep the old one on failure."""
        source = self.get_source(source_id)
        with self._lock:
            lock = self._source_locks.setdefault(source_id, threading.Lock())
        with lock:
            try:
                fresh = parse(self.fetcher(source.endpoint), source.format, base=source.endpoint)
            except (LodError, OSError, ValueError) as exc:
                log.warning("harvest of %s failed: %s", source_id, exc)
                return HarvestReport(source_id, False, error=str(exc))
            with self._lock:
                old = _datasets(self.graphs.get(source_id, Graph()))
                new = _datasets(fresh)
                added = len(new.keys() - old.keys())
                removed = len(old.keys() - new.keys())
                updated = sum(1 for k in new.keys() & old.keys() if new[k] != old[k])
                now = format_instant(self.clock.now())
                self.graphs[source_id] = fresh
                self.provenance[source_id] = Provenance(now, len(new), len(fresh), source.endpoint)
                self.sources[source_id] = SourcePortal(source.id, source.endpoint, source.format, now)
                self._save()
            return HarvestReport(source_id, True, added, updated, removed)

    def harvest_all(self) -> list[HarvestReport]:
        return [self.harvest(sid) for sid in sorted(self.sources)]

    # -- querying ------------------------------------------------------------

    def union(self) -> Graph:
        with self._lock:
            g = Graph()
            for sid in sorted(self.graphs):
                g = g | self.graphs[sid]
            return g

    def query(self, plan: QueryPlan | str):
        if isinstance(plan, str):
            plan = parse_query(plan)
        return plan, execute_query(plan, self.union())


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
