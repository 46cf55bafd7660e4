"""Open-data catalog: organizations, datasets and their resources.

Records live one JSON document per file under ``<data_dir>/organizations`` and
``<data_dir>/datasets``; the in-memory index is rebuilt from those at startup.
Without a data directory the catalog is purely in memory.
"""
from __future__ import annotations

import json
import re
import threading
import unicodedata
import urllib.parse
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable

from ..clock import SystemClock, format_instant, parse_instant
from ..errors import AlreadyExists, BadRequest, InvalidRequest, NotFound

SLUG = re.compile(r"^[a-z0-9-]+$")


def slugify(text: str) -> str:
    """Lowercase, hyphenate whitespace/punctuation and drop anything else."""
    text = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii").lower()
    text = re.sub(r"[^a-z0-9]+", "-", text)
    return text.strip("-")


def _check_slug(value: str, what: str) -> None:
    if not isinstance(value, str) or not SLUG.match(value):
        raise BadRequest(f"{what} slug must be lowercase alphanumerics and hyphens: {value!r}")


def _absolute(url: str | None) -> bool:
    if not url:
        return False
    parts = urllib.parse.urlsplit(url)
    return bool(parts.scheme and parts.netloc)


@dataclass(frozen=True)
class Organization:
    id: str
    display_name: str
    description: str | None = None


@dataclass(frozen=True)
class Resource:
    id: str
    title: str
    access_url: str
    format: str = ""
    download_url: str | None = None
    media_type: str | None = None
    byte_size: int | None = None

    def __post_init__(self):
        _check_slug(self.id, "resource")
        if not _absolute(self.access_url):
            raise BadRequest(f"resource accessURL must be absolute: {self.access_url!r}")
        if self.download_url is not None and not _absolute(self.download_url):
            raise BadRequest(f"resource downloadURL must be absolute: {self.download_url!r}")
        if self.byte_size is not None and (not isinstance(self.byte_size, int) or self.byte_size < 0):
            raise BadRequest("byteSize must be a non-negative integer")


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    title: str
    organization_id: str
    description: str = ""
    tags: tuple[str, ...] = ()
    license_id: str | None = None
    themes: tuple[str, ...] = ()
    issued: str | None = None
    modified: str | None = None
    resources: tuple[Resource, ...] = ()

    def __post_init__(self):
        _check_slug(self.id, "dataset")
        if not self.title:
            raise BadRequest("dataset title must be non-empty")
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "themes", tuple(self.themes))
        object.__setattr__(self, "resources", tuple(self.resources))
        if self.issued and self.modified and parse_instant(self.modified) < parse_instant(self.issued):
            raise BadRequest("dataset modified precedes issued")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetRecord":
        doc = dict(doc)
        doc["resources"] = tuple(Resource(**r) for r in doc.get("resources", ()))
        return cls(**doc)


class Catalog:
    def __init__(self, data_dir: str | Path | None = None, *, clock=None):
        self.clock = clock or SystemClock()
        self.data_dir = Path(data_dir) if data_dir else None
        self._orgs: dict[str, Organization] = {}
        self._datasets: dict[str, DatasetRecord] = {}
        self._lock = threading.RLock()
        if self.data_dir:
            self._load()

    # -- persistence ---------------------------------------------------------

    def _load(self) -> None:
        for path in sorted((self.data_dir / "organizations").glob("*.json")):
            org = Organization(**json.loads(path.read_text("utf-8")))
            self._orgs[org.id] = org
        for path in sorted((self.data_dir / "datasets").glob("*.json")):
            ds = DatasetRecord.from_dict(json.loads(path.read_text("utf-8")))
            self._datasets[ds.id] = ds

    def _write(self, kind: str, record_id: str, doc: dict | None) -> None:
        if not self.data_dir:
            return
        folder = self.data_dir / kind
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / f"{record_id}.json"
        if doc is None:
            path.unlink(missing_ok=True)
            return
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def _now(self) -> str:
        return format_instant(self.clock.now())

    # -- organizations -------------------------------------------------------

    def create_organization(self, org: Organization) -> str:
        _check_slug(org.id, "organization")
        with self._lock:
            if org.id in self._orgs:
                raise AlreadyExists(f"organization {org.id} already exists")
            self._orgs[org.id] = org
            self._write("organizations", org.id, asdict(org))
        return org.id

    def ensure_organization(self, org: Organization) -> str:
        with self._lock:
            if org.id not in self._orgs:
                self.create_organization(org)
        return org.id

    def get_organization(self, org_id: str) -> Organization:
        with self._lock:
            org = self._orgs.get(org_id)
        if org is None:
            raise NotFound(f"organization {org_id} not found")
        return org

    def list_organizations(self) -> list[Organization]:
        with self._lock:
            return sorted(self._orgs.values(), key=lambda o: o.id)

    def delete_organization(self, org_id: str) -> None:
        with self._lock:
            self.get_organization(org_id)
            if any(d.organization_id == org_id for d in self._datasets.values()):
                raise InvalidRequest(f"organization {org_id} still owns datasets")
            del self._orgs[org_id]
            self._write("organizations", org_id, None)

    # -- datasets ------------------------------------------------------------

    def create_dataset(self, ds: DatasetRecord) -> str:
        with self._lock:
            if ds.id in self._datasets:
                raise AlreadyExists(f"dataset {ds.id} already exists")
            if ds.organization_id not in self._orgs:
                raise NotFound(f"organization {ds.organization_id} not found")
            now = self._now()
            ds = replace(ds, issued=ds.issued or now, modified=ds.modified or ds.issued or now)
            self._store(ds)
        return ds.id

    def update_dataset(self, ds: DatasetRecord) -> str:
        """Replace descriptive fields of an existing dataset, keeping issued and resources."""
        with self._lock:
            current = self.get_dataset(ds.id)
            if ds.organization_id not in self._orgs:
                raise NotFound(f"organization {ds.organization_id} not found")
            updated = replace(ds, issued=current.issued, resources=current.resources,
                              modified=self._bumped(current))
            self._store(updated)
        return ds.id

    def upsert_dataset(self, ds: DatasetRecord) -> str:
        with self._lock:
            if ds.id in self._datasets:
                current = self._datasets[ds.id]
                same = replace(ds, issued=current.issued, modified=current.modified, resources=current.resources)
                if same == current:
                    return ds.id
                return self.update_dataset(ds)
            return self.create_dataset(ds)

    def _bumped(self, current: DatasetRecord) -> str:
        now = self._now()
        if current.modified and parse_instant(now) < parse_instant(current.modified):
            return current.modified
        return now

    def _store(self, ds: DatasetRecord) -> None:
        self._datasets[ds.id] = ds
        self._write("datasets", ds.id, ds.to_dict())

    def get_dataset(self, dataset_id: str) -> DatasetRecord:
        with self._lock:
            ds = self._datasets.get(dataset_id)
        if ds is None:
            raise NotFound(f"dataset {dataset_id} not found")
        return ds

    def list_datasets(self) -> list[DatasetRecord]:
        with self._lock:
            return sorted(self._datasets.values(), key=lambda d: d.id)

    def delete_dataset(self, dataset_id: str) -> None:
        with self._lock:
            self.get_dataset(dataset_id)
            del self._datasets[dataset_id]
            self._write("datasets", dataset_id, None)

    def upsert_resource(self, dataset_id: str, res: Resource) -> str:
        with self._lock:
            ds = self.get_dataset(dataset_id)
            resources = [r for r in ds.resources if r.id != res.id]
            position = next((i for i, r in enumerate(ds.resources) if r.id == res.id), len(resources))
            resources.insert(position, res)
            self._store(replace(ds, resources=tuple(resources), modified=self._bumped(ds)))
        return res.id

    # -- search --------------------------------------------------------------

    def search_datasets(self, free_text: str | None = None, *, tags: Iterable[str] | None = None,
                        organization: str | None = None, format: str | None = None,
                        limit: int = 10) -> list[DatasetRecord]:
        if not isinstance(limit, int) or limit < 1:
            raise BadRequest("limit must be a positive integer")
        scored = []
        for ds in self.list_datasets():
            hits = match_count(ds, free_text)
            if free_text and hits == 0:
                continue
            if not facets_match(ds, tags, organization, format):
                continue
            scored.append((-hits, ds.id, ds))
        scored.sort(key=lambda t: (t[0], t[1]))
        return [ds for _, _, ds in scored[:limit]]


def match_count(ds: DatasetRecord, free_text: str | None) -> int:
    """Number of fields (title, description, each tag) containing the text."""
    if not free_text:
        return 0
    needle = free_text.lower()
    fields = [ds.title, ds.description, *ds.tags]
    return sum(needle in f.lower() for f in fields)


def facets_match(ds: DatasetRecord, tags, organization, format) -> bool:
    if tags and not set(tags) <= set(ds.tags):
        return False
    if organization and ds.organization_id != organization:
        return False
    if format and not any(r.format.lower() == format.lower() for r in ds.resources):
        return False
    return True
