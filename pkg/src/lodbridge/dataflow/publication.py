"""Entity → catalog publication: one dataset per entity type, one resource per entity."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from ..catalog.store import DatasetRecord, Organization, Resource, slugify
from ..clock import SystemClock, format_instant
from ..entity import Entity, dumps, entity_from_document, to_key_values
from ..errors import BadRequest
from .transform import render_template


@dataclass(frozen=True)
class TypeParams:
    title_template: str
    description_template: str
    resource_title_template: str = "${type} Entity ${id}"
    tags: tuple[str, ...] = ()
    license: str | None = None
    themes: tuple[str, ...] = ()
    organization: Organization | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TypeParams":
        org = doc.get("organization")
        return cls(doc["titleTemplate"], doc["descriptionTemplate"],
                   doc.get("resourceTitleTemplate", "${type} Entity ${id}"), tuple(doc.get("tags", ())),
                   doc.get("license"), tuple(doc.get("themes", ())),
                   Organization(org["id"], org["displayName"], org.get("description")) if org else None)


@dataclass(frozen=True)
class PublicationParams:
    organization: Organization
    types: dict[str, TypeParams]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PublicationParams":
        org = doc["organization"]
        return cls(Organization(org["id"], org["displayName"], org.get("description")),
                   {t: TypeParams.from_dict(p) for t, p in doc.get("types", {}).items()})

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PublicationParams":
        if path is None:
            text = resources.files("lodbridge.data").joinpath("publication.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_dict(json.loads(text))

    def for_type(self, entity_type: str) -> TypeParams:
        if entity_type not in self.types:
            raise BadRequest(f"no publication parameters for entity type {entity_type!r}")
        return self.types[entity_type]

    def organization_for(self, entity_type: str) -> Organization:
        return self.for_type(entity_type).organization or self.organization


@dataclass(frozen=True)
class DatasetMetadata:
    dataset_id: str
    title: str
    description: str
    tags: tuple[str, ...]
    license: str | None
    themes: tuple[str, ...]
    modified: str

    def to_dict(self) -> dict:
        return {"id": self.dataset_id, "title": self.title, "description": self.description,
                "tags": list(self.tags), "license": self.license, "themes": list(self.themes),
                "modified": self.modified}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DatasetMetadata":
        return cls(doc["id"], doc["title"], doc["description"], tuple(doc["tags"]), doc.get("license"),
                   tuple(doc.get("themes", ())), doc["modified"])


def generate_catalog_metadata(entity: Entity, params: TypeParams, clock=None) -> DatasetMetadata:
    doc = to_key_values(entity)
    title = render_template(params.title_template, doc)
    if not slugify(title):
        raise BadRequest(f"title {title!r} yields an empty dataset slug")
    return DatasetMetadata(slugify(title), title, render_template(params.description_template, doc),
                           params.tags, params.license, params.themes,
                           format_instant((clock or SystemClock()).now()))


@dataclass
class CatalogPublicationResult:
    organizations: list[str] = field(default_factory=list)
    datasets: list[str] = field(default_factory=list)
    resources: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"organizations": self.organizations, "datasets": self.datasets,
                "resources": [list(r) for r in self.resources]}


def notification_entities(body: Any) -> list[Entity]:
    """Entities carried by a notification body, or a bare entity document."""
    if isinstance(body, Mapping) and body.get("type") == "Notification":
        docs = body.get("data")
        if not isinstance(docs, list):
            raise BadRequest("notification data must be an array")
    elif isinstance(body, Mapping):
        docs = [body]
    else:
        raise BadRequest("expected a notification or an entity document")
    return [entity_from_document(d) for d in docs]


def publish_dataset_to_catalog(entities: Iterable[Entity], params: PublicationParams, catalog,
                               access_url: Callable[[str], str], clock=None,
                               metadata: DatasetMetadata | None = None) -> CatalogPublicationResult:
    """Ensure organization, dataset and resource exist for each entity; safe to repeat."""
    result = CatalogPublicationResult()
    for entity in entities:
        tp = params.for_type(entity.type)
        org = params.organization_for(entity.type)
        meta = metadata or generate_catalog_metadata(entity, tp, clock)
        catalog.ensure_organization(org)
        catalog.upsert_dataset(DatasetRecord(meta.dataset_id, meta.title, org.id, meta.description,
                                             meta.tags, meta.license, meta.themes))
        kv = to_key_values(entity)
        res = Resource(slugify(entity.id), render_template(tp.resource_title_template, kv), access_url(entity.id),
                       "JSON", media_type="application/json", byte_size=len(dumps(kv).encode("utf-8")))
        catalog.upsert_resource(meta.dataset_id, res)
        for bucket, item in ((result.organizations, org.id), (result.datasets, meta.dataset_id),
                             (result.resources, (meta.dataset_id, res.id))):
            if item not in bucket:
                bucket.append(item)
    return result
