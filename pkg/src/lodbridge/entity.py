"""NGSI-LD entity subset and Smart Data Model templates.

The normalized representation (attribute objects carrying ``type``/``value``
and metadata) is the canonical form; the key-values document is a projection
of it.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .clock import canonical_instant
from .errors import BadRequest, ImmutableField, TypeMismatch

DEFAULT_CONTEXT = "https://uri.etsi.org/ngsi-ld/v1/ngsi-ld-core-context.jsonld"
KINDS = ("Property", "GeoProperty", "Relationship")
SHAPES = ("number", "string", "boolean", "geo", "object", "relationship")
RESERVED = ("id", "type", "@context")


def canonical_number(value: Any) -> Any:
    """Collapse integral floats to ints, recursively (``0.0`` serializes as ``0``)."""
    if isinstance(value, bool):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, dict):
        return {k: canonical_number(v) for k, v in value.items()}
    if isinstance(value, list):
        return [canonical_number(v) for v in value]
    return value


@dataclass(frozen=True)
class Attribute:
    name: str
    value: Any
    kind: str = "Property"
    unit_code: str | None = None
    observed_at: str | None = None

    def __post_init__(self):
        if not self.name or self.name in RESERVED:
            raise BadRequest(f"invalid attribute name {self.name!r}")
        if self.kind not in KINDS:
            raise BadRequest(f"attribute {self.name}: unknown kind {self.kind!r}")
        if self.kind == "Relationship":
            if not isinstance(self.value, str) or not self.value:
                raise BadRequest(f"relationship {self.name} needs a target entity id")
            if self.unit_code is not None:
                raise BadRequest(f"relationship {self.name} cannot carry a unitCode")
        object.__setattr__(self, "value", canonical_number(copy.deepcopy(self.value)))
        if self.observed_at is not None:
            try:
                object.__setattr__(self, "observed_at", canonical_instant(self.observed_at))
            except ValueError as exc:
                raise BadRequest(f"attribute {self.name}: {exc}") from exc

    def to_normalized(self) -> dict:
        if self.kind == "Relationship":
            doc: dict[str, Any] = {"type": "Relationship", "object": self.value}
        else:
            doc = {"type": self.kind, "value": copy.deepcopy(self.value)}
        if self.unit_code is not None:
            doc["unitCode"] = self.unit_code
        if self.observed_at is not None:
            doc["observedAt"] = self.observed_at
        return doc

    @classmethod
    def from_normalized(cls, name: str, doc: Any) -> "Attribute":
        if not isinstance(doc, dict) or doc.get("type") not in KINDS:
            # bare value: treat as a Property, as brokers commonly accept
            return cls(name, doc)
        kind = doc["type"]
        if kind == "Relationship":
            if "object" not in doc:
                raise BadRequest(f"relationship {name} lacks 'object'")
            value = doc["object"]
        else:
            if "value" not in doc:
                raise BadRequest(f"attribute {name} lacks 'value'")
            value = doc["value"]
        return cls(name, value, kind, doc.get("unitCode"), doc.get("observedAt"))


def _check_id(entity_id: Any) -> str:
    if not isinstance(entity_id, str) or not entity_id.startswith("urn:") or len(entity_id) <= 4:
        raise BadRequest(f"entity id must be a URN, got {entity_id!r}")
    return entity_id


@dataclass(frozen=True)
class Entity:
    id: str
    type: str
    attributes: dict[str, Attribute] = field(default_factory=dict)
    context: tuple[str, ...] = (DEFAULT_CONTEXT,)

    def __post_init__(self):
        _check_id(self.id)
        if not isinstance(self.type, str) or not self.type:
            raise BadRequest("entity type must be a non-empty string")
        attrs = dict(self.attributes)
        for name, attr in attrs.items():
            if name != attr.name:
                raise BadRequest(f"attribute key {name!r} does not match attribute name {attr.name!r}")
        object.__setattr__(self, "attributes", attrs)
        ctx = tuple(self.context) if self.context else (DEFAULT_CONTEXT,)
        object.__setattr__(self, "context", ctx)

    def __getitem__(self, name: str) -> Attribute:
        return self.attributes[name]

    def value(self, name: str, default: Any = None) -> Any:
        attr = self.attributes.get(name)
        return default if attr is None else attr.value


def to_key_values(entity: Entity) -> dict:
    doc: dict[str, Any] = {"id": entity.id, "type": entity.type}
    for name, attr in entity.attributes.items():
        doc[name] = copy.deepcopy(attr.value)
    doc["@context"] = list(entity.context)
    return doc


def to_normalized(entity: Entity) -> dict:
    doc: dict[str, Any] = {"id": entity.id, "type": entity.type}
    for name, attr in entity.attributes.items():
        doc[name] = attr.to_normalized()
    doc["@context"] = list(entity.context)
    return doc


def _context_of(document: Mapping) -> tuple[str, ...]:
    ctx = document.get("@context")
    if ctx is None:
        return (DEFAULT_CONTEXT,)
    if isinstance(ctx, str):
        return (ctx,)
    if isinstance(ctx, list) and all(isinstance(c, str) for c in ctx):
        return tuple(ctx)
    raise BadRequest("@context must be a string or a list of strings")


def _require_header(document: Any) -> None:
    if not isinstance(document, Mapping):
        raise BadRequest("entity document must be a JSON object")
    if "id" not in document:
        raise BadRequest("entity document lacks 'id'")
    if "type" not in document:
        raise BadRequest("entity document lacks 'type'")


def from_key_values(document: Mapping, template: "DataModelTemplate | None" = None) -> Entity:
    _require_header(document)
    schemas = template.schemas_by_name() if template else {}
    attrs = {}
    for name, value in document.items():
        if name in RESERVED:
            continue
        schema = schemas.get(name)
        if schema is None:
            attrs[name] = Attribute(name, value)
        elif schema.value_shape == "relationship":
            attrs[name] = Attribute(name, value, "Relationship")
        else:
            kind = "GeoProperty" if schema.value_shape == "geo" else "Property"
            attrs[name] = Attribute(name, value, kind, schema.unit_code)
    return Entity(document["id"], document["type"], attrs, _context_of(document))


def from_normalized(document: Mapping) -> Entity:
    _require_header(document)
    attrs = {name: Attribute.from_normalized(name, doc)
             for name, doc in document.items() if name not in RESERVED}
    return Entity(document["id"], document["type"], attrs, _context_of(document))


def is_normalized(document: Mapping) -> bool:
    """True when every attribute member is an NGSI-LD attribute object."""
    members = [v for k, v in document.items() if k not in RESERVED]
    return bool(members) and all(isinstance(v, dict) and v.get("type") in KINDS for v in members)


def entity_from_document(document: Mapping, template: "DataModelTemplate | None" = None) -> Entity:
    """Accept either representation."""
    if is_normalized(document):
        return from_normalized(document)
    return from_key_values(document, template)


def fragment_attributes(fragment: Mapping[str, Any]) -> dict[str, Attribute]:
    """Turn a PATCH-style fragment (attribute objects or bare values) into Attributes."""
    attrs = {}
    for name, doc in fragment.items():
        if name == "@context":
            continue
        if isinstance(doc, Attribute):
            attrs[name] = doc if doc.name == name else replace(doc, name=name)
        else:
            attrs[name] = Attribute.from_normalized(name, doc)
    return attrs


def merge_update(entity: Entity, fragment: Mapping[str, Any]) -> Entity:
    """Overwrite the named attributes; id and type cannot change."""
    for key in ("id", "type"):
        if key in fragment and fragment[key] != getattr(entity, key):
            raise ImmutableField(f"attempt to change entity {key}")
    updates = fragment_attributes({k: v for k, v in fragment.items() if k not in ("id", "type")})
    if not updates:
        return entity
    merged = dict(entity.attributes)
    merged.update(updates)
    return replace(entity, attributes=merged)


# -- templates ---------------------------------------------------------------

@dataclass(frozen=True)
class AttributeSchema:
    name: str
    kind: str
    value_shape: str
    required: bool = False
    unit_code: str | None = None


@dataclass(frozen=True)
class DataModelTemplate:
    type_name: str
    attribute_schemas: tuple[AttributeSchema, ...]

    def __post_init__(self):
        names = [s.name for s in self.attribute_schemas]
        if len(set(names)) != len(names):
            raise ValueError(f"template {self.type_name}: duplicate attribute names")
        if not any(s.required for s in self.attribute_schemas):
            raise ValueError(f"template {self.type_name}: needs at least one required attribute")
        for s in self.attribute_schemas:
            if s.value_shape not in SHAPES or s.kind not in KINDS:
                raise ValueError(f"template {self.type_name}: bad schema for {s.name}")

    def schemas_by_name(self) -> dict[str, AttributeSchema]:
        return {s.name: s for s in self.attribute_schemas}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DataModelTemplate":
        schemas = tuple(
            AttributeSchema(a["name"], a.get("kind", "Property"), a["valueShape"],
                            bool(a.get("required", False)), a.get("unitCode"))
            for a in doc["attributeSchemas"]
        )
        return cls(doc["typeName"], schemas)


def load_templates(path: str | Path | None = None) -> dict[str, DataModelTemplate]:
    """Read a template file; ``None`` loads the bundled one."""
    if path is None:
        text = resources.files("lodbridge.data").joinpath("templates.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return {t.type_name: t for t in map(DataModelTemplate.from_dict, json.loads(text))}


@dataclass(frozen=True)
class Finding:
    attribute: str
    violation: str  # missing | wrong-shape | wrong-kind
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    entity_id: str
    type_name: str
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings


def _shape_of(attr: Attribute) -> str:
    v = attr.value
    if attr.kind == "Relationship":
        return "relationship"
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, dict):
        if isinstance(v.get("type"), str) and "coordinates" in v:
            return "geo"
        return "object"
    return type(v).__name__


def _shape_matches(expected: str, attr: Attribute) -> bool:
    actual = _shape_of(attr)
    if expected == "object":
        return actual in ("object", "geo")
    return actual == expected


def validate_entity(entity: Entity, template: DataModelTemplate) -> ValidationReport:
    if template.type_name != entity.type:
        raise TypeMismatch(f"template {template.type_name} cannot validate entity of type {entity.type}")
    findings = []
    for schema in template.attribute_schemas:
        attr = entity.attributes.get(schema.name)
        if attr is None:
            if schema.required:
                findings.append(Finding(schema.name, "missing", "required attribute absent"))
            continue
        if not _shape_matches(schema.value_shape, attr):
            findings.append(Finding(schema.name, "wrong-shape",
                                    f"expected {schema.value_shape}, got {_shape_of(attr)}"))
        elif schema.kind == "Relationship" and attr.kind != "Relationship":
            findings.append(Finding(schema.name, "wrong-kind", f"expected Relationship, got {attr.kind}"))
    return ValidationReport(entity.id, entity.type, tuple(findings))


def dumps(document: Any) -> str:
    """Canonical JSON text used for golden comparisons."""
    return json.dumps(document, indent=2, ensure_ascii=False)
