"""Device registry and the measure → entity bridge used by the device gateway."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..clock import canonical_instant
from ..entity import Attribute, Entity
from ..errors import BadRequest, UnknownDevice


@dataclass(frozen=True)
class DeviceEntry:
    device_id: str
    entity_type: str
    entity_id: str
    attributes: dict[str, str]
    unit_codes: dict[str, str] = field(default_factory=dict)
    static: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, device_id: str, doc: Mapping) -> "DeviceEntry":
        try:
            return cls(device_id, doc["entityType"], doc["entityId"], dict(doc["attributes"]),
                       dict(doc.get("unitCodes", {})), dict(doc.get("static", {})))
        except KeyError as exc:
            raise BadRequest(f"device {device_id}: missing {exc.args[0]!r}") from exc


class DeviceRegistry:
    def __init__(self, entries: Mapping[str, DeviceEntry]):
        self.entries = dict(entries)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DeviceRegistry":
        return cls({dev: DeviceEntry.from_dict(dev, entry) for dev, entry in doc.items()})

    @classmethod
    def load(cls, path: str | Path | None = None) -> "DeviceRegistry":
        if path is None:
            text = resources.files("lodbridge.data").joinpath("fixtures/devices.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_dict(json.loads(text))

    def get(self, device_id: str) -> DeviceEntry:
        if device_id not in self.entries:
            raise UnknownDevice(f"device {device_id!r} is not registered")
        return self.entries[device_id]


def ingest_device_measure(measure: Any, registry: DeviceRegistry, device_id: str | None = None) -> Entity:
    """Map a raw measure ``{dev, <field>: value, observedAt?}`` to the device's registered entity."""
    if not isinstance(measure, Mapping):
        raise BadRequest("measure must be a JSON object")
    device_id = device_id or measure.get("dev")
    if not isinstance(device_id, str):
        raise BadRequest("measure does not name its device")
    if "dev" in measure and measure["dev"] != device_id:
        raise BadRequest(f"measure names device {measure['dev']!r} but was sent for {device_id!r}")
    entry = registry.get(device_id)
    observed = measure.get("observedAt")
    if observed is not None:
        try:
            observed = canonical_instant(observed)
        except (TypeError, ValueError) as exc:
            raise BadRequest(f"bad observedAt {observed!r}") from exc
    attrs = {}
    for field_name, attr_name in entry.attributes.items():
        if field_name not in measure:
            continue
        value = measure[field_name]
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise BadRequest(f"measure field {field_name!r} must be a scalar")
        attrs[attr_name] = Attribute(attr_name, value, unit_code=entry.unit_codes.get(attr_name),
                                     observed_at=observed)
    if not attrs:
        raise BadRequest(f"measure from {device_id} carries none of {sorted(entry.attributes)}")
    for name, doc in entry.static.items():
        attrs.setdefault(name, Attribute.from_normalized(name, doc))
    return Entity(entry.entity_id, entry.entity_type, attrs)
