"""The unit of data moving between processors."""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from typing import Any


@dataclass(frozen=True)
class FlowRecord:
    payload: bytes
    attributes: dict[str, str] = field(default_factory=dict)
    lineage_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        if not isinstance(self.payload, bytes):
            raise TypeError("payload must be bytes")
        for k, v in self.attributes.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise TypeError("record attributes map strings to strings")

    def json(self) -> Any:
        return json.loads(self.payload.decode("utf-8"))

    def with_payload(self, payload: bytes | Any, **attributes: str) -> "FlowRecord":
        """Same lineage, new content; non-bytes payloads are JSON-encoded."""
        if not isinstance(payload, bytes):
            payload = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        return replace(self, payload=payload, attributes={**self.attributes, **attributes})

    def with_attributes(self, **attributes: str) -> "FlowRecord":
        return replace(self, attributes={**self.attributes, **attributes})

    def to_dict(self) -> dict:
        try:
            body: Any = self.payload.decode("utf-8")
        except UnicodeDecodeError:
            body = self.payload.hex()
        return {"lineageId": self.lineage_id, "attributes": dict(self.attributes), "payload": body}
