"""Append-only history of attribute changes, fed by broker notifications.

Each segment file holds records framed as ``<10-digit length> <json>\\n``; a
record whose frame is incomplete is a torn write and is cut off on load.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable

from ..clock import SystemClock, canonical_instant, format_instant, parse_instant
from ..entity import RESERVED, Attribute
from ..errors import BadRequest, LodError

log = logging.getLogger(__name__)

CSV_HEADER = ("seq", "entityId", "entityType", "attrName", "value", "observedAt", "receivedAt")
LENGTH_DIGITS = 10


class CorruptLog(LodError):
    kind = "CorruptLog"
    title = "History log is corrupt"


@dataclass(frozen=True)
class HistoryRecord:
    seq: int
    entity_id: str
    entity_type: str
    attr_name: str
    value: Any
    observed_at: str
    received_at: str

    @property
    def dedupe_key(self) -> tuple[str, str, str]:
        return (self.entity_id, self.attr_name, self.observed_at)

    def to_dict(self) -> dict:
        return {"seq": self.seq, "entityId": self.entity_id, "entityType": self.entity_type,
                "attrName": self.attr_name, "value": self.value, "observedAt": self.observed_at,
                "receivedAt": self.received_at}

    @classmethod
    def from_dict(cls, doc: dict) -> "HistoryRecord":
        return cls(doc["seq"], doc["entityId"], doc["entityType"], doc["attrName"], doc["value"],
                   doc["observedAt"], doc["receivedAt"])

    def csv_value(self) -> str:
        return self.value if isinstance(self.value, str) else json.dumps(self.value)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def stored_value(value: Any) -> Any:
    """Scalars are kept as-is; objects and arrays become canonical JSON text."""
    return canonical_json(value) if isinstance(value, (dict, list)) else value


def frame(doc: dict) -> bytes:
    body = json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return f"{len(body):0{LENGTH_DIGITS}d} ".encode("ascii") + body + b"\n"


def read_frames(data: bytes) -> tuple[list[dict], int]:
    """Decode complete frames; returns them and the byte offset where valid data ends."""
    docs, pos = [], 0
    while pos < len(data):
        head = data[pos:pos + LENGTH_DIGITS + 1]
        if len(head) < LENGTH_DIGITS + 1 or not head[:LENGTH_DIGITS].isdigit() or head[-1:] != b" ":
            break
        length = int(head[:LENGTH_DIGITS])
        start = pos + LENGTH_DIGITS + 1
        end = start + length
        if end + 1 > len(data) or data[end:end + 1] != b"\n":
            break
        try:
            docs.append(json.loads(data[start:end].decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError):
            break
        pos = end + 1
    return docs, pos


class Historian:
    def __init__(self, directory: str | Path, *, segment_size: int = 1 << 20, clock=None, durable: bool = False):
        if segment_size < 1:
            raise BadRequest("segment size must be positive")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.segment_size = segment_size
        self.clock = clock or SystemClock()
        self.durable = durable
        self._records: list[HistoryRecord] = []
        self._keys: set[tuple[str, str, str]] = set()
        self._lock = threading.Lock()
        self._segment = 0
        self._load()

    def _segments(self) -> list[Path]:
        found = []
        for path in self.directory.glob("segment-*.log"):
            suffix = path.stem.split("-", 1)[1]
            if suffix.isdigit():
                found.append((int(suffix), path))
        return [p for _, p in sorted(found)]

    def _load(self) -> None:
        segments = self._segments()
        for i, path in enumerate(segments):
            data = path.read_bytes()
            docs, valid = read_frames(data)
            if valid < len(data):
                if i != len(segments) - 1:
                    raise CorruptLog(f"{path.name} is damaged before the active segment")
                log.warning("discarding torn tail of %s (%d bytes)", path.name, len(data) - valid)
                with path.open("r+b") as fh:
                    fh.truncate(valid)
            for doc in docs:
                rec = HistoryRecord.from_dict(doc)
                self._records.append(rec)
                self._keys.add(rec.dedupe_key)
        if segments:
            self._segment = int(segments[-1].stem.split("-", 1)[1])

    def _append(self, records: list[HistoryRecord]) -> None:
        if not records:
            return
        payload = b"".join(frame(r.to_dict()) for r in records)
        path = self.directory / f"segment-{self._segment}.log"
        if path.exists() and path.stat().st_size and path.stat().st_size + len(payload) > self.segment_size:
            self._segment += 1
            path = self.directory / f"segment-{self._segment}.log"
        with path.open("ab") as fh:
            fh.write(payload)
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())

    # -- ingestion -----------------------------------------------------------

    def on_notification(self, body: dict) -> list[HistoryRecord]:
        """Append one record per attribute of each notified entity, skipping known dedupe keys."""
        rows = _extract(body)
        received = format_instant(self.clock.now())
        with self._lock:
            seq = self._records[-1].seq if self._records else 0
            fresh, keys = [], set()
            for entity_id, entity_type, name, value, observed in rows:
                key = (entity_id, name, observed)
                if key in self._keys or key in keys:
                    continue
                keys.add(key)
                seq += 1
                fresh.append(HistoryRecord(seq, entity_id, entity_type, name, stored_value(value),
                                           observed, received))
            self._append(fresh)
            self._records.extend(fresh)
            self._keys |= keys
        return fresh

    # -- reading -------------------------------------------------------------

    def records(self) -> list[HistoryRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def query(self, entity_id: str | None = None, attr_name: str | None = None,
              start: str | datetime | None = None, end: str | datetime | None = None) -> list[HistoryRecord]:
        """Records with ``start <= observedAt < end``, ordered by (observedAt, seq)."""
        lo = _instant(start)
        hi = _instant(end)
        if lo is not None and hi is not None and lo > hi:
            raise BadRequest("query range start is after its end")
        hits = []
        for r in self.records():
            if entity_id is not None and r.entity_id != entity_id:
                continue
            if attr_name is not None and r.attr_name != attr_name:
                continue
            t = parse_instant(r.observed_at)
            if (lo is not None and t < lo) or (hi is not None and t >= hi):
                continue
            hits.append((t, r.seq, r))
        hits.sort(key=lambda x: (x[0], x[1]))
        return [r for _, _, r in hits]

    def export(self, path: str | Path, fmt: str = "csv", **query) -> int:
        records = self.query(**query)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(render(records, fmt), encoding="utf-8")
        return len(records)


def render(records: Iterable[HistoryRecord], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([r.seq, r.entity_id, r.entity_type, r.attr_name, r.csv_value(),
                             r.observed_at, r.received_at])
        return buf.getvalue()
    if fmt == "jsonl":
        return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)
    raise BadRequest(f"unknown export format {fmt!r}")


def parse_jsonl(text: str) -> list[HistoryRecord]:
    return [HistoryRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def _instant(value: str | datetime | None) -> datetime | None:
    if value is None or isinstance(value, datetime):
        return value
    try:
        return parse_instant(value)
    except ValueError as exc:
        raise BadRequest(f"bad timestamp {value!r}") from exc


def _extract(body: Any) -> list[tuple[str, str, str, Any, str]]:
    """Flatten a notification into (entityId, type, attr, value, observedAt) rows, or reject it."""
    if not isinstance(body, dict) or not isinstance(body.get("data"), list):
        raise BadRequest("notification must be an object with a data array")
    notified = body.get("notifiedAt")
    try:
        notified = canonical_instant(notified) if notified else None
    except ValueError as exc:
        raise BadRequest(f"bad notifiedAt {notified!r}") from exc
    rows = []
    for doc in body["data"]:
        if not isinstance(doc, dict) or not isinstance(doc.get("id"), str) or not isinstance(doc.get("type"), str):
            raise BadRequest("every notified entity needs an id and a type")
        for name, raw in doc.items():
            if name in RESERVED or name.startswith("@"):
                continue
            attr = Attribute.from_normalized(name, raw)
            observed = attr.observed_at or notified
            if observed is None:
                raise BadRequest(f"attribute {name} has no observedAt and the notification no notifiedAt")
            rows.append((doc["id"], doc["type"], name, attr.value, observed))
    return rows
