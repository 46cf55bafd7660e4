"""In-memory NGSI-LD entity store with subscriptions and queued notifications.

Writes and the notification enqueue they trigger happen under one lock, so a
notification can never be observed before the write that caused it. Delivery
is at-least-once: failed POSTs are retried with capped exponential backoff and
dead-lettered after ``max_attempts``.
"""
from __future__ import annotations

import itertools
import json
import logging
import re
import threading
import urllib.parse
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from ..clock import SystemClock, format_instant
from ..entity import Entity, from_normalized, merge_update, to_key_values, to_normalized
from ..errors import AlreadyExists, BadRequest, ImmutableField, NotFound
from ..httpd import http_request

log = logging.getLogger(__name__)

# transport(endpoint, body) -> True when the endpoint accepted the notification
Transport = Callable[[str, dict], bool]


def http_transport(endpoint: str, body: dict) -> bool:
    try:
        return http_request("POST", endpoint, body, timeout=5).ok
    except Exception as exc:  # noqa: BLE001 - any transport failure is a failed attempt
        log.debug("notification to %s failed: %s", endpoint, exc)
        return False


def _absolute_url(url: Any) -> bool:
    if not isinstance(url, str):
        return False
    parts = urllib.parse.urlsplit(url)
    return bool(parts.scheme in ("http", "https") and parts.netloc)


@dataclass(frozen=True)
class Subscription:
    id: str
    endpoint: str
    entity_types: tuple[str, ...] = ()
    watched_attributes: tuple[str, ...] = ()
    format: str = "normalized"
    active: bool = True
    created_at: str | None = None

    def __post_init__(self):
        if not _absolute_url(self.endpoint):
            raise BadRequest(f"notification endpoint must be an absolute URL: {self.endpoint!r}")
        if self.format not in ("normalized", "keyValues"):
            raise BadRequest(f"unknown notification format {self.format!r}")
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        object.__setattr__(self, "watched_attributes", tuple(self.watched_attributes))

    def matches(self, entity_type: str, changed: Iterable[str]) -> bool:
        if not self.active:
            return False
        if self.entity_types and entity_type not in self.entity_types:
            return False
        if not self.watched_attributes:
            return True
        return bool(set(changed) & set(self.watched_attributes))

    def to_dict(self) -> dict:
        doc = {
            "id": self.id,
            "type": "Subscription",
            "entities": [{"type": t} for t in self.entity_types],
            "watchedAttributes": list(self.watched_attributes),
            "notification": {"endpoint": {"uri": self.endpoint, "accept": "application/json"},
                             "format": self.format},
            "isActive": self.active,
        }
        if self.created_at:
            doc["createdAt"] = self.created_at
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping, *, default_id: str | None = None) -> "Subscription":
        if not isinstance(doc, Mapping):
            raise BadRequest("subscription must be a JSON object")
        notification = doc.get("notification") or {}
        endpoint = (notification.get("endpoint") or {}).get("uri") or doc.get("endpoint")
        types = [e.get("type") for e in doc.get("entities", []) if isinstance(e, Mapping)]
        return cls(
            id=doc.get("id") or default_id,
            endpoint=endpoint,
            entity_types=tuple(t for t in types if t),
            watched_attributes=tuple(doc.get("watchedAttributes") or ()),
            format=notification.get("format", doc.get("format", "normalized")),
            active=doc.get("isActive", True),
            created_at=doc.get("createdAt"),
        )


@dataclass
class Notification:
    subscription_id: str
    data: list[dict]
    revision: int
    entity_id: str
    attempt: int = 1
    notified_at: str | None = None
    not_before: datetime | None = None
    id: str = ""

    def body(self) -> dict:
        return {"id": self.id, "type": "Notification", "subscriptionId": self.subscription_id,
                "notifiedAt": self.notified_at, "data": self.data}


@dataclass
class DeliveryReport:
    delivered: int = 0
    retried: int = 0
    dead_lettered: int = 0
    attempts: list[tuple[str, int, bool]] = field(default_factory=list)  # (notification id, attempt, ok)

    def merge(self, other: "DeliveryReport") -> None:
        self.delivered += other.delivered
        self.retried += other.retried
        self.dead_lettered += other.dead_lettered
        self.attempts.extend(other.attempts)


_PREDICATE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(==|<|>)\s*(.+?)\s*$")


@dataclass(frozen=True)
class Predicate:
    attribute: str
    op: str
    literal: Any

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        m = _PREDICATE.match(text or "")
        if not m:
            raise BadRequest(f"malformed query predicate {text!r}")
        name, op, raw = m.groups()
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            literal: Any = raw[1:-1]
        else:
            try:
                literal = json.loads(raw)
            except json.JSONDecodeError:
                literal = raw
        if op != "==" and (isinstance(literal, bool) or not isinstance(literal, (int, float))):
            raise BadRequest(f"operator {op} needs a numeric literal")
        return cls(name, op, literal)

    def test(self, entity: Entity) -> bool:
        head, _, rest = self.attribute.partition(".")
        attr = entity.attributes.get(head)
        if attr is None:
            return False
        value = attr.value
        for part in filter(None, rest.split(".")):
            if not isinstance(value, dict) or part not in value:
                return False
            value = value[part]
        if self.op == "==":
            return value == self.literal
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        return value < self.literal if self.op == "<" else value > self.literal


class ContextBroker:
    def __init__(self, *, clock=None, max_attempts: int = 5, backoff_base: float = 0.1,
                 backoff_cap: float = 30.0, transport: Transport | None = None,
                 snapshot_path: str | Path | None = None):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.clock = clock or SystemClock()
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.transport = transport or http_transport
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None
        self._entities: dict[str, Entity] = {}
        self._subscriptions: dict[str, Subscription] = {}
        self._queue: list[Notification] = []
        self.dead_letters: list[Notification] = []
        self._lock = threading.RLock()
        self._dispatch_lock = threading.Lock()
        self._wakeup = threading.Condition(self._lock)
        self._revision = 0
        self._sub_ids = itertools.count(1)
        self._notif_ids = itertools.count(1)
        # ordered history of ("commit", revision) and ("attempt", revision, ok) events
        self.events: list[tuple] = []
        if self.snapshot_path and self.snapshot_path.exists():
            self.load_snapshot(self.snapshot_path)

    # -- entities ------------------------------------------------------------

    def create_entity(self, entity: Entity) -> str:
        with self._lock:
            if entity.id in self._entities:
                raise AlreadyExists(f"entity {entity.id} already exists")
            self._entities[entity.id] = entity
            self._commit(entity, entity.attributes.keys())
        return entity.id

    def get_entity(self, entity_id: str, representation: str = "normalized"):
        with self._lock:
            entity = self._entities.get(entity_id)
        if entity is None:
            raise NotFound(f"entity {entity_id} not found")
        if representation == "keyValues":
            return to_key_values(entity)
        if representation == "normalized":
            return to_normalized(entity)
        if representation == "entity":
            return entity
        raise BadRequest(f"unknown representation {representation!r}")

    def query_entities(self, type_filter: str | None = None, predicate: Predicate | str | None = None,
                       limit: int = 20) -> list[Entity]:
        if not isinstance(limit, int) or limit < 1:
            raise BadRequest("limit must be a positive integer")
        if isinstance(predicate, str):
            predicate = Predicate.parse(predicate)
        with self._lock:
            snapshot = list(self._entities.values())
        hits = [e for e in snapshot
                if (type_filter is None or e.type == type_filter)
                and (predicate is None or predicate.test(e))]
        hits.sort(key=lambda e: e.id)
        return hits[:limit]

    def update_attrs(self, entity_id: str, fragment: Mapping[str, Any]) -> Entity:
        with self._lock:
            current = self._entities.get(entity_id)
            if current is None:
                raise NotFound(f"entity {entity_id} not found")
            updated = merge_update(current, fragment)
            changed = [k for k in fragment if k not in ("id", "type", "@context")]
            if not changed:
                return current
            self._entities[entity_id] = updated
            self._commit(updated, changed)
            return updated

    def upsert_entity(self, entity: Entity) -> str:
        """Create, or overwrite every attribute carried by ``entity`` if it exists."""
        with self._lock:
            current = self._entities.get(entity.id)
            if current is None:
                return self.create_entity(entity)
            if current.type != entity.type:
                raise ImmutableField(f"entity {entity.id} has type {current.type}, not {entity.type}")
            self.update_attrs(entity.id, dict(entity.attributes))
            return entity.id

    def delete_entity(self, entity_id: str) -> None:
        with self._lock:
            if entity_id not in self._entities:
                raise NotFound(f"entity {entity_id} not found")
            del self._entities[entity_id]
            self._revision += 1
            self.events.append(("delete", self._revision, entity_id))

    def entity_count(self) -> int:
        with self._lock:
            return len(self._entities)

    # -- subscriptions -------------------------------------------------------

    def create_subscription(self, sub: Subscription | Mapping) -> str:
        with self._lock:
            if isinstance(sub, Mapping):
                sub = Subscription.from_dict(sub, default_id=self._next_sub_id())
            if not sub.id:
                sub = replace(sub, id=self._next_sub_id())
            if sub.id in self._subscriptions:
                raise AlreadyExists(f"subscription {sub.id} already exists")
            if sub.created_at is None:
                sub = replace(sub, created_at=format_instant(self.clock.now()))
            self._subscriptions[sub.id] = sub
            return sub.id

    def _next_sub_id(self) -> str:
        while True:
            candidate = f"urn:ngsi-ld:Subscription:{next(self._sub_ids)}"
            if candidate not in self._subscriptions:
                return candidate

    def get_subscription(self, sub_id: str) -> Subscription:
        with self._lock:
            sub = self._subscriptions.get(sub_id)
        if sub is None:
            raise NotFound(f"subscription {sub_id} not found")
        return sub

    def delete_subscription(self, sub_id: str) -> None:
        with self._lock:
            if self._subscriptions.pop(sub_id, None) is None:
                raise NotFound(f"subscription {sub_id} not found")
            self._queue = [n for n in self._queue if n.subscription_id != sub_id]

    def subscriptions(self) -> list[Subscription]:
        with self._lock:
            return sorted(self._subscriptions.values(), key=lambda s: s.id)

    # -- notifications -------------------------------------------------------

    def _commit(self, entity: Entity, changed: Iterable[str]) -> None:
        # caller holds self._lock
        changed = list(changed)
        self._revision += 1
        self.events.append(("commit", self._revision, entity.id))
        for sub in self._subscriptions.values():
            if not sub.matches(entity.type, changed):
                continue
            doc = to_key_values(entity) if sub.format == "keyValues" else to_normalized(entity)
            self._queue.append(Notification(
                subscription_id=sub.id, data=[doc], revision=self._revision, entity_id=entity.id,
                id=f"urn:ngsi-ld:Notification:{next(self._notif_ids)}"))
        self._wakeup.notify_all()

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)

    def _backoff(self, attempt: int) -> timedelta:
        return timedelta(seconds=min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))

    def dispatch_pending(self) -> DeliveryReport:
        """Attempt every queued notification that is due; never raises on delivery failure."""
        report = DeliveryReport()
        with self._dispatch_lock:
            now = self.clock.now()
            with self._lock:
                due = [n for n in self._queue if n.not_before is None or n.not_before <= now]
                self._queue = [n for n in self._queue if not (n.not_before is None or n.not_before <= now)]
            requeue = []
            for n in due:
                with self._lock:
                    sub = self._subscriptions.get(n.subscription_id)
                if sub is None:
                    continue
                n.notified_at = format_instant(self.clock.now())
                ok = bool(self.transport(sub.endpoint, n.body()))
                with self._lock:
                    self.events.append(("attempt", n.revision, n.id, n.attempt, ok))
                report.attempts.append((n.id, n.attempt, ok))
                if ok:
                    report.delivered += 1
                elif n.attempt >= self.max_attempts:
                    report.dead_lettered += 1
                    with self._lock:
                        self.dead_letters.append(n)
                    log.warning("notification %s to %s dead-lettered after %d attempts",
                                n.id, sub.endpoint, n.attempt)
                else:
                    report.retried += 1
                    n.attempt += 1
                    n.not_before = self.clock.now() + self._backoff(n.attempt - 1)
                    requeue.append(n)
            with self._lock:
                self._queue.extend(requeue)
        return report

    def next_due(self) -> datetime | None:
        with self._lock:
            times = [n.not_before for n in self._queue]
        if not times:
            return None
        if any(t is None for t in times):
            return self.clock.now()
        return min(times)

    def drain(self, max_rounds: int = 10_000) -> DeliveryReport:
        """Dispatch until the queue is empty, sleeping on the broker clock between retries."""
        total = DeliveryReport()
        for _ in range(max_rounds):
            total.merge(self.dispatch_pending())
            due = self.next_due()
            if due is None:
                break
            self.clock.sleep_until(due)
        return total

    def wait_for_work(self, timeout: float) -> None:
        with self._lock:
            if not self._queue:
                self._wakeup.wait(timeout)

    # -- persistence ---------------------------------------------------------

    def save_snapshot(self, path: str | Path | None = None) -> Path:
        target = Path(path or self.snapshot_path)
        with self._lock:
            doc = {"entities": [to_normalized(e) for e in sorted(self._entities.values(), key=lambda e: e.id)],
                   "subscriptions": [s.to_dict() for s in self.subscriptions()]}
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(json.dumps(doc, indent=2, ensure_ascii=False), encoding="utf-8")
        tmp.replace(target)
        return target

    def load_snapshot(self, path: str | Path) -> None:
        doc = json.loads(Path(path).read_text("utf-8"))
        with self._lock:
            self._entities = {e["id"]: from_normalized(e) for e in doc.get("entities", [])}
            self._subscriptions = {}
            for s in doc.get("subscriptions", []):
                sub = Subscription.from_dict(s)
                self._subscriptions[sub.id] = sub


class Dispatcher:
    """Background worker that keeps delivering queued notifications."""

    def __init__(self, broker: ContextBroker, poll_interval: float = 0.05):
        self.broker = broker
        self.poll_interval = poll_interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="broker-dispatch", daemon=True)

    def _run(self) -> None:
        clock = self.broker.clock
        while not self._stop.is_set():
            self.broker.dispatch_pending()
            due = self.broker.next_due()
            if due is None:
                self.broker.wait_for_work(self.poll_interval)
                continue
            now = clock.now()
            if due > now:
                clock.sleep_until(min(due, now + timedelta(seconds=self.poll_interval)))

    def start(self) -> "Dispatcher":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        with self.broker._lock:
            self.broker._wakeup.notify_all()
        self._thread.join(timeout=5)
