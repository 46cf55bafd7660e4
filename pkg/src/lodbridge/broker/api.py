"""HTTP surface of the context broker and a client speaking it."""
from __future__ import annotations

import urllib.parse
from typing import Any, Mapping

from ..entity import Entity, entity_from_document, from_normalized, to_key_values, to_normalized
from ..errors import BadRequest, NotFound, from_problem
from ..httpd import Request, Response, Router, http_request
from .core import ContextBroker, Predicate, Subscription

BASE = "/ngsi-ld/v1"


def _limit(query: Mapping[str, str]) -> int:
    raw = query.get("limit", "20")
    try:
        value = int(raw)
    except ValueError as exc:
        raise BadRequest(f"limit must be an integer, got {raw!r}") from exc
    if value < 1:
        raise BadRequest("limit must be positive")
    return value


def _representation(query: Mapping[str, str]) -> str:
    options = {o.strip() for o in query.get("options", "").split(",")}
    return "keyValues" if "keyValues" in options else "normalized"


def build_router(broker: ContextBroker) -> Router:
    r = Router()

    @r.route("POST", BASE + "/entities")
    def create(req: Request) -> Response:
        doc = req.json()
        if not isinstance(doc, dict):
            raise BadRequest("entity body must be a JSON object")
        entity_id = broker.create_entity(entity_from_document(doc))
        return Response(201, None, headers={"Location": f"{BASE}/entities/{entity_id}"})

    @r.route("GET", BASE + "/entities")
    def query(req: Request) -> Response:
        q = req.query.get("q")
        hits = broker.query_entities(req.query.get("type") or None, Predicate.parse(q) if q else None,
                                     _limit(req.query))
        rep = _representation(req.query)
        return Response(200, [_render(e, rep) for e in hits])

    @r.route("GET", BASE + "/entities/{entity_id}")
    def get(req: Request) -> Response:
        return Response(200, broker.get_entity(req.params["entity_id"], _representation(req.query)))

    @r.route("PATCH", BASE + "/entities/{entity_id}/attrs")
    def patch(req: Request) -> Response:
        doc = req.json()
        if not isinstance(doc, dict):
            raise BadRequest("attribute fragment must be a JSON object")
        broker.update_attrs(req.params["entity_id"], doc)
        return Response(204)

    @r.route("DELETE", BASE + "/entities/{entity_id}")
    def delete(req: Request) -> Response:
        broker.delete_entity(req.params["entity_id"])
        return Response(204)

    @r.route("POST", BASE + "/subscriptions")
    def subscribe(req: Request) -> Response:
        sub_id = broker.create_subscription(req.json() or {})
        return Response(201, None, headers={"Location": f"{BASE}/subscriptions/{sub_id}"})

    @r.route("GET", BASE + "/subscriptions/{sub_id}")
    def get_sub(req: Request) -> Response:
        return Response(200, broker.get_subscription(req.params["sub_id"]).to_dict())

    @r.route("DELETE", BASE + "/subscriptions/{sub_id}")
    def delete_sub(req: Request) -> Response:
        broker.delete_subscription(req.params["sub_id"])
        return Response(204)

    return r


def _render(entity: Entity, representation: str) -> dict:
    return to_key_values(entity) if representation == "keyValues" else to_normalized(entity)


class BrokerClient:
    """Remote broker with the same call surface as :class:`ContextBroker`."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _url(self, path: str, **query) -> str:
        q = {k: v for k, v in query.items() if v is not None}
        return self.base_url + BASE + path + ("?" + urllib.parse.urlencode(q) if q else "")

    def _call(self, method: str, url: str, payload: Any = None):
        res = http_request(method, url, payload, timeout=self.timeout)
        if not res.ok:
            try:
                body = res.json()
            except ValueError:
                body = None
            raise from_problem(res.status, body)
        return res

    def entity_url(self, entity_id: str, key_values: bool = True) -> str:
        return self._url("/entities/" + urllib.parse.quote(entity_id, safe=":"),
                         options="keyValues" if key_values else None)

    def create_entity(self, entity: Entity) -> str:
        self._call("POST", self._url("/entities"), to_normalized(entity))
        return entity.id

    def get_entity(self, entity_id: str, representation: str = "normalized"):
        res = self._call("GET", self.entity_url(entity_id, representation == "keyValues"))
        doc = res.json()
        return from_normalized(doc) if representation == "entity" else doc

    def query_entities(self, type_filter: str | None = None, predicate: Predicate | str | None = None,
                       limit: int = 20) -> list[Entity]:
        if isinstance(predicate, Predicate):
            predicate = f"{predicate.attribute}{predicate.op}{predicate.literal}"
        res = self._call("GET", self._url("/entities", type=type_filter, q=predicate, limit=limit))
        return [from_normalized(d) for d in res.json()]

    def update_attrs(self, entity_id: str, fragment: Mapping[str, Any]) -> None:
        body = {k: (v.to_normalized() if hasattr(v, "to_normalized") else v) for k, v in fragment.items()}
        self._call("PATCH", self._url("/entities/" + urllib.parse.quote(entity_id, safe=":") + "/attrs"), body)

    def upsert_entity(self, entity: Entity) -> str:
        try:
            self.get_entity(entity.id)
        except NotFound:
            return self.create_entity(entity)
        self.update_attrs(entity.id, dict(entity.attributes))
        return entity.id

    def delete_entity(self, entity_id: str) -> None:
        self._call("DELETE", self._url("/entities/" + urllib.parse.quote(entity_id, safe=":")))

    def create_subscription(self, sub: Subscription | Mapping) -> str:
        doc = sub.to_dict() if isinstance(sub, Subscription) else dict(sub)
        if isinstance(sub, Subscription) and not sub.id:
            doc.pop("id")
        res = self._call("POST", self._url("/subscriptions"), doc)
        return res.headers.get("location", "").rsplit("/", 1)[-1]
