"""HTTP surface of the historian: the notification sink plus query and export."""
from __future__ import annotations

import urllib.parse

from ..errors import from_problem
from ..httpd import Request, Response, Router, http_request
from .log import Historian, HistoryRecord, render

NOTIFY_PATH = "/historian/notify"


def build_router(historian: Historian) -> Router:
    r = Router()

    @r.route("POST", NOTIFY_PATH)
    def notify(req: Request) -> Response:
        appended = historian.on_notification(req.json())
        return Response(200, {"appended": len(appended)})

    @r.route("GET", "/historian/query")
    def query(req: Request) -> Response:
        q = req.query
        records = historian.query(q.get("entity") or None, q.get("attr") or None,
                                  q.get("from") or None, q.get("to") or None)
        return Response(200, [rec.to_dict() for rec in records])

    @r.route("GET", "/historian/export")
    def export(req: Request) -> Response:
        fmt = req.query.get("format", "csv")
        text = render(historian.query(req.query.get("entity") or None, req.query.get("attr") or None,
                                      req.query.get("from") or None, req.query.get("to") or None), fmt)
        return Response(200, text, content_type="text/csv" if fmt == "csv" else "application/x-ndjson")

    return r


class HistorianClient:
    """Remote historian with the ``on_notification``/``query`` surface of :class:`Historian`."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def query(self, entity_id=None, attr_name=None, start=None, end=None) -> list[HistoryRecord]:
        params = {k: v for k, v in {"entity": entity_id, "attr": attr_name, "from": start, "to": end}.items() if v}
        url = self.base_url + "/historian/query"
        if params:
            url += "?" + urllib.parse.urlencode(params)
        res = http_request("GET", url, timeout=self.timeout)
        if not res.ok:
            raise from_problem(res.status, res.json())
        return [HistoryRecord.from_dict(d) for d in res.json()]

    def on_notification(self, body) -> int:
        """Forward a notification; returns how many records were appended."""
        res = http_request("POST", self.base_url + NOTIFY_PATH, body, timeout=self.timeout)
        if not res.ok:
            raise from_problem(res.status, res.json())
        return res.json()["appended"]
