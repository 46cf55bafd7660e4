"""A small JSON routing layer over ``http.server`` plus a urllib client.

All services (broker, catalog, historian, consumer, dataflow listeners and the
fixture stubs) are served with this, so nothing outside the standard library
is needed to run the desk-scale deployment.
"""
from __future__ import annotations

import json
import logging
import re
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from .errors import LodError, ServiceUnavailable

log = logging.getLogger(__name__)


@dataclass
class Request:
    method: str
    path: str
    query: dict[str, str]
    headers: dict[str, str]
    body: bytes = b""
    params: dict[str, str] = field(default_factory=dict)

    def json(self) -> Any:
        if not self.body:
            return None
        try:
            return json.loads(self.body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            from .errors import BadRequest

            raise BadRequest(f"request body is not valid JSON: {exc}") from exc


@dataclass
class Response:
    status: int = 200
    body: Any = None
    content_type: str = "application/json"
    headers: dict[str, str] = field(default_factory=dict)

    def encode(self) -> bytes:
        if self.body is None:
            return b""
        if isinstance(self.body, bytes):
            return self.body
        if isinstance(self.body, str):
            return self.body.encode("utf-8")
        return json.dumps(self.body, ensure_ascii=False).encode("utf-8")


Handler = Callable[[Request], Response]


class Router:
    def __init__(self, error_renderer: Callable[[LodError], Response] | None = None):
        self._routes: list[tuple[str, re.Pattern, Handler]] = []
        self._render_error = error_renderer or problem_response

    def add(self, method: str, pattern: str, handler: Handler) -> None:
        # "{name}" captures a single path segment, "{name:path}" the remainder
        regex = re.sub(r"\{(\w+):path\}", r"(?P<\1>.+)", pattern)
        regex = re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", regex)
        self._routes.append((method.upper(), re.compile("^" + regex + "$"), handler))

    def route(self, method: str, pattern: str):
        def deco(fn: Handler) -> Handler:
            self.add(method, pattern, fn)
            return fn

        return deco

    def dispatch(self, request: Request) -> Response:
        allowed = False
        for method, regex, handler in self._routes:
            m = regex.match(request.path)
            if not m:
                continue
            allowed = True
            if method != request.method:
                continue
            request.params = {k: urllib.parse.unquote(v) for k, v in m.groupdict().items()}
            try:
                return handler(request)
            except LodError as exc:
                return self._render_error(exc)
            except Exception:  # noqa: BLE001 - last-resort 500
                log.exception("handler failed for %s %s", request.method, request.path)
                return self._render_error(LodError("unexpected server error"))
        if allowed:
            return Response(405, {"type": "MethodNotAllowed", "title": "Method not allowed", "detail": request.method})
        return Response(404, {"type": "https://uri.etsi.org/ngsi-ld/errors/ResourceNotFound",
                              "title": "Resource not found", "detail": request.path})


def problem_response(exc: LodError) -> Response:
    return Response(exc.status, exc.to_problem())


class _Handler(BaseHTTPRequestHandler):
    router: Router
    protocol_version = "HTTP/1.1"

    def _handle(self) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        query = {k: v[-1] for k, v in urllib.parse.parse_qs(parsed.query, keep_blank_values=True).items()}
        request = Request(self.command, parsed.path, query, {k.lower(): v for k, v in self.headers.items()}, body)
        response = self.router.dispatch(request)
        payload = response.encode()
        self.send_response(response.status)
        if payload or response.status not in (204, 304):
            self.send_header("Content-Type", response.content_type + "; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        for name, value in response.headers.items():
            self.send_header(name, value)
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    do_GET = do_POST = do_PATCH = do_DELETE = do_PUT = _handle

    def log_message(self, fmt, *args):  # route access logs through logging
        log.debug("%s - %s", self.address_string(), fmt % args)


class Server:
    """A threaded HTTP server running ``router`` on a background thread."""

    def __init__(self, router: Router, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"router": router})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.host, self.port = self.httpd.server_address[:2]
        self._thread = threading.Thread(target=self.httpd.serve_forever, name=f"http-{self.port}", daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "Server":
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self) -> "Server":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


def serve(router: Router, host: str = "127.0.0.1", port: int = 0) -> Server:
    return Server(router, host, port).start()


@dataclass
class HttpResult:
    status: int
    headers: dict[str, str]
    body: bytes

    def json(self) -> Any:
        return json.loads(self.body.decode("utf-8")) if self.body else None

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300


def http_request(method: str, url: str, payload: Any = None, *, data: bytes | None = None,
                 content_type: str = "application/json", timeout: float = 10.0) -> HttpResult:
    """Send a request; HTTP error statuses are returned, transport failures raise."""
    headers = {}
    if payload is not None:
        data = json.dumps(payload).encode("utf-8")
    if data is not None:
        headers["Content-Type"] = content_type
    req = urllib.request.Request(url, data=data, method=method.upper(), headers=headers)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return HttpResult(resp.status, {k.lower(): v for k, v in resp.headers.items()}, resp.read())
    except urllib.error.HTTPError as exc:
        body = exc.read() if exc.fp is not None else b""
        return HttpResult(exc.code, {k.lower(): v for k, v in (exc.headers or {}).items()}, body)
    except (urllib.error.URLError, OSError) as exc:
        raise ServiceUnavailable(f"{method} {url}: {exc}") from exc
