"""Exception hierarchy shared by all services.

Each error knows the HTTP status and problem ``type`` it maps to, so the HTTP
layer can render ``{type, title, detail}`` bodies without a lookup table.
"""
from __future__ import annotations

ERROR_BASE = "https://uri.etsi.org/ngsi-ld/errors/"


class LodError(Exception):
    status = 500
    kind = "InternalError"
    title = "Internal error"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.title)
        self.detail = detail or self.title

    def to_problem(self) -> dict:
        return {"type": ERROR_BASE + self.kind, "title": self.title, "detail": self.detail}


class NotFound(LodError):
    status = 404
    kind = "ResourceNotFound"
    title = "Resource not found"


class AlreadyExists(LodError):
    status = 409
    kind = "AlreadyExists"
    title = "Already exists"


class BadRequest(LodError):
    status = 400
    kind = "BadRequestData"
    title = "Bad request data"


class InvalidRequest(LodError):
    status = 400
    kind = "InvalidRequest"
    title = "Invalid request"


class ImmutableField(BadRequest):
    title = "Immutable field"


class TypeMismatch(BadRequest):
    title = "Entity type does not match template"


class ServiceUnavailable(LodError):
    status = 503
    kind = "ServiceUnavailable"
    title = "Service unavailable"


class UnresolvedPath(LodError):
    status = 400
    kind = "UnresolvedPath"
    title = "Source path not found in document"


class TemplateError(LodError):
    status = 400
    kind = "TemplateError"
    title = "Template variable cannot be resolved"


class UnknownDevice(NotFound):
    kind = "UnknownDevice"
    title = "Unknown device"


class PipelineError(LodError):
    status = 400
    kind = "PipelineError"
    title = "Invalid pipeline"


_BY_KIND = {cls.kind: cls for cls in (NotFound, AlreadyExists, BadRequest, InvalidRequest,
                                       ServiceUnavailable, UnresolvedPath, TemplateError,
                                       UnknownDevice, PipelineError)}


def from_problem(status: int, body) -> LodError:
    """Rebuild an exception from a ``{type, title, detail}`` body."""
    kind = ""
    detail = ""
    if isinstance(body, dict):
        kind = str(body.get("type", "")).rsplit("/", 1)[-1]
        detail = str(body.get("detail") or body.get("title") or "")
    cls = _BY_KIND.get(kind)
    if cls is None:
        cls = {404: NotFound, 409: AlreadyExists, 400: BadRequest, 503: ServiceUnavailable}.get(status, LodError)
    return cls(detail or f"HTTP {status}")
