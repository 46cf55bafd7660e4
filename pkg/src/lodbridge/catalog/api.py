"""CKAN-style action API and DCAT export endpoints over a :class:`Catalog`."""
from __future__ import annotations

import urllib.parse
from dataclasses import replace
from typing import Any

from ..errors import BadRequest, LodError, NotFound, from_problem
from ..httpd import Request, Response, Router, http_request
from .store import Catalog, DatasetRecord, Organization, Resource

ACTION = "/api/3/action/"
RDF_TYPES = {"rdf": ("rdfxml", "application/rdf+xml"), "ttl": ("turtle", "text/turtle")}


def dataset_to_ckan(ds: DatasetRecord) -> dict:
    return {
        "name": ds.id,
        "title": ds.title,
        "notes": ds.description,
        "owner_org": ds.organization_id,
        "tags": [{"name": t} for t in ds.tags],
        "license_id": ds.license_id,
        "themes": list(ds.themes),
        "metadata_created": ds.issued,
        "metadata_modified": ds.modified,
        "num_resources": len(ds.resources),
        "resources": [resource_to_ckan(r) for r in ds.resources],
    }


def resource_to_ckan(res: Resource) -> dict:
    return {"id": res.id, "name": res.title, "url": res.access_url, "download_url": res.download_url,
            "format": res.format, "mimetype": res.media_type, "size": res.byte_size}


def dataset_from_ckan(doc: dict) -> DatasetRecord:
    if not isinstance(doc, dict):
        raise BadRequest("package must be a JSON object")
    try:
        tags = [t["name"] if isinstance(t, dict) else t for t in doc.get("tags") or ()]
        return DatasetRecord(
            id=doc["name"], title=doc.get("title") or "", organization_id=doc["owner_org"],
            description=doc.get("notes") or "", tags=tuple(tags), license_id=doc.get("license_id"),
            themes=tuple(doc.get("themes") or ()),
            resources=tuple(resource_from_ckan(r) for r in doc.get("resources") or ()))
    except KeyError as exc:
        raise BadRequest(f"missing package field {exc.args[0]!r}") from exc


def resource_from_ckan(doc: dict) -> Resource:
    try:
        return Resource(id=doc["id"], title=doc.get("name") or doc["id"], access_url=doc["url"],
                        format=doc.get("format") or "", download_url=doc.get("download_url"),
                        media_type=doc.get("mimetype"), byte_size=doc.get("size"))
    except KeyError as exc:
        raise BadRequest(f"missing resource field {exc.args[0]!r}") from exc


def _envelope_error(exc: LodError) -> Response:
    return Response(exc.status, {"success": False,
                                 "error": {"__type": exc.kind, "message": exc.detail, **exc.to_problem()}})


def _ok(result: Any, status: int = 200) -> Response:
    return Response(status, {"success": True, "result": result})


def build_router(catalog: Catalog, *, portal_base: str | None = None, title: str = "Open data catalog",
                 description: str = "Datasets published from the context broker") -> Router:
    from ..rdf import serialize
    from ..rdf.dcat import catalog_to_dcat, dataset_to_dcat

    r = Router(error_renderer=_envelope_error)

    def base_of(req: Request) -> str:
        return portal_base or "http://" + req.headers.get("host", "localhost")

    @r.route("POST", ACTION + "organization_create")
    def organization_create(req: Request) -> Response:
        doc = req.json() or {}
        try:
            org = Organization(doc["name"], doc.get("title") or doc["name"], doc.get("description"))
        except KeyError as exc:
            raise BadRequest("organization needs a name") from exc
        catalog.create_organization(org)
        return _ok({"name": org.id, "title": org.display_name, "description": org.description})

    @r.route("GET", ACTION + "organization_show")
    def organization_show(req: Request) -> Response:
        org = catalog.get_organization(req.query.get("id", ""))
        return _ok({"name": org.id, "title": org.display_name, "description": org.description})

    @r.route("GET", ACTION + "organization_list")
    def organization_list(req: Request) -> Response:
        return _ok([o.id for o in catalog.list_organizations()])

    @r.route("POST", ACTION + "package_create")
    def package_create(req: Request) -> Response:
        ds = dataset_from_ckan(req.json())
        catalog.create_dataset(ds)
        return _ok(dataset_to_ckan(catalog.get_dataset(ds.id)))

    @r.route("POST", ACTION + "package_update")
    def package_update(req: Request) -> Response:
        ds = dataset_from_ckan(req.json())
        catalog.upsert_dataset(ds)
        return _ok(dataset_to_ckan(catalog.get_dataset(ds.id)))

    @r.route("POST", ACTION + "resource_create")
    def resource_create(req: Request) -> Response:
        doc = req.json() or {}
        if "package_id" not in doc:
            raise BadRequest("resource needs a package_id")
        res = resource_from_ckan(doc)
        catalog.upsert_resource(doc["package_id"], res)
        return _ok(resource_to_ckan(res))

    @r.route("GET", ACTION + "package_show")
    def package_show(req: Request) -> Response:
        return _ok(dataset_to_ckan(catalog.get_dataset(req.query.get("id", ""))))

    @r.route("GET", ACTION + "package_list")
    def package_list(req: Request) -> Response:
        return _ok([d.id for d in catalog.list_datasets()])

    @r.route("GET", ACTION + "package_search")
    def package_search(req: Request) -> Response:
        try:
            rows = int(req.query.get("rows", "10"))
        except ValueError as exc:
            raise BadRequest("rows must be an integer") from exc
        tags = [t for t in req.query.get("tags", "").split(",") if t]
        hits = catalog.search_datasets(req.query.get("q") or None, tags=tags or None,
                                       organization=req.query.get("organization") or None,
                                       format=req.query.get("res_format") or None, limit=rows)
        return _ok({"count": len(hits), "results": [dataset_to_ckan(d) for d in hits]})

    def _rdf(g, ext: str) -> Response:
        fmt, ctype = RDF_TYPES[ext]
        return Response(200, serialize(g, fmt), content_type=ctype)

    def _profile(req: Request) -> str:
        profile = req.query.get("profile", "dcat")
        if profile not in ("dcat", "dcat_ap"):
            raise BadRequest(f"unknown profile {profile!r}")
        return profile

    @r.route("GET", "/catalog.{ext}")
    def catalog_export(req: Request) -> Response:
        ext = req.params["ext"]
        if ext not in RDF_TYPES:
            raise NotFound(f"no export format {ext!r}")
        pairs = [(d, catalog.get_organization(d.organization_id)) for d in catalog.list_datasets()]
        g = catalog_to_dcat(pairs, portal_base=base_of(req), title=title, description=description,
                            profile=_profile(req))
        return _rdf(g, ext)

    @r.route("GET", "/dataset/{name}")
    def dataset_export(req: Request) -> Response:
        slug, _, ext = req.params["name"].rpartition(".")
        if ext not in RDF_TYPES or not slug:
            raise NotFound(f"no export for {req.params['name']!r}")
        ds = catalog.get_dataset(slug)
        g = dataset_to_dcat(ds, catalog.get_organization(ds.organization_id), _profile(req), base_of(req))
        return _rdf(g, ext)

    return r


class CatalogClient:
    """Remote catalog with the subset of the :class:`Catalog` surface used by publishers."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _action(self, name: str, payload: dict | None = None, **query) -> Any:
        url = self.base_url + ACTION + name
        if query:
            url += "?" + urllib.parse.urlencode(query)
        res = http_request("POST" if payload is not None else "GET", url, payload, timeout=self.timeout)
        try:
            body = res.json()
        except ValueError:
            body = None
        if not res.ok or not (isinstance(body, dict) and body.get("success")):
            error = body.get("error") if isinstance(body, dict) else None
            raise from_problem(res.status, error)
        return body["result"]

    def create_organization(self, org: Organization) -> str:
        self._action("organization_create", {"name": org.id, "title": org.display_name,
                                             "description": org.description})
        return org.id

    def ensure_organization(self, org: Organization) -> str:
        try:
            self.get_organization(org.id)
        except NotFound:
            return self.create_organization(org)
        return org.id

    def get_organization(self, org_id: str) -> Organization:
        doc = self._action("organization_show", id=org_id)
        return Organization(doc["name"], doc["title"], doc.get("description"))

    def create_dataset(self, ds: DatasetRecord) -> str:
        self._action("package_create", dataset_to_ckan(ds))
        return ds.id

    def upsert_dataset(self, ds: DatasetRecord) -> str:
        try:
            self.get_dataset(ds.id)
        except NotFound:
            return self.create_dataset(ds)
        self._action("package_update", dataset_to_ckan(ds))
        return ds.id

    def get_dataset(self, dataset_id: str) -> DatasetRecord:
        doc = self._action("package_show", id=dataset_id)
        return replace(dataset_from_ckan(doc), issued=doc.get("metadata_created"), modified=doc.get("metadata_modified"))

    def upsert_resource(self, dataset_id: str, res: Resource) -> str:
        self._action("resource_create", {"package_id": dataset_id, **resource_to_ckan(res)})
        return res.id

    def search_datasets(self, free_text: str | None = None, limit: int = 10) -> list[DatasetRecord]:
        result = self._action("package_search", q=free_text or "", rows=limit)
        return [dataset_from_ckan(d) for d in result["results"]]

    def export_url(self, ext: str = "rdf", profile: str = "dcat_ap") -> str:
        return f"{self.base_url}/catalog.{ext}?profile={profile}"
