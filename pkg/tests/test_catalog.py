import json

import pytest
from hypothesis import given, strategies as st

from lodbridge.catalog import Catalog, CatalogClient, DatasetRecord, Organization, Resource, build_router, slugify
from lodbridge.catalog.api import dataset_from_ckan, dataset_to_ckan
from lodbridge.errors import AlreadyExists, BadRequest, InvalidRequest, NotFound
from lodbridge.httpd import Server, http_request
from lodbridge.rdf import isomorphic, parse
from lodbridge.rdf.dcat import dataset_to_dcat

RES = Resource("json", "Entity", "http://broker.example.org/e", "JSON", media_type="application/json")


def ds(id="weather", **kw):
    base = dict(title="Santander weather", organization_id="aemet", description="Real time observations",
                tags=("weather", "temperature"))
    base.update(kw)
    return DatasetRecord(id, **base)


@pytest.fixture
def catalog(clock):
    c = Catalog(clock=clock)
    c.create_organization(Organization("aemet", "AEMET"))
    return c


def test_slugify():
    assert slugify("  Santander AEMET Weather! ") == "santander-aemet-weather"
    assert slugify("Ñandú – Parking") == "nandu-parking"


@given(st.text())
def test_slugify_output_is_a_valid_slug(text):
    slug = slugify(text)
    assert slug == slugify(slug)
    assert all(c.isascii() and (c.isalnum() or c == "-") and not c.isupper() for c in slug)


def test_record_validation():
    with pytest.raises(BadRequest):
        ds("Not A Slug")
    with pytest.raises(BadRequest):
        ds(title="")
    with pytest.raises(BadRequest):
        ds(issued="2021-11-10T15:00:00Z", modified="2021-11-09T15:00:00Z")
    with pytest.raises(BadRequest):
        Resource("r", "R", "relative/path")
    with pytest.raises(BadRequest):
        Resource("r", "R", "http://a.example/", byte_size=-1)


def test_dataset_lifecycle(catalog, clock):
    with pytest.raises(NotFound):
        catalog.create_dataset(ds(organization_id="nobody"))
    catalog.create_dataset(ds())
    created = catalog.get_dataset("weather")
    assert created.issued == created.modified == "2021-11-10T15:00:00.00Z"
    with pytest.raises(AlreadyExists):
        catalog.create_dataset(ds())
    clock.advance(60)
    catalog.upsert_resource("weather", RES)
    after = catalog.get_dataset("weather")
    assert after.resources == (RES,) and after.modified == "2021-11-10T15:01:00.00Z"
    clock.advance(60)
    catalog.update_dataset(ds(title="Renamed"))
    renamed = catalog.get_dataset("weather")
    assert renamed.title == "Renamed" and renamed.resources == (RES,) and renamed.issued == created.issued
    with pytest.raises(InvalidRequest):
        catalog.delete_organization("aemet")
    catalog.delete_dataset("weather")
    catalog.delete_organization("aemet")
    assert catalog.list_datasets() == [] and catalog.list_organizations() == []


def test_upsert_is_idempotent(catalog, clock):
    catalog.upsert_dataset(ds())
    first = catalog.get_dataset("weather")
    clock.advance(3600)
    catalog.upsert_dataset(ds())
    assert catalog.get_dataset("weather") == first
    catalog.ensure_organization(Organization("aemet", "Other name"))
    assert catalog.get_organization("aemet").display_name == "AEMET"


def test_resource_upsert_keeps_position(catalog):
    catalog.create_dataset(ds())
    other = Resource("csv", "Table", "http://files.example.org/t.csv", "CSV")
    catalog.upsert_resource("weather", RES)
    catalog.upsert_resource("weather", other)
    catalog.upsert_resource("weather", Resource("json", "Entity v2", "http://broker.example.org/e", "JSON"))
    assert [r.title for r in catalog.get_dataset("weather").resources] == ["Entity v2", "Table"]


def test_search_ranking_and_facets(catalog):
    catalog.create_organization(Organization("santander", "Santander"))
    catalog.create_dataset(ds("weather", resources=(RES,)))
    catalog.create_dataset(ds("bikes", title="Bike stations", description="Weather-independent docks",
                              tags=("mobility",), organization_id="santander"))
    catalog.create_dataset(ds("air", title="Air quality", description="Sensors", tags=("environment",)))
    assert [d.id for d in catalog.search_datasets("weather")] == ["weather", "bikes"]
    assert [d.id for d in catalog.search_datasets(tags=["mobility"])] == ["bikes"]
    assert [d.id for d in catalog.search_datasets(organization="aemet")] == ["air", "weather"]
    assert [d.id for d in catalog.search_datasets(format="json")] == ["weather"]
    assert len(catalog.search_datasets(limit=1)) == 1
    assert catalog.search_datasets("nothing matches") == []
    with pytest.raises(BadRequest):
        catalog.search_datasets(limit=0)


def test_persistence(tmp_path, clock):
    c = Catalog(tmp_path, clock=clock)
    c.create_organization(Organization("aemet", "AEMET", "Weather agency"))
    c.create_dataset(ds(resources=(RES,)))
    again = Catalog(tmp_path, clock=clock)
    assert again.get_dataset("weather") == c.get_dataset("weather")
    assert again.get_organization("aemet").description == "Weather agency"
    assert json.loads((tmp_path / "datasets" / "weather.json").read_text())["id"] == "weather"
    again.delete_dataset("weather")
    assert not (tmp_path / "datasets" / "weather.json").exists()


def test_ckan_mapping_round_trip():
    record = ds(license_id="cc-by", themes=("http://example.org/theme",), resources=(RES,))
    doc = dataset_to_ckan(record)
    assert doc["tags"] == [{"name": "weather"}, {"name": "temperature"}] and doc["num_resources"] == 1
    assert dataset_from_ckan(doc) == record
    with pytest.raises(BadRequest):
        dataset_from_ckan({"title": "no name"})


def test_http_api_and_client(catalog):
    portal = "http://portal.example.org"
    with Server(build_router(catalog, portal_base=portal)) as server:
        client = CatalogClient(server.url)
        client.ensure_organization(Organization("santander", "Santander"))
        client.ensure_organization(Organization("santander", "Santander"))
        client.create_dataset(ds(organization_id="santander"))
        with pytest.raises(AlreadyExists):
            client.create_dataset(ds(organization_id="santander"))
        client.upsert_resource("weather", RES)
        client.upsert_dataset(ds(organization_id="santander", title="Updated"))
        got = client.get_dataset("weather")
        assert got.title == "Updated" and got.resources == (RES,)
        assert [d.id for d in client.search_datasets("weather")] == ["weather"]
        with pytest.raises(NotFound):
            client.get_dataset("missing")
        res = http_request("GET", server.url + "/api/3/action/package_show?id=missing")
        assert res.status == 404 and res.json()["success"] is False
        assert http_request("GET", server.url + "/api/3/action/package_search?rows=x").status == 400

        res = http_request("GET", server.url + "/dataset/weather.ttl?profile=dcat_ap")
        assert res.headers["content-type"].startswith("text/turtle")
        expected = dataset_to_dcat(catalog.get_dataset("weather"), catalog.get_organization("santander"),
                                   "dcat_ap", portal)
        assert isomorphic(parse(res.body.decode(), "turtle"), expected)
        res = http_request("GET", client.export_url())
        assert len(parse(res.body.decode(), "rdfxml")) > len(expected)
        assert http_request("GET", server.url + "/dataset/weather.json").status == 404
        assert http_request("GET", server.url + "/catalog.rdf?profile=other").status == 400
