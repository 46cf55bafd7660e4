"""Catalog records to DCAT / DCAT-AP graphs."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Iterable

from ..catalog.store import DatasetRecord, Organization
from ..clock import canonical_instant
from .terms import DCAT, DCT, FOAF, RDF, XSD, Graph, IRI, Literal, Term

PROFILES = ("dcat", "dcat_ap")
TYPE = IRI(RDF + "type")


@lru_cache(maxsize=1)
def license_table() -> dict[str, str]:
    return json.loads(resources.files("lodbridge.data").joinpath("licenses.json").read_text("utf-8"))


def dataset_iri(portal_base: str, slug: str) -> str:
    return f"{portal_base.rstrip('/')}/dataset/{slug}"


def distribution_iri(portal_base: str, dataset_slug: str, resource_slug: str) -> str:
    return f"{dataset_iri(portal_base, dataset_slug)}#dist-{resource_slug}"


def organization_iri(portal_base: str, slug: str) -> str:
    return f"{portal_base.rstrip('/')}/organization/{slug}"


def _check_profile(profile: str) -> None:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def _publisher(g: Graph, portal_base: str, org: Organization) -> Term:
    agent = IRI(organization_iri(portal_base, org.id))
    g.add((agent, TYPE, IRI(FOAF + "Agent")))
    g.add((agent, IRI(FOAF + "name"), Literal(org.display_name)))
    return agent


def dataset_to_dcat(ds: DatasetRecord, org: Organization, profile: str = "dcat",
                    portal_base: str = "http://localhost") -> Graph:
    _check_profile(profile)
    g = Graph()
    node = IRI(dataset_iri(portal_base, ds.id))
    g.add((node, TYPE, IRI(DCAT + "Dataset")))
    g.add((node, IRI(DCT + "title"), Literal(ds.title)))
    g.add((node, IRI(DCT + "description"), Literal(ds.description)))
    for tag in ds.tags:
        g.add((node, IRI(DCAT + "keyword"), Literal(tag)))
    for theme in ds.themes:
        g.add((node, IRI(DCAT + "theme"), IRI(theme)))
    g.add((node, IRI(DCT + "publisher"), _publisher(g, portal_base, org)))
    if ds.license_id and ds.license_id in license_table():
        g.add((node, IRI(DCT + "license"), IRI(license_table()[ds.license_id])))
    if profile == "dcat_ap":
        for field, prop in ((ds.issued, "issued"), (ds.modified, "modified")):
            if field:
                g.add((node, IRI(DCT + prop), Literal(canonical_instant(field), XSD + "dateTime")))
    for res in ds.resources:
        dist = IRI(distribution_iri(portal_base, ds.id, res.id))
        g.add((node, IRI(DCAT + "distribution"), dist))
        g.add((dist, TYPE, IRI(DCAT + "Distribution")))
        g.add((dist, IRI(DCT + "title"), Literal(res.title)))
        g.add((dist, IRI(DCAT + "accessURL"), IRI(res.access_url)))
        if res.format:
            g.add((dist, IRI(DCT + "format"), Literal(res.format)))
        if res.download_url:
            g.add((dist, IRI(DCAT + "downloadURL"), IRI(res.download_url)))
        if res.media_type:
            g.add((dist, IRI(DCAT + "mediaType"), Literal(res.media_type)))
        if res.byte_size is not None:
            g.add((dist, IRI(DCAT + "byteSize"), Literal(res.byte_size, XSD + "decimal")))
    return g


def catalog_to_dcat(datasets: Iterable[tuple[DatasetRecord, Organization]], *, portal_base: str,
                    title: str = "Open data catalog", description: str = "", publisher: Organization | None = None,
                    profile: str = "dcat") -> Graph:
    """One ``dcat:Catalog`` node linking every dataset, plus the union of the dataset graphs."""
    _check_profile(profile)
    g = Graph()
    node = IRI(portal_base.rstrip("/") + "/catalog")
    g.add((node, TYPE, IRI(DCAT + "Catalog")))
    g.add((node, IRI(DCT + "title"), Literal(title)))
    g.add((node, IRI(DCT + "description"), Literal(description)))
    publisher = publisher or Organization("portal", title)
    g.add((node, IRI(DCT + "publisher"), _publisher(g, portal_base, publisher)))
    for ds, org in datasets:
        g.add((node, IRI(DCAT + "dataset"), IRI(dataset_iri(portal_base, ds.id))))
        g.add_all(dataset_to_dcat(ds, org, profile, portal_base))
    return g
