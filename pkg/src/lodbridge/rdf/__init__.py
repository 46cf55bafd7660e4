from .rdfxml import parse_rdfxml, serialize_rdfxml
from .terms import NAMESPACES, BNode, Graph, IRI, Literal, Term, Triple, isomorphic
from .turtle import RdfSyntaxError, parse_turtle, serialize_turtle

FORMATS = ("rdfxml", "turtle")


def format_for_path(path: str) -> str:
    return "turtle" if str(path).endswith(".ttl") else "rdfxml"


def parse(text: str, fmt: str = "rdfxml", base: str | None = None, **options) -> Graph:
    if fmt == "turtle":
        return parse_turtle(text, base)
    if fmt == "rdfxml":
        return parse_rdfxml(text, base, **options)
    raise ValueError(f"unknown RDF format {fmt!r}")


def serialize(graph: Graph, fmt: str = "rdfxml") -> str:
    if fmt == "turtle":
        return serialize_turtle(graph)
    if fmt == "rdfxml":
        return serialize_rdfxml(graph)
    raise ValueError(f"unknown RDF format {fmt!r}")


__all__ = ["BNode", "FORMATS", "Graph", "IRI", "Literal", "NAMESPACES", "RdfSyntaxError", "Term",
           "Triple", "format_for_path", "isomorphic", "parse", "serialize"]
