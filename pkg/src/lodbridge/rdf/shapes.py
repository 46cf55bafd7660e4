"""Minimal SHACL: target classes with cardinality, node-kind and datatype constraints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .terms import RDF, SH, Graph, IRI, Term
from .turtle import parse_turtle

NODE_KINDS = ("IRI", "Literal")


@dataclass(frozen=True)
class PropertyConstraint:
    path: str
    min_count: int = 0
    max_count: int | None = None
    node_kind: str | None = None
    datatype: str | None = None

    def __post_init__(self):
        if self.min_count < 0:
            raise ValueError("minCount must be non-negative")
        if self.max_count is not None and self.max_count < self.min_count:
            raise ValueError("maxCount must not be below minCount")
        if self.node_kind is not None and self.node_kind not in NODE_KINDS:
            raise ValueError(f"nodeKind must be one of {NODE_KINDS}")


@dataclass(frozen=True)
class Shape:
    target_class: str
    properties: tuple[PropertyConstraint, ...]


@dataclass(frozen=True)
class ShapeSet:
    shapes: tuple[Shape, ...]

    @classmethod
    def from_dict(cls, doc: dict) -> "ShapeSet":
        shapes = []
        for s in doc["shapes"]:
            props = tuple(PropertyConstraint(p["path"], p.get("minCount", 0), p.get("maxCount"),
                                             p.get("nodeKind"), p.get("datatype"))
                          for p in s.get("propertyConstraints", ()))
            shapes.append(Shape(s["targetClass"], props))
        return cls(tuple(shapes))

    @classmethod
    def from_graph(cls, g: Graph) -> "ShapeSet":
        shapes = []
        for node in g.subjects(IRI(RDF + "type"), IRI(SH + "NodeShape")):
            props = []
            for pnode in g.objects(node, IRI(SH + "property")):
                path = g.value(pnode, IRI(SH + "path"))
                if path is None:
                    continue
                lo, hi = g.value(pnode, IRI(SH + "minCount")), g.value(pnode, IRI(SH + "maxCount"))
                kind, dtype = g.value(pnode, IRI(SH + "nodeKind")), g.value(pnode, IRI(SH + "datatype"))
                props.append(PropertyConstraint(
                    path.value, int(lo.value) if lo else 0, int(hi.value) if hi else None,
                    kind.value[len(SH):] if kind else None, dtype.value if dtype else None))
            for target in g.objects(node, IRI(SH + "targetClass")):
                shapes.append(Shape(target.value, tuple(props)))
        return cls(tuple(shapes))


def load_shapes(path: str | Path | None = None) -> ShapeSet:
    """Load a shape set from Turtle or JSON; the bundled DCAT-AP mandatory set by default."""
    if path is None:
        text = resources.files("lodbridge.data").joinpath("shapes/dcat-ap-mandatory.ttl").read_text("utf-8")
        return ShapeSet.from_graph(parse_turtle(text))
    path = Path(path)
    text = path.read_text("utf-8")
    if path.suffix == ".json":
        return ShapeSet.from_dict(json.loads(text))
    return ShapeSet.from_graph(parse_turtle(text))


@dataclass(frozen=True)
class ConstraintResult:
    focus: str
    target_class: str
    path: str
    constraint: str
    passed: bool
    count: int

    def to_dict(self) -> dict:
        return {"focusNode": self.focus, "targetClass": self.target_class, "path": self.path,
                "constraint": self.constraint, "passed": self.passed, "count": self.count}


@dataclass
class ConformanceReport:
    results: list[ConstraintResult] = field(default_factory=list)

    @property
    def failures(self) -> list[ConstraintResult]:
        return [r for r in self.results if not r.passed]

    @property
    def conforms(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"conforms": self.conforms, "failureCount": len(self.failures),
                "results": [r.to_dict() for r in self.results]}


def _kind_ok(term: Term, kind: str) -> bool:
    return term.is_iri if kind == "IRI" else term.is_literal


def validate_shapes(g: Graph, shapes: ShapeSet, focus: Term | None = None) -> ConformanceReport:
    """Check every instance of each target class, or only ``focus`` when given."""
    report = ConformanceReport()
    for shape in shapes.shapes:
        for node in g.subjects(IRI(RDF + "type"), IRI(shape.target_class)):
            if focus is not None and node != focus:
                continue
            for pc in shape.properties:
                values = g.objects(node, IRI(pc.path))

                def add(name: str, passed: bool, count: int) -> None:
                    report.results.append(ConstraintResult(node.n3(), shape.target_class, pc.path,
                                                           name, passed, count))

                add("minCount", len(values) >= pc.min_count, len(values))
                if pc.max_count is not None:
                    add("maxCount", len(values) <= pc.max_count, len(values))
                if pc.node_kind:
                    bad = [v for v in values if not _kind_ok(v, pc.node_kind)]
                    add("nodeKind", not bad, len(bad))
                if pc.datatype:
                    bad = [v for v in values if not (v.is_literal and v.datatype == pc.datatype)]
                    add("datatype", not bad, len(bad))
    return report
