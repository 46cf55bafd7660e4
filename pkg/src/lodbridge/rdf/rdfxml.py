"""RDF/XML subset: typed node elements, property elements, ``rdf:resource``,
``rdf:nodeID``, ``rdf:datatype``, ``xml:lang`` and ``rdf:parseType="Resource"``."""
from __future__ import annotations

import itertools
import re
import urllib.parse
from dataclasses import dataclass, field
from xml.parsers import expat

from .terms import RDF, BNode, Graph, IRI, Literal, Term, Triple, relabel_blank_nodes
from .turtle import RdfSyntaxError, blank_labels

XML_NS = "http://www.w3.org/XML/1998/namespace"
_NCNAME_TAIL = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*$")
_XML_FORBIDDEN = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f]")


@dataclass
class _Element:
    ns: str
    local: str
    attrs: dict[tuple[str, str], str]
    line: int
    col: int
    children: list["_Element"] = field(default_factory=list)
    text: list[str] = field(default_factory=list)

    @property
    def iri(self) -> str:
        return self.ns + self.local


def _split(name: str) -> tuple[str, str]:
    ns, _, local = name.rpartition(" ")
    return ns, local


def _build_tree(text: str) -> _Element:
    parser = expat.ParserCreate(namespace_separator=" ")
    stack: list[_Element] = []
    root: list[_Element] = []

    def start(name, attrs):
        ns, local = _split(name)
        el = _Element(ns, local, {_split(k): v for k, v in attrs.items()},
                      parser.CurrentLineNumber, parser.CurrentColumnNumber + 1)
        if stack:
            stack[-1].children.append(el)
        else:
            root.append(el)
        stack.append(el)

    def end(name):
        stack.pop()

    def chars(data):
        if stack:
            stack[-1].text.append(data)

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except expat.ExpatError as exc:
        raise RdfSyntaxError(expat.errors.messages[exc.code], exc.lineno, exc.offset + 1) from exc
    if not root:
        raise RdfSyntaxError("no document element", 1, 1)
    return root[0]


class _Reader:
    def __init__(self, base: str | None, strip_literals: bool):
        self.base = base
        self.strip = strip_literals
        self.triples: list[Triple] = []
        self._fresh = itertools.count()

    def fresh(self) -> Term:
        return BNode(f"\x00r{next(self._fresh)}")

    def resolve(self, iri: str, base: str | None) -> str:
        if base and not urllib.parse.urlsplit(iri).scheme:
            return urllib.parse.urljoin(base, iri)
        return iri

    def document(self, root: _Element) -> None:
        base = root.attrs.get((XML_NS, "base"), self.base)
        lang = root.attrs.get((XML_NS, "lang"))
        if root.ns == RDF and root.local == "RDF":
            self._no_text(root)
            for child in root.children:
                self.node(child, base, lang)
        else:
            self.node(root, base, lang)

    def _no_text(self, el: _Element) -> None:
        if "".join(el.text).strip():
            raise RdfSyntaxError(f"unexpected text inside <{el.local}>", el.line, el.col)

    def node(self, el: _Element, base: str | None, lang: str | None) -> Term:
        base = el.attrs.get((XML_NS, "base"), base)
        lang = el.attrs.get((XML_NS, "lang"), lang)
        attrs = dict(el.attrs)
        about = attrs.pop((RDF, "about"), None)
        node_id = attrs.pop((RDF, "nodeID"), None)
        rdf_id = attrs.pop((RDF, "ID"), None)
        if sum(x is not None for x in (about, node_id, rdf_id)) > 1:
            raise RdfSyntaxError("rdf:about, rdf:nodeID and rdf:ID are mutually exclusive", el.line, el.col)
        if about is not None:
            subject = IRI(self.resolve(about, base))
        elif node_id is not None:
            subject = BNode("id-" + node_id)
        elif rdf_id is not None:
            subject = IRI(self.resolve("#" + rdf_id, base))
        else:
            subject = self.fresh()
        if not (el.ns == RDF and el.local == "Description"):
            if not el.ns:
                raise RdfSyntaxError(f"node element <{el.local}> has no namespace", el.line, el.col)
            self.triples.append(Triple(subject, IRI(RDF + "type"), IRI(el.iri)))
        for (ns, local), value in attrs.items():
            if ns == XML_NS or not ns:
                continue
            if ns == RDF and local == "type":
                self.triples.append(Triple(subject, IRI(RDF + "type"), IRI(self.resolve(value, base))))
            else:
                self.triples.append(Triple(subject, IRI(ns + local), Literal(value, lang=lang)))
        self._no_text(el)
        for child in el.children:
            self.property(child, subject, base, lang)
        return subject

    def property(self, el: _Element, subject: Term, base: str | None, lang: str | None) -> None:
        if not el.ns:
            raise RdfSyntaxError(f"property element <{el.local}> has no namespace", el.line, el.col)
        if el.ns == RDF and (el.local == "li" or re.fullmatch(r"_\d+", el.local)):
            raise RdfSyntaxError("container membership elements are not supported", el.line, el.col)
        predicate = IRI(el.iri)
        lang = el.attrs.get((XML_NS, "lang"), lang)
        attrs = {k: v for k, v in el.attrs.items() if k[0] != XML_NS}
        resource = attrs.pop((RDF, "resource"), None)
        node_id = attrs.pop((RDF, "nodeID"), None)
        datatype = attrs.pop((RDF, "datatype"), None)
        parse_type = attrs.pop((RDF, "parseType"), None)
        attrs.pop((RDF, "ID"), None)
        if attrs:
            (ns, local), _ = next(iter(attrs.items()))
            raise RdfSyntaxError(f"unsupported attribute {local!r} on property element", el.line, el.col)
        if parse_type is not None:
            if parse_type != "Resource":
                raise RdfSyntaxError(f"rdf:parseType={parse_type!r} is not supported", el.line, el.col)
            obj = self.fresh()
            self.triples.append(Triple(subject, predicate, obj))
            self._no_text(el)
            for child in el.children:
                self.property(child, obj, base, lang)
            return
        if resource is not None or node_id is not None:
            if el.children or "".join(el.text).strip():
                raise RdfSyntaxError("rdf:resource/rdf:nodeID property elements must be empty", el.line, el.col)
            obj = IRI(self.resolve(resource, base)) if resource is not None else BNode("id-" + node_id)
            self.triples.append(Triple(subject, predicate, obj))
            return
        if el.children:
            if len(el.children) != 1:
                raise RdfSyntaxError("a property element holds at most one node element", el.line, el.col)
            self._no_text(el)
            obj = self.node(el.children[0], base, lang)
            self.triples.append(Triple(subject, predicate, obj))
            return
        text = "".join(el.text)
        if self.strip:
            text = text.strip()
        if datatype:
            obj = Literal(text, self.resolve(datatype, base))
        else:
            obj = Literal(text, lang=lang)
        self.triples.append(Triple(subject, predicate, obj))


def parse_rdfxml(text: str, base: str | None = None, *, strip_literals: bool = False) -> Graph:
    """Parse RDF/XML. ``strip_literals`` trims pretty-printing whitespace around literal text."""
    if not text.strip():
        return Graph()
    root = _build_tree(text)
    reader = _Reader(base, strip_literals)
    reader.document(root)
    namespaces = {}
    for m in re.finditer(r'xmlns:([A-Za-z_][\w.-]*)\s*=\s*"([^"]*)"', text):
        namespaces[m.group(1)] = m.group(2)
    return Graph(relabel_blank_nodes(reader.triples), namespaces)


# -- serialization -----------------------------------------------------------

def _escape_text(text: str) -> str:
    if _XML_FORBIDDEN.search(text):
        raise ValueError("literal contains characters that XML 1.0 cannot carry")
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")


def _escape_attr(text: str) -> str:
    return (_escape_text(text).replace('"', "&quot;").replace("\n", "&#10;").replace("\t", "&#9;"))


def _split_iri(iri: str) -> tuple[str, str]:
    m = _NCNAME_TAIL.search(iri)
    if not m or m.start() == 0:
        raise ValueError(f"cannot express {iri!r} as an XML qualified name")
    return iri[:m.start()], m.group()


class _Writer:
    def __init__(self, graph: Graph):
        self.graph = graph
        self.labels = blank_labels(graph)
        self.prefixes = {ns: prefix for prefix, ns in graph.namespaces.items()}
        self.prefixes.setdefault(RDF, "rdf")
        needed = set()
        for s, p, o in graph:
            needed.add(_split_iri(p.value)[0])
            if p.value == RDF + "type" and o.is_iri:
                try:
                    needed.add(_split_iri(o.value)[0])
                except ValueError:
                    pass
        extra = itertools.count()
        for ns in sorted(needed - set(self.prefixes)):
            while True:
                candidate = f"ns{next(extra)}"
                if candidate not in self.prefixes.values():
                    break
            self.prefixes[ns] = candidate
        self.by_subject: dict[Term, list[Triple]] = {}
        for t in graph.sorted_triples():
            self.by_subject.setdefault(t.subject, []).append(t)
        self.nested = self._nested_blank_nodes()

    def _nested_blank_nodes(self) -> set[Term]:
        incoming: dict[Term, int] = {}
        for t in self.graph:
            if t.object.is_blank:
                incoming[t.object] = incoming.get(t.object, 0) + 1
        candidates = {b for b, n in incoming.items() if n == 1}
        while True:
            reachable = set()
            frontier = [s for s in self.by_subject if s not in candidates]
            while frontier:
                node = frontier.pop()
                for t in self.by_subject.get(node, ()):
                    if t.object in candidates and t.object not in reachable:
                        reachable.add(t.object)
                        frontier.append(t.object)
            stranded = sorted(candidates - reachable, key=Term.sort_key)
            if not stranded:
                return candidates
            candidates.discard(stranded[0])

    def qname(self, iri: str) -> str:
        ns, local = _split_iri(iri)
        return f"{self.prefixes[ns]}:{local}"

    def _typed_name(self, subject: Term) -> tuple[str, Triple | None]:
        for t in self.by_subject.get(subject, ()):
            if t.predicate.value == RDF + "type" and t.object.is_iri:
                try:
                    return self.qname(t.object.value), t
                except (ValueError, KeyError):
                    continue
        return "rdf:Description", None

    def node(self, subject: Term, indent: int, out: list[str]) -> None:
        pad = " " * indent
        name, type_triple = self._typed_name(subject)
        if subject.is_iri:
            ident = f' rdf:about="{_escape_attr(subject.value)}"'
        elif subject in self.nested:
            ident = ""
        else:
            ident = f' rdf:nodeID="{self.labels[subject]}"'
        props = [t for t in self.by_subject.get(subject, ()) if t != type_triple]
        if not props:
            out.append(f"{pad}<{name}{ident}/>")
            return
        out.append(f"{pad}<{name}{ident}>")
        for t in sorted(props, key=lambda t: (t.predicate.value != RDF + "type", t.predicate.value,
                                              t.object.sort_key())):
            self.property(t, indent + 2, out)
        out.append(f"{pad}</{name}>")

    def property(self, t: Triple, indent: int, out: list[str]) -> None:
        pad = " " * indent
        name = self.qname(t.predicate.value)
        o = t.object
        if o.is_iri:
            out.append(f'{pad}<{name} rdf:resource="{_escape_attr(o.value)}"/>')
        elif o.is_blank and o in self.nested:
            out.append(f"{pad}<{name}>")
            self.node(o, indent + 2, out)
            out.append(f"{pad}</{name}>")
        elif o.is_blank:
            out.append(f'{pad}<{name} rdf:nodeID="{self.labels[o]}"/>')
        else:
            attrs = ""
            if o.datatype:
                attrs = f' rdf:datatype="{_escape_attr(o.datatype)}"'
            elif o.lang:
                attrs = f' xml:lang="{_escape_attr(o.lang)}"'
            out.append(f"{pad}<{name}{attrs}>{_escape_text(o.value)}</{name}>")

    def write(self) -> str:
        out = ['<?xml version="1.0" encoding="utf-8"?>']
        decls = sorted((prefix, ns) for ns, prefix in self.prefixes.items())
        out.append("<rdf:RDF")
        for prefix, ns in decls:
            out.append(f'  xmlns:{prefix}="{_escape_attr(ns)}"')
        out[-1] += ">"
        for subject in sorted(self.by_subject, key=Term.sort_key):
            if subject in self.nested:
                continue
            self.node(subject, 2, out)
        out.append("</rdf:RDF>")
        return "\n".join(out) + "\n"


def serialize_rdfxml(graph: Graph) -> str:
    return _Writer(graph).write()
