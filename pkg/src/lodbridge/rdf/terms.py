"""RDF terms, triples and a set-semantics graph."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
DCAT = "http://www.w3.org/ns/dcat#"
DCT = "http://purl.org/dc/terms/"
FOAF = "http://xmlns.com/foaf/0.1/"
XSD = "http://www.w3.org/2001/XMLSchema#"
SH = "http://www.w3.org/ns/shacl#"
VCARD = "http://www.w3.org/2006/vcard/ns#"

NAMESPACES = {"dcat": DCAT, "dct": DCT, "foaf": FOAF, "rdf": RDF, "xsd": XSD}

_KIND_ORDER = {"iri": 0, "blank": 1, "literal": 2}


@dataclass(frozen=True)
class Term:
    kind: str
    value: str
    datatype: str | None = None
    lang: str | None = None

    def __post_init__(self):
        if self.kind not in _KIND_ORDER:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if not isinstance(self.value, str):
            raise TypeError("term value must be a string")
        if self.kind != "literal" and (self.datatype or self.lang):
            raise ValueError("only literals carry a datatype or language")
        if self.datatype and self.lang:
            raise ValueError("a literal has either a datatype or a language, not both")
        if self.datatype == XSD + "string":
            object.__setattr__(self, "datatype", None)

    @property
    def is_iri(self) -> bool:
        return self.kind == "iri"

    @property
    def is_blank(self) -> bool:
        return self.kind == "blank"

    @property
    def is_literal(self) -> bool:
        return self.kind == "literal"

    def sort_key(self) -> tuple:
        return (_KIND_ORDER[self.kind], self.value, self.datatype or "", self.lang or "")

    def __str__(self) -> str:
        return self.value

    def n3(self) -> str:
        if self.kind == "iri":
            return f"<{self.value}>"
        if self.kind == "blank":
            return f"_:{self.value}"
        text = '"' + escape_literal(self.value) + '"'
        if self.lang:
            return f"{text}@{self.lang}"
        if self.datatype:
            return f"{text}^^<{self.datatype}>"
        return text


def IRI(value: str) -> Term:
    return Term("iri", value)


def BNode(label: str) -> Term:
    return Term("blank", label)


def Literal(value, datatype: str | None = None, lang: str | None = None) -> Term:
    return Term("literal", str(value), datatype, lang)


def escape_literal(text: str) -> str:
    out = []
    for ch in text:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append("\\u%04X" % ord(ch))
        else:
            out.append(ch)
    return "".join(out)


class Triple(NamedTuple):
    subject: Term
    predicate: Term
    object: Term

    def sort_key(self) -> tuple:
        return (self.subject.sort_key(), self.predicate.sort_key(), self.object.sort_key())


def _check(triple: Triple) -> Triple:
    s, p, o = triple
    if not isinstance(s, Term) or s.is_literal:
        raise ValueError("triple subject must be an IRI or blank node")
    if not isinstance(p, Term) or not p.is_iri:
        raise ValueError("triple predicate must be an IRI")
    if not isinstance(o, Term):
        raise ValueError("triple object must be a term")
    return Triple(s, p, o)


class Graph:
    def __init__(self, triples: Iterable = (), namespaces: dict[str, str] | None = None):
        self._triples: set[Triple] = set()
        self.namespaces: dict[str, str] = dict(NAMESPACES if namespaces is None else namespaces)
        for t in triples:
            self.add(t)

    def add(self, triple) -> None:
        self._triples.add(_check(Triple(*triple)))

    def add_all(self, triples: Iterable) -> None:
        for t in triples:
            self.add(t)

    def remove(self, triple) -> None:
        self._triples.discard(Triple(*triple))

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __contains__(self, triple) -> bool:
        return Triple(*triple) in self._triples

    def __eq__(self, other) -> bool:
        return isinstance(other, Graph) and self._triples == other._triples

    def __or__(self, other: "Graph") -> "Graph":
        g = Graph(self._triples, {**self.namespaces, **other.namespaces})
        g.add_all(other)
        return g

    def copy(self) -> "Graph":
        return Graph(self._triples, self.namespaces)

    def triples(self, s: Term | None = None, p: Term | None = None, o: Term | None = None) -> Iterator[Triple]:
        for t in self._triples:
            if (s is None or t.subject == s) and (p is None or t.predicate == p) and (o is None or t.object == o):
                yield t

    def objects(self, s: Term | None = None, p: Term | None = None) -> list[Term]:
        return sorted({t.object for t in self.triples(s, p, None)}, key=Term.sort_key)

    def subjects(self, p: Term | None = None, o: Term | None = None) -> list[Term]:
        return sorted({t.subject for t in self.triples(None, p, o)}, key=Term.sort_key)

    def value(self, s: Term, p: Term) -> Term | None:
        objs = self.objects(s, p)
        return objs[0] if objs else None

    def sorted_triples(self) -> list[Triple]:
        return sorted(self._triples, key=Triple.sort_key)

    def blank_nodes(self) -> set[Term]:
        return {x for t in self._triples for x in (t.subject, t.object) if x.is_blank}


def relabel_blank_nodes(triples: Iterable[Triple], prefix: str = "b") -> list[Triple]:
    """Rename blank nodes ``b0, b1, ...`` in order of first appearance."""
    mapping: dict[Term, Term] = {}
    counter = itertools.count()

    def fix(term: Term) -> Term:
        if not term.is_blank:
            return term
        if term not in mapping:
            mapping[term] = BNode(f"{prefix}{next(counter)}")
        return mapping[term]

    return [Triple(fix(s), p, fix(o)) for s, p, o in triples]


def isomorphic(a: Graph, b: Graph) -> bool:
    """Graph isomorphism up to blank-node renaming (backtracking over blank nodes)."""
    if len(a) != len(b):
        return False
    ground_a = {t for t in a if not (t.subject.is_blank or t.object.is_blank)}
    ground_b = {t for t in b if not (t.subject.is_blank or t.object.is_blank)}
    if ground_a != ground_b:
        return False
    rest_a = [t for t in a if t not in ground_a]
    rest_b = {t for t in b if t not in ground_b}
    blanks_a = sorted({x for t in rest_a for x in (t.subject, t.object) if x.is_blank}, key=Term.sort_key)
    blanks_b = {x for t in rest_b for x in (t.subject, t.object) if x.is_blank}
    if len(blanks_a) != len(blanks_b):
        return False

    def signature(triples, node) -> tuple:
        items = []
        for t in triples:
            if t.subject == node:
                direction, other = "out", t.object
            elif t.object == node:
                direction, other = "in", t.subject
            else:
                continue
            items.append((direction, t.predicate.value, "_" if other.is_blank else repr(other.sort_key())))
        return tuple(sorted(items))

    sig_b: dict[tuple, list[Term]] = {}
    for node in blanks_b:
        sig_b.setdefault(signature(rest_b, node), []).append(node)
    candidates = {}
    for node in blanks_a:
        options = sig_b.get(signature(rest_a, node))
        if not options:
            return False
        candidates[node] = options

    order = sorted(blanks_a, key=lambda n: len(candidates[n]))
    mapping: dict[Term, Term] = {}
    used: set[Term] = set()

    def mapped(t: Triple) -> Triple | None:
        s = mapping.get(t.subject, None) if t.subject.is_blank else t.subject
        o = mapping.get(t.object, None) if t.object.is_blank else t.object
        if s is None or o is None:
            return None
        return Triple(s, t.predicate, o)

    def consistent() -> bool:
        for t in rest_a:
            m = mapped(t)
            if m is not None and m not in rest_b:
                return False
        return True

    def search(i: int) -> bool:
        if i == len(order):
            return {mapped(t) for t in rest_a} == rest_b
        node = order[i]
        for option in candidates[node]:
            if option in used:
                continue
            mapping[node] = option
            used.add(option)
            if consistent() and search(i + 1):
                return True
            del mapping[node]
            used.discard(option)
        return False

    return search(0)
