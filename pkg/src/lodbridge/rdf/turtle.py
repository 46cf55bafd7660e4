"""Turtle subset: prefixes, ``a``, ``;``/``,`` lists, ``[ ]`` blank nodes and
plain/typed/language literals. Collections are rejected."""
from __future__ import annotations

import re
import urllib.parse

from ..errors import BadRequest
from .terms import RDF, XSD, BNode, Graph, IRI, Literal, Term, Triple, escape_literal, relabel_blank_nodes


class RdfSyntaxError(BadRequest):
    title = "RDF syntax error"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<iri><[^<>"{}|^`\\\x00-\x20]*>)
  | (?P<long>\"\"\"(?:[^"\\]|\\.|"(?!""))*\"\"\"|'''(?:[^'\\]|\\.|'(?!''))*''')
  | (?P<string>"(?:[^"\\\n\r]|\\.)*"|'(?:[^'\\\n\r]|\\.)*')
  | (?P<langtag>@[a-zA-Z]+(?:-[a-zA-Z0-9]+)*)
  | (?P<dtype>\^\^)
  | (?P<bnode>_:[A-Za-z0-9_][A-Za-z0-9_.-]*(?<!\.))
  | (?P<number>[+-]?(?:[0-9]+\.[0-9]+|\.[0-9]+|[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<pname>(?:[A-Za-z][A-Za-z0-9_.-]*)?:(?:[A-Za-z0-9_:%-](?:[A-Za-z0-9_.:%-]*[A-Za-z0-9_:%-])?)?)
  | (?P<word>[A-Za-z][A-Za-z0-9_-]*)
  | (?P<punct>[.;,\[\]()])
""", re.VERBOSE)

_ESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


def _unescape(body: str, line: int, col: int) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = body[i + 1:i + 2]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt in ("u", "U"):
            width = 4 if nxt == "u" else 8
            digits = body[i + 2:i + 2 + width]
            if len(digits) != width or not all(c in "0123456789abcdefABCDEF" for c in digits):
                raise RdfSyntaxError("bad unicode escape", line, col)
            out.append(chr(int(digits, 16)))
            i += 2 + width
        else:
            raise RdfSyntaxError(f"bad escape \\{nxt}", line, col)
    return "".join(out)


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, str, int, int]] = []
        pos, line, line_start = 0, 1, 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise RdfSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
            kind = m.lastgroup
            value = m.group()
            if kind != "ws":
                self.items.append((kind, value, line, pos - line_start + 1))
            newlines = value.count("\n")
            if newlines:
                line += newlines
                line_start = pos + value.rindex("\n") + 1
            pos = m.end()
        self.i = 0
        self.end = (line, pos - line_start + 1)

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else ("eof", "", *self.end)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok[1] != value:
            raise RdfSyntaxError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2], tok[3])
        return tok


class _Parser:
    def __init__(self, text: str, base: str | None):
        self.tokens = _Tokens(text)
        self.prefixes: dict[str, str] = {}
        self.base = base
        self.triples: list[Triple] = []
        self._anon = 0

    def fresh(self) -> Term:
        self._anon += 1
        return BNode(f"\x00anon{self._anon}")  # cannot collide with a _:label

    def parse(self) -> None:
        while self.tokens.peek()[0] != "eof":
            kind, value, line, col = self.tokens.peek()
            if value in ("@prefix", "@base") or (kind == "word" and value.upper() in ("PREFIX", "BASE")):
                self.directive()
                continue
            self.statement()

    def directive(self) -> None:
        kind, value, line, col = self.tokens.next()
        sparql_style = not value.startswith("@")
        if value.lower().endswith("prefix"):
            tok = self.tokens.next()
            if tok[0] != "pname" or not tok[1].endswith(":"):
                raise RdfSyntaxError("expected a prefix name ending in ':'", tok[2], tok[3])
            iri = self.tokens.next()
            if iri[0] != "iri":
                raise RdfSyntaxError("expected an IRI", iri[2], iri[3])
            self.prefixes[tok[1][:-1]] = self.resolve(iri[1][1:-1])
        else:
            iri = self.tokens.next()
            if iri[0] != "iri":
                raise RdfSyntaxError("expected an IRI", iri[2], iri[3])
            self.base = self.resolve(iri[1][1:-1])
        if not sparql_style:
            self.tokens.expect(".")

    def resolve(self, iri: str) -> str:
        iri = _unescape(iri, 0, 0) if "\\" in iri else iri
        if self.base and not urllib.parse.urlsplit(iri).scheme:
            return urllib.parse.urljoin(self.base, iri)
        return iri

    def statement(self) -> None:
        tok = self.tokens.peek()
        if tok[1] == "[":
            subject = self.blank_property_list()
            if self.tokens.peek()[1] != ".":
                self.predicate_object_list(subject)
        else:
            subject = self.subject()
            self.predicate_object_list(subject)
        self.tokens.expect(".")

    def subject(self) -> Term:
        kind, value, line, col = self.tokens.next()
        if kind == "iri":
            return IRI(self.resolve(value[1:-1]))
        if kind == "pname":
            return self.pname(value, line, col)
        if kind == "bnode":
            return BNode(value[2:])
        if value == "(":
            raise RdfSyntaxError("collections are not supported", line, col)
        raise RdfSyntaxError(f"unexpected {value or 'end of input'!r} where a subject was expected", line, col)

    def pname(self, value: str, line: int, col: int) -> Term:
        prefix, _, local = value.partition(":")
        if prefix not in self.prefixes:
            raise RdfSyntaxError(f"undeclared prefix {prefix!r}", line, col)
        local = re.sub(r"\\(.)", r"\1", local)
        return IRI(self.prefixes[prefix] + local)

    def verb(self) -> Term:
        kind, value, line, col = self.tokens.next()
        if kind == "word" and value == "a":
            return IRI(RDF + "type")
        if kind == "iri":
            return IRI(self.resolve(value[1:-1]))
        if kind == "pname":
            return self.pname(value, line, col)
        raise RdfSyntaxError(f"unexpected {value or 'end of input'!r} where a predicate was expected", line, col)

    def predicate_object_list(self, subject: Term) -> None:
        while True:
            predicate = self.verb()
            while True:
                self.triples.append(Triple(subject, predicate, self.object()))
                if self.tokens.peek()[1] != ",":
                    break
                self.tokens.next()
            if self.tokens.peek()[1] != ";":
                return
            while self.tokens.peek()[1] == ";":
                self.tokens.next()
            if self.tokens.peek()[1] in (".", "]"):
                return

    def blank_property_list(self) -> Term:
        self.tokens.expect("[")
        node = self.fresh()
        if self.tokens.peek()[1] != "]":
            self.predicate_object_list(node)
        self.tokens.expect("]")
        return node

    def object(self) -> Term:
        kind, value, line, col = self.tokens.peek()
        if value == "[":
            return self.blank_property_list()
        self.tokens.next()
        if kind == "iri":
            return IRI(self.resolve(value[1:-1]))
        if kind == "pname":
            return self.pname(value, line, col)
        if kind == "bnode":
            return BNode(value[2:])
        if kind in ("string", "long"):
            quote = 3 if kind == "long" else 1
            lexical = _unescape(value[quote:-quote], line, col)
            nxt = self.tokens.peek()
            if nxt[0] == "langtag":
                self.tokens.next()
                return Literal(lexical, lang=nxt[1][1:])
            if nxt[0] == "dtype":
                self.tokens.next()
                dt = self.tokens.next()
                if dt[0] == "iri":
                    return Literal(lexical, self.resolve(dt[1][1:-1]))
                if dt[0] == "pname":
                    return Literal(lexical, self.pname(dt[1], dt[2], dt[3]).value)
                raise RdfSyntaxError("expected a datatype IRI", dt[2], dt[3])
            return Literal(lexical)
        if kind == "number":
            if re.fullmatch(r"[+-]?[0-9]+", value):
                return Literal(value, XSD + "integer")
            if "e" in value.lower():
                return Literal(value, XSD + "double")
            return Literal(value, XSD + "decimal")
        if kind == "word" and value in ("true", "false"):
            return Literal(value, XSD + "boolean")
        if value == "(":
            raise RdfSyntaxError("collections are not supported", line, col)
        raise RdfSyntaxError(f"unexpected {value or 'end of input'!r} where an object was expected", line, col)


def parse_turtle(text: str, base: str | None = None) -> Graph:
    parser = _Parser(text, base)
    parser.parse()
    ns = dict(parser.prefixes)
    return Graph(relabel_blank_nodes(parser.triples), ns)


# -- serialization -----------------------------------------------------------

_LOCAL = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")
_BLANK_LABEL = re.compile(r"^[A-Za-z0-9_]+$")


def qname(iri: str, namespaces: dict[str, str]) -> str | None:
    best = None
    for prefix, ns in namespaces.items():
        if iri.startswith(ns) and _LOCAL.match(iri[len(ns):]):
            if best is None or len(ns) > len(namespaces[best]):
                best = prefix
    if best is None:
        return None
    return f"{best}:{iri[len(namespaces[best]):]}"


def _term(term: Term, namespaces: dict[str, str], labels: dict[Term, str]) -> str:
    if term.is_iri:
        return qname(term.value, namespaces) or f"<{term.value}>"
    if term.is_blank:
        return "_:" + labels[term]
    text = '"' + escape_literal(term.value) + '"'
    if term.lang:
        return f"{text}@{term.lang}"
    if term.datatype:
        return f"{text}^^{qname(term.datatype, namespaces) or '<' + term.datatype + '>'}"
    return text


def blank_labels(graph: Graph) -> dict[Term, str]:
    labels = {}
    taken = set()
    for node in sorted(graph.blank_nodes(), key=Term.sort_key):
        if _BLANK_LABEL.match(node.value) and node.value not in taken:
            labels[node] = node.value
            taken.add(node.value)
    counter = 0
    for node in sorted(graph.blank_nodes(), key=Term.sort_key):
        if node not in labels:
            while f"n{counter}" in taken:
                counter += 1
            labels[node] = f"n{counter}"
            taken.add(labels[node])
    return labels


def _predicate_key(p: Term) -> tuple:
    return (p.value != RDF + "type", p.value)


def serialize_turtle(graph: Graph) -> str:
    ns = graph.namespaces
    labels = blank_labels(graph)
    lines = [f"@prefix {prefix}: <{iri}> ." for prefix, iri in sorted(ns.items())]
    by_subject: dict[Term, dict[Term, list[Term]]] = {}
    for s, p, o in graph:
        by_subject.setdefault(s, {}).setdefault(p, []).append(o)
    for subject in sorted(by_subject, key=Term.sort_key):
        lines.append("")
        preds = by_subject[subject]
        chunks = []
        for p in sorted(preds, key=_predicate_key):
            verb = "a" if p.value == RDF + "type" else _term(p, ns, labels)
            objs = ", ".join(_term(o, ns, labels) for o in sorted(preds[p], key=Term.sort_key))
            chunks.append(f"{verb} {objs}")
        lines.append(_term(subject, ns, labels) + " " + " ;\n    ".join(chunks) + " .")
    return "\n".join(lines) + "\n"
