"""A SELECT-only SPARQL subset: basic graph patterns, regex filters, DISTINCT and LIMIT."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from ..errors import BadRequest
from ..rdf.terms import RDF, XSD, Graph, IRI, Literal, Term
from ..rdf.turtle import _unescape

UNSUPPORTED = {
    "OPTIONAL", "UNION", "GRAPH", "ORDER", "GROUP", "HAVING", "MINUS", "BIND", "VALUES", "SERVICE",
    "CONSTRUCT", "ASK", "DESCRIBE", "OFFSET", "FROM", "REDUCED", "EXISTS", "NOT", "INSERT", "DELETE",
}


class QuerySyntaxError(BadRequest):
    title = "Query syntax error"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})" if line else message)
        self.line, self.column = line, column


class UnsupportedConstruct(BadRequest):
    title = "Unsupported query construct"

    def __init__(self, construct: str):
        super().__init__(f"{construct} is not supported by this query engine")
        self.construct = construct


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


Slot = Union[Var, Term]


@dataclass(frozen=True)
class RegexFilter:
    variable: str
    pattern: str
    use_str: bool = True  # regex(str(?v), ...) rather than regex(?v, ...)

    def compiled(self) -> re.Pattern:
        return compile_regex(self.pattern)

    def text_of(self, term: Term) -> str | None:
        """The string the regex sees, or None where evaluation is a type error (filter fails)."""
        if term.is_blank:
            return None
        if self.use_str:
            return term.value
        if term.is_literal and term.datatype is None:
            return term.value
        return None


@dataclass
class QueryPlan:
    prefixes: dict[str, str]
    select_vars: list[str]
    distinct: bool
    patterns: list[tuple[Slot, Slot, Slot]]
    filters: list[RegexFilter] = field(default_factory=list)
    limit: int | None = None

    def pattern_vars(self) -> list[str]:
        seen: list[str] = []
        for pattern in self.patterns:
            for slot in pattern:
                if isinstance(slot, Var) and slot.name not in seen:
                    seen.append(slot.name)
        return seen


# -- regex subset --------------------------------------------------------------

def compile_regex(pattern: str) -> re.Pattern:
    """Validate ``pattern`` against the supported subset and compile it.

    Supported: literal characters, escaped metacharacters, bracket classes,
    ``^``/``$`` anchors, ``.``, ``*``, ``+``, ``?``, groups and ``|``.
    ``.`` excludes line terminators and ``$`` anchors at the very end only.
    """
    out = []
    i, n, depth = 0, len(pattern), 0
    while i < n:
        ch = pattern[i]
        if ch == "\\":
            if i + 1 >= n:
                raise BadRequest("regex ends with a dangling backslash")
            nxt = pattern[i + 1]
            if nxt.isalnum():
                raise UnsupportedConstruct(f"regex escape \\{nxt}")
            out.append(re.escape(nxt))
            i += 2
            continue
        if ch == "[":
            j = i + 1
            if j < n and pattern[j] == "^":
                j += 1
            if j < n and pattern[j] == "]":
                j += 1
            while j < n and pattern[j] != "]":
                if pattern[j] == "\\":
                    if j + 1 < n and pattern[j + 1].isalnum():
                        raise UnsupportedConstruct(f"regex escape \\{pattern[j + 1]}")
                    j += 1
                elif pattern[j] == "[":
                    raise UnsupportedConstruct("nested regex character class")
                j += 1
            if j >= n:
                raise BadRequest("unterminated regex character class")
            out.append(pattern[i:j + 1])
            i = j + 1
            continue
        if ch in "{}":
            raise UnsupportedConstruct("regex counted repetition {m,n}")
        if ch == "(":
            if i + 1 < n and pattern[i + 1] == "?":
                raise UnsupportedConstruct("regex extension group (?...)")
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise BadRequest("unbalanced parenthesis in regex")
        if ch == ".":
            out.append(r"[^\n\r]")
        elif ch == "$":
            out.append(r"\Z")
        else:
            out.append(ch)
        i += 1
    if depth:
        raise BadRequest("unbalanced parenthesis in regex")
    try:
        return re.compile("".join(out))
    except re.error as exc:
        raise BadRequest(f"invalid regex {pattern!r}: {exc}") from exc


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<iri><[^<>"{}|^`\\\s]*>)
  | (?P<var>[?$][A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<lang>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
  | (?P<dtype>\^\^)
  | (?P<number>[+-]?(?:\d+\.\d+|\d+))
  | (?P<pname>(?:[A-Za-z][\w.-]*)?:(?:[\w-](?:[\w.-]*[\w-])?)?)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}()\[\].,;*])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        for k, ch in enumerate(m.group()):
            if ch == "\n":
                line, line_start = line + 1, m.start() + k + 1
        pos = m.end()
    return toks


class _QueryParser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.prefixes: dict[str, str] = {}
        self.base = ""

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> _Tok:
        tok = self.peek()
        if tok is None:
            last = self.toks[-1] if self.toks else _Tok("", "", 1, 0)
            raise QuerySyntaxError("unexpected end of query", last.line, last.col + len(last.text))
        self.i += 1
        return tok

    def error(self, tok: _Tok, message: str) -> QuerySyntaxError:
        return QuerySyntaxError(message, tok.line, tok.col)

    def keyword(self, tok: _Tok | None) -> str | None:
        return tok.text.upper() if tok is not None and tok.kind == "word" else None

    def expect_word(self, word: str) -> _Tok:
        tok = self.next()
        kw = self.keyword(tok)
        if kw in UNSUPPORTED:
            raise UnsupportedConstruct(kw)
        if kw != word:
            raise self.error(tok, f"expected {word}, found {tok.text!r}")
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.next()
        if tok.text != text:
            raise self.error(tok, f"expected {text!r}, found {tok.text!r}")
        return tok

    def parse(self) -> QueryPlan:
        while self.keyword(self.peek()) in ("PREFIX", "BASE"):
            kw = self.keyword(self.next())
            if kw == "PREFIX":
                name = self.next()
                if name.kind != "pname" or not name.text.endswith(":"):
                    raise self.error(name, "expected a prefix name ending in ':'")
                iri = self.next()
                if iri.kind != "iri":
                    raise self.error(iri, "expected an IRI after the prefix name")
                self.prefixes[name.text[:-1]] = self.base + iri.text[1:-1] if self.base else iri.text[1:-1]
            else:
                iri = self.next()
                if iri.kind != "iri":
                    raise self.error(iri, "expected an IRI after BASE")
                self.base = iri.text[1:-1]
        self.expect_word("SELECT")
        distinct = False
        if self.keyword(self.peek()) == "DISTINCT":
            self.next()
            distinct = True
        elif self.keyword(self.peek()) == "REDUCED":
            raise UnsupportedConstruct("REDUCED")
        select: list[str] | None = []
        star = False
        while True:
            tok = self.peek()
            if tok is None:
                break
            if tok.kind == "var":
                select.append(self.next().text[1:])
            elif tok.text == "*" and not select and not star:
                self.next()
                star = True
            elif tok.text == "(":
                raise UnsupportedConstruct("SELECT expressions")
            else:
                break
        if not select and not star:
            raise self.error(self.peek() or self.toks[-1], "SELECT needs at least one variable or '*'")
        if self.keyword(self.peek()) == "FROM":
            raise UnsupportedConstruct("FROM")
        if self.keyword(self.peek()) == "WHERE":
            self.next()
        patterns, filters = self.group()
        limit = None
        while self.peek() is not None:
            tok = self.next()
            kw = self.keyword(tok)
            if kw in UNSUPPORTED:
                raise UnsupportedConstruct("ORDER BY" if kw == "ORDER" else "GROUP BY" if kw == "GROUP" else kw)
            if kw != "LIMIT" or limit is not None:
                raise self.error(tok, f"unexpected {tok.text!r} after the WHERE clause")
            num = self.next()
            if num.kind != "number" or not num.text.isdigit() or int(num.text) < 1:
                raise self.error(num, "LIMIT needs a positive integer")
            limit = int(num.text)
        plan = QueryPlan(self.prefixes, select, distinct, patterns, filters, limit)
        known = plan.pattern_vars()
        if star:
            plan.select_vars = known
        for name in plan.select_vars:
            if name not in known:
                raise QuerySyntaxError(f"selected variable ?{name} does not occur in the WHERE clause")
        for f in filters:
            if f.variable not in known:
                raise QuerySyntaxError(f"filtered variable ?{f.variable} does not occur in the WHERE clause")
        return plan

    def group(self) -> tuple[list, list[RegexFilter]]:
        self.expect("{")
        patterns: list = []
        filters: list[RegexFilter] = []
        while True:
            tok = self.peek()
            if tok is None:
                self.next()  # raises the end-of-query error
            if tok.text == "}":
                self.next()
                return patterns, filters
            if tok.text == ".":
                self.next()
                continue
            if tok.text == "{":
                raise UnsupportedConstruct("nested group patterns")
            kw = self.keyword(tok)
            if kw in UNSUPPORTED:
                raise UnsupportedConstruct(kw)
            if kw == "FILTER":
                self.next()
                filters.append(self.filter())
                continue
            self.triples(patterns)

    def filter(self) -> RegexFilter:
        bracketed = self.peek() is not None and self.peek().text == "("
        if bracketed:
            self.next()
        fn = self.next()
        if self.keyword(fn) in ("NOT", "EXISTS"):
            raise UnsupportedConstruct("FILTER " + self.keyword(fn))
        if self.keyword(fn) != "REGEX":
            raise UnsupportedConstruct(f"FILTER function {fn.text}")
        self.expect("(")
        arg = self.next()
        use_str = self.keyword(arg) == "STR"
        if use_str:
            self.expect("(")
            var = self.next()
            self.expect(")")
        elif arg.kind == "var":
            var = arg
        else:
            raise UnsupportedConstruct(f"regex argument {arg.text}")
        if var.kind != "var":
            raise self.error(var, "str() takes a variable")
        self.expect(",")
        pat = self.next()
        if pat.kind != "string":
            raise self.error(pat, "regex pattern must be a string literal")
        if self.peek() is not None and self.peek().text == ",":
            raise UnsupportedConstruct("regex flags")
        self.expect(")")
        if bracketed:
            self.expect(")")
        pattern = _unescape(pat.text[1:-1], pat.line, pat.col)
        compile_regex(pattern)
        return RegexFilter(var.text[1:], pattern, use_str)

    def triples(self, out: list) -> None:
        subject = self.slot(self.next(), "subject")
        while True:
            verb_tok = self.next()
            verb = IRI(RDF + "type") if verb_tok.text == "a" else self.slot(verb_tok, "predicate")
            while True:
                obj = self.slot(self.next(), "object")
                out.append((subject, verb, obj))
                if self.peek() is not None and self.peek().text == ",":
                    self.next()
                    continue
                break
            if self.peek() is not None and self.peek().text == ";":
                self.next()
                if self.peek() is not None and self.peek().text in (".", "}"):
                    return
                continue
            return

    def slot(self, tok: _Tok, position: str) -> Slot:
        if tok.kind == "var":
            return Var(tok.text[1:])
        if tok.kind == "iri":
            return IRI(self.base + tok.text[1:-1] if self.base and ":" not in tok.text else tok.text[1:-1])
        if tok.kind == "pname":
            prefix, _, local = tok.text.partition(":")
            if prefix not in self.prefixes:
                raise self.error(tok, f"undeclared prefix {prefix!r}")
            return IRI(self.prefixes[prefix] + local)
        if position == "object" and tok.kind == "string":
            value = _unescape(tok.text[1:-1], tok.line, tok.col)
            nxt = self.peek()
            if nxt is not None and nxt.kind == "lang":
                self.next()
                return Literal(value, lang=nxt.text[1:])
            if nxt is not None and nxt.kind == "dtype":
                self.next()
                dt = self.slot(self.next(), "predicate")
                if not isinstance(dt, Term):
                    raise self.error(nxt, "datatype must be an IRI")
                return Literal(value, dt.value)
            return Literal(value)
        if position == "object" and tok.kind == "number":
            return Literal(tok.text, XSD + ("decimal" if "." in tok.text else "integer"))
        kw = self.keyword(tok)
        if kw in UNSUPPORTED:
            raise UnsupportedConstruct(kw)
        if tok.text == "[" or tok.text == "(":
            raise UnsupportedConstruct("blank node and collection syntax")
        raise self.error(tok, f"unexpected {tok.text!r} in {position} position")


def parse_query(text: str) -> QueryPlan:
    return _QueryParser(text).parse()


# -- execution -----------------------------------------------------------------

Binding = dict[str, Term]


def _match(slot: Slot, term: Term, binding: Binding) -> Binding | None:
    if isinstance(slot, Var):
        bound = binding.get(slot.name)
        if bound is None:
            return {**binding, slot.name: term}
        return binding if bound == term else None
    return binding if slot == term else None


def _resolve(slot: Slot, binding: Binding) -> Term | None:
    if isinstance(slot, Var):
        return binding.get(slot.name)
    return slot


def solutions(plan: QueryPlan, graph: Graph) -> list[Binding]:
    """All bindings satisfying every pattern and filter (bag semantics)."""
    current: list[Binding] = [{}]
    for s, p, o in plan.patterns:
        extended: list[Binding] = []
        for binding in current:
            for t in graph.triples(_resolve(s, binding), _resolve(p, binding), _resolve(o, binding)):
                b = _match(s, t.subject, binding)
                if b is not None:
                    b = _match(p, t.predicate, b)
                if b is not None:
                    b = _match(o, t.object, b)
                if b is not None:
                    extended.append(b)
        current = extended
        if not current:
            break
    regexes = [(f, f.compiled()) for f in plan.filters]

    def keep(b: Binding) -> bool:
        for f, rx in regexes:
            text = f.text_of(b[f.variable]) if f.variable in b else None
            if text is None or not rx.search(text):
                return False
        return True

    return [b for b in current if keep(b)]


def execute_query(plan: QueryPlan, graph: Graph) -> list[tuple[Term, ...]]:
    """Rows projected onto the select variables: sorted, then deduplicated, then limited."""
    if not plan.patterns:
        return []
    rows = [tuple(b[v] for v in plan.select_vars) for b in solutions(plan, graph)]
    rows.sort(key=lambda row: tuple(t.sort_key() for t in row))
    if plan.distinct:
        rows = list(dict.fromkeys(rows))
    if plan.limit is not None:
        rows = rows[:plan.limit]
    return rows


def _json_term(term: Term) -> dict:
    if term.is_iri:
        return {"type": "uri", "value": term.value}
    if term.is_blank:
        return {"type": "bnode", "value": term.value}
    doc = {"type": "literal", "value": term.value}
    if term.lang:
        doc["xml:lang"] = term.lang
    elif term.datatype:
        doc["datatype"] = term.datatype
    return doc


def results_json(plan: QueryPlan, rows: Iterable[tuple[Term, ...]]) -> dict:
    return {"head": {"vars": list(plan.select_vars)},
            "results": {"bindings": [{v: _json_term(t) for v, t in zip(plan.select_vars, row)} for row in rows]}}


def results_table(plan: QueryPlan, rows: Iterable[tuple[Term, ...]]) -> str:
    rows = [[t.value for t in row] for row in rows]
    header = ["?" + v for v in plan.select_vars]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    fmt = " | ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), "-+-".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"
