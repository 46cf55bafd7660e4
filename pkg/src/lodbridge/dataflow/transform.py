"""Declarative JSON reshaping: ordered rules mapping input paths to output paths.

A rule names a dotted ``target`` and exactly one source: ``source`` (a dotted
path into the input), ``constant`` or ``template`` (``${path}`` placeholders).
Optional ``stringOp`` (titlecase/uppercase/lowercase) applies to the copied
value, or to each interpolated value of a template. Optional ``timeOp``
re-emits a timestamp as ``YYYY-MM-DDTHH:MM:SS.ffZ``.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..clock import UTC, format_instant, parse_instant
from ..entity import canonical_number
from ..errors import BadRequest, TemplateError, UnresolvedPath

STRING_OPS = ("none", "titlecase", "uppercase", "lowercase")
PLACEHOLDER = re.compile(r"\$\{([^}]+)\}")
_MISSING = object()


def get_path(document: Any, path: str, default: Any = _MISSING) -> Any:
    node = document
    for part in path.split("."):
        if isinstance(node, Mapping) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            if default is _MISSING:
                raise UnresolvedPath(f"path {path!r} not found")
            return default
    return node


def set_path(document: dict, path: str, value: Any) -> None:
    parts = path.split(".")
    node = document
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = node[part] = {}
        node = child
    node[parts[-1]] = value


def render_template(template: str, document: Any, string_op: str = "none") -> str:
    """Interpolate ``${path}`` placeholders; unresolved names raise TemplateError."""
    def sub(m: re.Match) -> str:
        try:
            value = get_path(document, m.group(1).strip())
        except UnresolvedPath as exc:
            raise TemplateError(f"template variable ${{{m.group(1)}}} cannot be resolved") from exc
        return apply_string_op(value if isinstance(value, str) else json.dumps(value), string_op)

    return PLACEHOLDER.sub(sub, template)


def apply_string_op(value: Any, op: str | None) -> Any:
    if not op or op == "none" or not isinstance(value, str):
        return value
    if op == "titlecase":
        return value.title()
    if op == "uppercase":
        return value.upper()
    if op == "lowercase":
        return value.lower()
    raise BadRequest(f"unknown stringOp {op!r}")


def apply_time_op(value: Any, op: Mapping) -> str:
    fmt = op.get("parseFormat")
    try:
        if fmt:
            dt = datetime.strptime(str(value), fmt)
            dt = dt.replace(tzinfo=UTC) if dt.tzinfo is None else dt.astimezone(UTC)
        else:
            dt = parse_instant(str(value))
    except ValueError as exc:
        raise UnresolvedPath(f"cannot parse timestamp {value!r}: {exc}") from exc
    if op.get("emitUtcFraction2", True):
        return format_instant(dt)
    return dt.isoformat()


@dataclass(frozen=True)
class Rule:
    target: str
    source: str | None = None
    constant: Any = None
    template: str | None = None
    string_op: str = "none"
    time_op: Mapping | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Rule":
        given = [k for k in ("source", "constant", "template") if k in doc]
        if len(given) != 1:
            raise BadRequest(f"rule for {doc.get('target')!r} needs exactly one of source/constant/template")
        op = doc.get("stringOp", "none") or "none"
        if op not in STRING_OPS:
            raise BadRequest(f"unknown stringOp {op!r}")
        return cls(doc["target"], doc.get("source"), doc.get("constant"), doc.get("template"),
                   op, doc.get("timeOp"))


@dataclass(frozen=True)
class TransformSpec:
    rules: tuple[Rule, ...]
    on_missing: str = "fail-record"  # or "skip-rule"

    def __post_init__(self):
        targets = [r.target for r in self.rules]
        if len(set(targets)) != len(targets):
            raise BadRequest("transform targetPaths must be unique")
        if self.on_missing not in ("fail-record", "skip-rule"):
            raise BadRequest(f"unknown onMissing mode {self.on_missing!r}")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TransformSpec":
        return cls(tuple(Rule.from_dict(r) for r in doc.get("rules", ())), doc.get("onMissing", "fail-record"))


def load_spec(path: str | Path | None = None, name: str = "weather_transform.json") -> TransformSpec:
    if path is None:
        text = resources.files("lodbridge.data").joinpath(name).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return TransformSpec.from_dict(json.loads(text))


def _evaluate(rule: Rule, document: Any) -> Any:
    if rule.template is not None:
        return render_template(rule.template, document, rule.string_op)
    if rule.source is not None:
        value = copy.deepcopy(get_path(document, rule.source))
    else:
        value = copy.deepcopy(rule.constant)
    value = apply_string_op(value, rule.string_op)
    if rule.time_op:
        value = apply_time_op(value, rule.time_op)
    return canonical_number(value)


def apply_transform(document: Any, spec: TransformSpec) -> dict:
    if not isinstance(document, Mapping):
        raise BadRequest("transform input must be a JSON object")
    out: dict = {}
    for rule in spec.rules:
        try:
            value = _evaluate(rule, document)
        except (UnresolvedPath, TemplateError):
            if spec.on_missing == "skip-rule":
                continue
            raise
        set_path(out, rule.target, value)
    return out
