"""Metadata quality assessment: weighted indicators over a dataset's DCAT graph.

Checks are existential: an indicator passes when at least one value satisfies
it on the dataset node (or on one of its distributions, per ``params.on``).
"""
from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol

from .errors import BadRequest, NotFound
from .rdf.shapes import ShapeSet, load_shapes, validate_shapes
from .rdf.terms import DCAT, RDF, Graph, IRI, Term

DIMENSIONS = ("Findability", "Accessibility", "Interoperability", "Reusability", "Contextuality")
CHECK_KINDS = ("property-present", "property-in-vocabulary", "url-status", "format-machine-readable",
               "dcat-ap-conformance")
RATINGS = ("bad", "sufficient", "good", "excellent")
IANA = "http://www.iana.org/assignments/media-types/"
_REQUIRED_PARAMS = {
    "property-present": ("property",),
    "property-in-vocabulary": ("properties", "vocabulary"),
    "url-status": ("property",),
    "format-machine-readable": ("list",),
    "dcat-ap-conformance": ("shapes",),
}


class DatasetNotInGraph(NotFound):
    kind = "DatasetNotInGraph"
    title = "Dataset not present in graph"


@dataclass(frozen=True)
class Indicator:
    id: str
    dimension: str
    weight: int
    check_kind: str
    params: dict

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise BadRequest(f"indicator {self.id}: unknown dimension {self.dimension!r}")
        if not isinstance(self.weight, int) or self.weight < 0:
            raise BadRequest(f"indicator {self.id}: weight must be a non-negative integer")
        if self.check_kind not in CHECK_KINDS:
            raise BadRequest(f"indicator {self.id}: unknown checkKind {self.check_kind!r}")
        missing = [p for p in _REQUIRED_PARAMS[self.check_kind] if p not in self.params]
        if missing:
            raise BadRequest(f"indicator {self.id}: missing params {missing}")


@dataclass(frozen=True)
class Thresholds:
    excellent_min: int
    good_min: int
    sufficient_min: int

    def __post_init__(self):
        if not self.excellent_min > self.good_min > self.sufficient_min > 0:
            raise BadRequest("thresholds must satisfy excellent > good > sufficient > 0")


@dataclass(frozen=True)
class MqaConfig:
    indicators: tuple[Indicator, ...]
    thresholds: Thresholds
    vocabularies: dict[str, tuple[str, ...]]
    format_lists: dict[str, frozenset[str]]
    media_type_tokens: dict[str, str]
    format_aliases: dict[str, str] = field(default_factory=dict)
    shapes: ShapeSet | None = None

    @property
    def max_possible(self) -> int:
        return sum(i.weight for i in self.indicators)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "MqaConfig":
        indicators = tuple(Indicator(i["id"], i["dimension"], i["weight"], i["checkKind"], i.get("params", {}))
                           for i in doc["indicators"])
        ids = [i.id for i in indicators]
        if len(set(ids)) != len(ids):
            raise BadRequest("indicator ids must be unique")
        t = doc["thresholds"]
        shapes = None
        for ind in indicators:
            if ind.check_kind == "dcat-ap-conformance" and ind.params["shapes"] != "bundled":
                shapes = load_shapes((base_dir or Path.cwd()) / ind.params["shapes"])
        config = cls(
            indicators=indicators,
            thresholds=Thresholds(t["excellentMin"], t["goodMin"], t["sufficientMin"]),
            vocabularies={k: tuple(v) for k, v in doc.get("vocabularies", {}).items()},
            format_lists={k: frozenset(x.upper() for x in v) for k, v in doc.get("formatLists", {}).items()},
            media_type_tokens={k.lower(): v.upper() for k, v in doc.get("mediaTypeTokens", {}).items()},
            format_aliases={k.upper(): v.upper() for k, v in doc.get("formatAliases", {}).items()},
            shapes=shapes,
        )
        for ind in indicators:
            if ind.check_kind == "property-in-vocabulary" and ind.params["vocabulary"] not in config.vocabularies:
                raise BadRequest(f"indicator {ind.id}: unknown vocabulary {ind.params['vocabulary']!r}")
            if ind.check_kind == "format-machine-readable" and ind.params["list"] not in config.format_lists:
                raise BadRequest(f"indicator {ind.id}: unknown format list {ind.params['list']!r}")
        return config


@lru_cache(maxsize=1)
def default_config() -> MqaConfig:
    text = resources.files("lodbridge.data").joinpath("mqa/default.json").read_text("utf-8")
    return MqaConfig.from_dict(json.loads(text))


def load_config(path: str | Path | None = None) -> MqaConfig:
    if path is None:
        return default_config()
    path = Path(path)
    return MqaConfig.from_dict(json.loads(path.read_text("utf-8")), path.parent)


# -- URL checkers --------------------------------------------------------------

class UrlChecker(Protocol):
    def status(self, url: str) -> int | None: ...


def reachable(status: int | None) -> bool:
    return status is not None and 200 <= status < 400


class StatusMapChecker:
    """Offline checker answering from a fixed URL → status map."""

    def __init__(self, statuses: dict[str, int] | None = None, default: int | None = 404):
        self.statuses = dict(statuses or {})
        self.default = default

    @classmethod
    def from_file(cls, path: str | Path) -> "StatusMapChecker":
        return cls({k: int(v) for k, v in json.loads(Path(path).read_text("utf-8")).items()})

    def status(self, url: str) -> int | None:
        return self.statuses.get(url, self.default)


class HttpChecker:
    """Live checker: HEAD, falling back to GET when HEAD is refused. Results are cached."""

    def __init__(self, timeout: float = 5.0):
        self.timeout = timeout
        self._cache: dict[str, int | None] = {}
        self._lock = threading.Lock()

    def _probe(self, url: str, method: str) -> int | None:
        req = urllib.request.Request(url, method=method)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status
        except urllib.error.HTTPError as exc:
            return exc.code
        except (urllib.error.URLError, OSError, ValueError):
            return None

    def status(self, url: str) -> int | None:
        with self._lock:
            if url in self._cache:
                return self._cache[url]
        code = self._probe(url, "HEAD")
        if code in (405, 501):
            code = self._probe(url, "GET")
        with self._lock:
            self._cache[url] = code
        return code


# -- scoring -------------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorResult:
    indicator_id: str
    dimension: str
    passed: bool
    points_awarded: int
    weight: int

    def to_dict(self) -> dict:
        return {"indicatorId": self.indicator_id, "dimension": self.dimension, "passed": self.passed,
                "pointsAwarded": self.points_awarded, "weight": self.weight}


@dataclass(frozen=True)
class ScoreReport:
    dataset: str
    per_indicator: tuple[IndicatorResult, ...]
    per_dimension: dict[str, int]
    max_per_dimension: dict[str, int]
    total: int
    max_possible: int
    rating: str

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "total": self.total, "maxPossible": self.max_possible,
                "rating": self.rating, "perDimension": dict(self.per_dimension),
                "maxPerDimension": dict(self.max_per_dimension),
                "perIndicator": [r.to_dict() for r in self.per_indicator]}

    def table(self) -> str:
        rows = [f"{'indicator':<26} {'dimension':<17} {'pass':<5} {'points':>6}"]
        for r in self.per_indicator:
            rows.append(f"{r.indicator_id:<26} {r.dimension:<17} {'yes' if r.passed else 'no':<5} "
                        f"{r.points_awarded:>3}/{r.weight:<3}")
        rows.append("")
        for dim in DIMENSIONS:
            if dim in self.max_per_dimension:
                rows.append(f"{dim:<26} {self.per_dimension[dim]:>3}/{self.max_per_dimension[dim]}")
        rows.append(f"{'total':<26} {self.total:>3}/{self.max_possible}  rating: {self.rating}")
        return "\n".join(rows)


def rate(total: int, thresholds: Thresholds | None = None) -> str:
    if total < 0:
        raise ValueError("total must be non-negative")
    t = thresholds or default_config().thresholds
    if total >= t.excellent_min:
        return "excellent"
    if total >= t.good_min:
        return "good"
    if total >= t.sufficient_min:
        return "sufficient"
    return "bad"


def dataset_nodes(g: Graph) -> list[Term]:
    return g.subjects(IRI(RDF + "type"), IRI(DCAT + "Dataset"))


class _Evaluator:
    def __init__(self, g: Graph, node: Term, config: MqaConfig, checker: UrlChecker):
        self.g, self.node, self.config, self.checker = g, node, config, checker
        self.distributions = g.objects(node, IRI(DCAT + "distribution"))

    def scope(self, on: str) -> list[Term]:
        if on == "dataset":
            return [self.node]
        if on == "distribution":
            return self.distributions
        if on == "any":
            return [self.node, *self.distributions]
        raise BadRequest(f"unknown indicator scope {on!r}")

    def values(self, prop: str, on: str) -> list[Term]:
        return [v for s in self.scope(on) for v in self.g.objects(s, IRI(prop))]

    def property_present(self, params: dict) -> bool:
        return bool(self.values(params["property"], params.get("on", "dataset")))

    def property_in_vocabulary(self, params: dict) -> bool:
        vocab = self.config.vocabularies[params["vocabulary"]]
        on = params.get("on", "dataset")
        return any(v.is_iri and v.value.startswith(vocab)
                   for prop in params["properties"] for v in self.values(prop, on))

    def url_status(self, params: dict) -> bool:
        urls = [v for v in self.values(params["property"], "distribution") if v.is_iri]
        if not urls and params.get("fallback"):
            urls = [v for v in self.values(params["fallback"], "distribution") if v.is_iri]
        return any(reachable(self.checker.status(u.value)) for u in urls)

    def format_tokens(self) -> set[str]:
        tokens = set()
        aliases = self.config.format_aliases
        for v in self.values("http://purl.org/dc/terms/format", "distribution"):
            raw = v.value.rstrip("/").rsplit("/", 1)[-1] if v.is_iri else v.value
            if v.is_iri and v.value.startswith(IANA):
                raw = self.config.media_type_tokens.get(v.value[len(IANA):].lower(), raw)
            tokens.add(aliases.get(raw.strip().upper(), raw.strip().upper()))
        for v in self.values(DCAT + "mediaType", "distribution"):
            mt = v.value[len(IANA):] if v.is_iri and v.value.startswith(IANA) else v.value
            token = self.config.media_type_tokens.get(mt.strip().lower())
            if token:
                tokens.add(token)
        return tokens

    def format_machine_readable(self, params: dict) -> bool:
        return bool(self.format_tokens() & self.config.format_lists[params["list"]])

    def dcat_ap_conformance(self, params: dict) -> bool:
        shapes = self.config.shapes or load_shapes()
        return validate_shapes(self.g, shapes, focus=self.node).conforms

    def check(self, ind: Indicator) -> bool:
        return getattr(self, ind.check_kind.replace("-", "_"))(ind.params)


def score_dataset(g: Graph, dataset: str | Term | None = None, config: MqaConfig | None = None,
                  checker: UrlChecker | None = None) -> ScoreReport:
    config = config or default_config()
    checker = checker or StatusMapChecker()
    nodes = dataset_nodes(g)
    if dataset is None:
        if len(nodes) != 1:
            raise DatasetNotInGraph(f"graph holds {len(nodes)} datasets; name one explicitly")
        node = nodes[0]
    else:
        node = dataset if isinstance(dataset, Term) else IRI(dataset)
        if node not in nodes:
            raise DatasetNotInGraph(f"{node.value} is not a dcat:Dataset in the graph")
    ev = _Evaluator(g, node, config, checker)
    results = []
    per_dim = {d: 0 for d in DIMENSIONS if any(i.dimension == d for i in config.indicators)}
    max_dim = dict.fromkeys(per_dim, 0)
    for ind in config.indicators:
        passed = ev.check(ind)
        points = ind.weight if passed else 0
        results.append(IndicatorResult(ind.id, ind.dimension, passed, points, ind.weight))
        per_dim[ind.dimension] += points
        max_dim[ind.dimension] += ind.weight
    total = sum(r.points_awarded for r in results)
    return ScoreReport(node.value, tuple(results), per_dim, max_dim, total, config.max_possible,
                       rate(total, config.thresholds))


def score_graph(g: Graph, config: MqaConfig | None = None, checker: UrlChecker | None = None) -> list[ScoreReport]:
    return [score_dataset(g, n, config, checker) for n in dataset_nodes(g)]


@dataclass(frozen=True)
class DistributionReport:
    counts: dict[str, int]
    percentages: dict[str, float]
    total: int

    def to_dict(self) -> dict:
        return {"total": self.total, "counts": dict(self.counts), "percentages": dict(self.percentages)}


def score_catalog(items: Iterable[ScoreReport | str]) -> DistributionReport:
    """Rating distribution; percentages are ``100*count/total`` rounded to 3 decimals."""
    counts = Counter()
    for item in items:
        rating = item.rating if isinstance(item, ScoreReport) else item
        if rating not in RATINGS:
            raise BadRequest(f"unknown rating {rating!r}")
        counts[rating] += 1
    total = sum(counts.values())
    ordered = {r: counts.get(r, 0) for r in reversed(RATINGS)}
    pct = {r: round(100 * c / total, 3) if total else 0.0 for r, c in ordered.items()}
    return DistributionReport(ordered, pct, total)
