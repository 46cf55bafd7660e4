"""``lodbridge`` command line: one subcommand per life-cycle role.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Any, Sequence

import yaml

from .errors import LodError

DEFAULT_PORTS = {"broker": 1026, "catalog": 5000, "historian": 8666, "consumer": 8080}
PORT_OFFSETS = {"broker": 0, "catalog": 1, "historian": 2, "consumer": 3}


class OperationalFailure(Exception):
    """The command ran but its outcome is a failure (exit code 1)."""


def _emit(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def _port(args, service: str) -> int:
    if args.port is not None:
        return args.port
    if args.ports_base is not None:
        return args.ports_base + PORT_OFFSETS[service]
    return DEFAULT_PORTS[service]


def _serve(router, args, service: str) -> int:
    from .httpd import Server

    server = Server(router, args.host, _port(args, service)).start()
    print(f"{service} listening on {server.url}", file=sys.stderr, flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


# -- services ------------------------------------------------------------------------

def cmd_broker_serve(args) -> int:
    from .broker import ContextBroker, Dispatcher, build_router

    broker = ContextBroker(snapshot_path=args.snapshot, max_attempts=args.max_attempts)
    dispatcher = Dispatcher(broker).start()
    try:
        return _serve(build_router(broker), args, "broker")
    finally:
        dispatcher.stop()
        if args.snapshot:
            broker.save_snapshot()


def cmd_catalog_serve(args) -> int:
    from .catalog import Catalog, build_router

    catalog = Catalog(args.data_dir)
    return _serve(build_router(catalog, portal_base=args.portal_base, title=args.title), args, "catalog")


def cmd_hist_serve(args) -> int:
    from .historian import Historian, build_router

    return _serve(build_router(Historian(args.dir)), args, "historian")


def _history(location: str):
    from .historian import Historian, HistorianClient

    if location.startswith(("http://", "https://")):
        return HistorianClient(location)
    return Historian(location)


def cmd_consumer_serve(args) -> int:
    from .broker import BrokerClient
    from .consumer import ConsumerService, build_router

    service = ConsumerService(BrokerClient(args.broker), _history(args.historian))
    if args.train:
        model = service.train()
        print(f"trained on {model.trained_on} records", file=sys.stderr)
    return _serve(build_router(service), args, "consumer")


# -- dataflow ---------------------------------------------------------------------------

def cmd_flow_run(args) -> int:
    from .dataflow import load_pipeline, run_pipeline

    pipeline = load_pipeline(args.config_file)
    report = run_pipeline(pipeline, duration=args.duration, timeout=args.timeout,
                          dead_letter_dir=args.dead_letters)
    _emit({"pipeline": pipeline.name, "conserved": report.conserved, **report.to_dict()})
    if not report.conserved:
        raise OperationalFailure("record counts are not conserved")
    return 0


# -- curation -----------------------------------------------------------------------------

def _read_graph(path: str):
    from .rdf import format_for_path, parse

    return parse(Path(path).read_text("utf-8"), format_for_path(path))


def cmd_mqa_score(args) -> int:
    from . import mqa
    from .rdf import IRI

    graph = _read_graph(args.file)
    config = mqa.load_config(args.mqa_config)
    checker = None
    if args.status_map:
        checker = mqa.StatusMapChecker.from_file(args.status_map)
    elif args.live_urls:
        checker = mqa.HttpChecker()
    if args.dataset:
        reports = [mqa.score_dataset(graph, IRI(args.dataset), config, checker)]
    else:
        reports = mqa.score_graph(graph, config, checker)
    if not reports:
        raise OperationalFailure(f"no dcat:Dataset in {args.file}")
    if args.figure:
        from .plotting import plot_dimension_scores

        plot_dimension_scores(reports, args.figure)
    if args.table:
        sys.stdout.write("\n\n".join(f"{r.dataset}\n{r.table()}" for r in reports) + "\n")
    else:
        doc = [r.to_dict() for r in reports]
        _emit(doc[0] if len(doc) == 1 else {"datasets": doc,
                                             "distribution": mqa.score_catalog(reports).to_dict()})
    return 0


# -- discovery ------------------------------------------------------------------------------

def cmd_harvest_add(args) -> int:
    from .harvester import NamedGraphStore, SourcePortal

    store = NamedGraphStore(args.store)
    store.add_source(SourcePortal(args.id, args.endpoint, args.format))
    _emit(store.get_source(args.id).to_dict())
    return 0


def cmd_harvest_run(args) -> int:
    from .harvester import NamedGraphStore

    store = NamedGraphStore(args.store)
    reports = [store.harvest(args.source)] if args.source else store.harvest_all()
    _emit([r.to_dict() for r in reports])
    if not all(r.ok for r in reports):
        raise OperationalFailure("at least one source failed to harvest")
    return 0


def cmd_query(args) -> int:
    from .harvester import NamedGraphStore, execute_query, parse_query
    from .harvester.sparql import results_json, results_table
    from .rdf import Graph

    if args.file:
        text = Path(args.file).read_text("utf-8")
    elif args.query:
        text = args.query
    else:
        raise UsageError("give a query text or --file")
    plan = parse_query(text)
    if args.graph:
        graph = Graph()
        for path in args.graph:
            graph.add_all(_read_graph(path))
        rows = execute_query(plan, graph)
    else:
        _, rows = NamedGraphStore(args.store).query(plan)
    if args.table:
        sys.stdout.write(results_table(plan, rows))
    else:
        _emit(results_json(plan, rows))
    return 0


# -- history ----------------------------------------------------------------------------------

def cmd_hist_query(args) -> int:
    records = _history(args.dir).query(args.entity, args.attr, args.start, args.end)
    _emit([r.to_dict() for r in records])
    return 0


def cmd_hist_export(args) -> int:
    from .historian import Historian, render

    historian = Historian(args.dir)
    query = {"entity_id": args.entity, "attr_name": args.attr, "start": args.start, "end": args.end}
    if args.output:
        n = historian.export(args.output, args.format, **query)
        print(f"wrote {n} records to {args.output}", file=sys.stderr)
    else:
        sys.stdout.write(render(historian.query(**query), args.format))
    return 0


# -- scenario -----------------------------------------------------------------------------------

def cmd_scenario_run(args) -> int:
    from .scenario import run_scenario

    report = run_scenario(args.workdir, fixtures_dir=args.fixtures, ports_base=args.ports_base)
    for step in report.steps:
        line = f"[{step.status:>7}] {step.phase:<24} {step.name}"
        if step.error:
            line += f": {step.error}"
        print(line, file=sys.stderr)
    print(f"report written to {Path(args.workdir) / 'scenario-report.json'}", file=sys.stderr)
    if not report.passed:
        raise OperationalFailure(f"scenario failed at step {report.failed_step}")
    return 0


# -- parser ---------------------------------------------------------------------------------------

class UsageError(Exception):
    pass


def _serve_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--host", default="127.0.0.1", help="interface to bind (default 127.0.0.1)")
    p.add_argument("--port", type=int, help="port to bind (default: well-known port, or --ports-base offset)")


def _history_filters(p: argparse.ArgumentParser) -> None:
    p.add_argument("--entity", help="only records of this entity id")
    p.add_argument("--attr", help="only records of this attribute name")
    p.add_argument("--from", dest="start", help="inclusive lower bound on observedAt (ISO 8601)")
    p.add_argument("--to", dest="end", help="exclusive upper bound on observedAt (ISO 8601)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="lodbridge", description="Linked open data toolkit for smart cities.")
    parser.add_argument("--config", help="YAML/JSON file of per-command option defaults, "
                                         "keyed by command path such as 'broker serve'")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity (default WARNING)")
    parser.add_argument("--ports-base", type=int, help="bind services at consecutive ports from this base "
                                                      "(broker +0, catalog +1, historian +2, consumer +3)")
    commands = parser.add_subparsers(dest="command", metavar="command", required=True)
    leaves: dict[str, argparse.ArgumentParser] = {}

    def group(name: str, help_text: str):
        p = commands.add_parser(name, help=help_text, description=help_text)
        return p.add_subparsers(dest="action", metavar="action", required=True)

    broker = group("broker", "NGSI-LD context broker")
    p = leaves["broker serve"] = broker.add_parser("serve", help="serve the broker HTTP API")
    _serve_flags(p)
    p.add_argument("--snapshot", help="JSON file to load at start and save at shutdown")
    p.add_argument("--max-attempts", type=int, default=5, help="notification attempts before dead-lettering")
    p.set_defaults(func=cmd_broker_serve)

    catalog = group("catalog", "open-data catalog")
    p = leaves["catalog serve"] = catalog.add_parser("serve", help="serve the catalog action API and DCAT exports")
    _serve_flags(p)
    p.add_argument("--data-dir", help="directory for persisted records (in memory if omitted)")
    p.add_argument("--portal-base", help="base IRI for exported datasets (default: taken from the Host header)")
    p.add_argument("--title", default="Open data catalog", help="catalog title used in exports")
    p.set_defaults(func=cmd_catalog_serve)

    flow = group("flow", "dataflow pipelines")
    p = leaves["flow run"] = flow.add_parser("run", help="run a pipeline until idle or for a duration")
    p.add_argument("-c", "--config-file", required=True, help="pipeline definition (YAML or JSON)")
    p.add_argument("--duration", type=float, help="stop polling sources after this many seconds")
    p.add_argument("--timeout", type=float, default=3600.0, help="give up waiting for idle after this many seconds")
    p.add_argument("--dead-letters", help="dead-letter directory (overrides the pipeline's deadLetterDir)")
    p.set_defaults(func=cmd_flow_run)

    mqa = group("mqa", "metadata quality assessment")
    p = leaves["mqa score"] = mqa.add_parser("score", help="score DCAT datasets in an RDF file (.rdf or .ttl)")
    p.add_argument("file", help="RDF/XML (.rdf) or Turtle (.ttl) file")
    p.add_argument("--dataset", help="IRI of the dataset to score (default: every dcat:Dataset)")
    p.add_argument("--config", dest="mqa_config", help="indicator table (JSON) replacing the bundled default")
    checks = p.add_mutually_exclusive_group()
    checks.add_argument("--live-urls", action="store_true", help="check access/download URLs over HTTP")
    checks.add_argument("--status-map", help="JSON map of URL to HTTP status used instead of live checks")
    p.add_argument("--figure", help="also write a per-dimension bar chart to this image file")
    p.add_argument("--table", action="store_true", help="print a text table instead of JSON")
    p.set_defaults(func=cmd_mqa_score)

    harvest = group("harvest", "catalog harvesting into a named-graph store")
    p = leaves["harvest add"] = harvest.add_parser("add", help="register a source portal")
    p.add_argument("--store", required=True, help="store directory")
    p.add_argument("--id", required=True, help="source identifier (names its graph)")
    p.add_argument("--endpoint", required=True, help="URL of the portal's catalog export (http(s) or file)")
    p.add_argument("--format", default="rdfxml", choices=["rdfxml", "turtle"], help="export format")
    p.set_defaults(func=cmd_harvest_add)
    p = leaves["harvest run"] = harvest.add_parser("run", help="harvest one source or all of them")
    p.add_argument("--store", required=True, help="store directory")
    p.add_argument("--source", help="only this source id")
    p.set_defaults(func=cmd_harvest_run)

    p = leaves["query"] = commands.add_parser("query", help="run a SPARQL-subset SELECT query",
                                              description="Run a SPARQL-subset SELECT query against a "
                                                          "harvest store or RDF files.")
    p.add_argument("query", nargs="?", help="query text (or use --file)")
    p.add_argument("--file", help="read the query from this file")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--store", help="harvest store directory (queries the union of its graphs)")
    target.add_argument("--graph", action="append", help="RDF file to query; repeatable")
    out = p.add_mutually_exclusive_group()
    out.add_argument("--json", action="store_true", help="SPARQL JSON results (default)")
    out.add_argument("--table", action="store_true", help="aligned text table")
    p.set_defaults(func=cmd_query)

    hist = group("hist", "historian (entity attribute history)")
    p = leaves["hist query"] = hist.add_parser("query", help="print matching records as JSON")
    p.add_argument("--dir", required=True, help="historian directory or URL")
    _history_filters(p)
    p.set_defaults(func=cmd_hist_query)
    p = leaves["hist export"] = hist.add_parser("export", help="export records as CSV or JSON lines")
    p.add_argument("--dir", required=True, help="historian directory")
    p.add_argument("--format", default="csv", choices=["csv", "jsonl"], help="output format")
    p.add_argument("-o", "--output", help="file to write (default stdout)")
    _history_filters(p)
    p.set_defaults(func=cmd_hist_export)
    p = leaves["hist serve"] = hist.add_parser("serve", help="serve the notification sink and query API")
    _serve_flags(p)
    p.add_argument("--dir", required=True, help="historian directory")
    p.set_defaults(func=cmd_hist_serve)

    consumer = group("consumer", "bike availability consumer")
    p = leaves["consumer serve"] = consumer.add_parser("serve", help="serve /predict and /train")
    _serve_flags(p)
    p.add_argument("--broker", required=True, help="broker base URL")
    p.add_argument("--historian", required=True, help="historian directory or URL")
    p.add_argument("--train", action="store_true", help="train once before serving")
    p.set_defaults(func=cmd_consumer_serve)

    scenario = group("scenario", "the bundled Santander scenario")
    p = leaves["scenario run"] = scenario.add_parser("run", help="run every life-cycle phase end to end")
    p.add_argument("-w", "--workdir", required=True, help="fresh (empty or absent) directory for artifacts")
    p.add_argument("--fixtures", help="fixture directory (default: the bundled fixtures)")
    p.set_defaults(func=cmd_scenario_run)
    return parser, leaves


def _apply_config(path: str, leaves: dict[str, argparse.ArgumentParser]) -> None:
    text = Path(path).read_text("utf-8")
    doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a mapping of command paths to option defaults")
    for key, options in doc.items():
        if key not in leaves:
            raise UsageError(f"{path}: unknown command {key!r}")
        if not isinstance(options, dict):
            raise UsageError(f"{path}: options for {key!r} must be a mapping")
        known = {a.dest for a in leaves[key]._actions}
        unknown = sorted(set(k.replace("-", "_") for k in options) - known)
        if unknown:
            raise UsageError(f"{path}: unknown options for {key!r}: {', '.join(unknown)}")
        leaves[key].set_defaults(**{k.replace("-", "_"): v for k, v in options.items()})


def main(argv: Sequence[str] | None = None) -> int:
    parser, leaves = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _peek_config(argv)
        if config:
            _apply_config(config, leaves)
    except (UsageError, OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"lodbridge: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lodbridge: error: {exc}", file=sys.stderr)
        return 2
    except (OperationalFailure, LodError, OSError) as exc:
        print(f"lodbridge: {exc}", file=sys.stderr)
        return 1


COMMANDS = ("broker", "catalog", "flow", "mqa", "harvest", "query", "hist", "consumer", "scenario")


def _peek_config(argv: list[str]) -> str | None:
    """The global --config value; only flags before the command name are global."""
    head = argv[:next((i for i, a in enumerate(argv) if a in COMMANDS), len(argv))]
    peek = argparse.ArgumentParser(add_help=False)
    peek.add_argument("--config")
    ns, _ = peek.parse_known_args(head)
    return ns.config
