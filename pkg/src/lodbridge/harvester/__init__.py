from .sparql import QueryPlan, QuerySyntaxError, UnsupportedConstruct, execute_query, parse_query
from .store import HarvestReport, NamedGraphStore, SourcePortal

__all__ = ["HarvestReport", "NamedGraphStore", "QueryPlan", "QuerySyntaxError", "SourcePortal",
           "UnsupportedConstruct", "execute_query", "parse_query"]
