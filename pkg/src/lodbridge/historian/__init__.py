from .api import NOTIFY_PATH, HistorianClient, build_router
from .log import CSV_HEADER, Historian, HistoryRecord, parse_jsonl, render

__all__ = ["CSV_HEADER", "Historian", "HistorianClient", "HistoryRecord", "NOTIFY_PATH", "build_router", "parse_jsonl", "render"]
