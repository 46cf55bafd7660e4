"""Bike-availability consumer: latest measures from the broker, predictions from history."""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass

from ..clock import SystemClock, format_instant, parse_instant
from ..entity import Entity
from ..errors import BadRequest, NotFound
from ..httpd import Request, Response, Router
from .model import BIKES_ATTR, BaselineModel, observations_from_history, train_baseline

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StationSnapshot:
    station_id: str
    available_bikes: int
    as_of: str
    temperature: float | None = None
    precipitation: float | None = None
    traffic_intensity: float | None = None

    def __post_init__(self):
        if self.available_bikes < 0:
            raise BadRequest("availableBikes must be non-negative")

    def to_dict(self) -> dict:
        doc = {"stationId": self.station_id, "availableBikes": self.available_bikes, "asOf": self.as_of}
        for key, value in (("temperature", self.temperature), ("precipitation", self.precipitation),
                           ("trafficIntensity", self.traffic_intensity)):
            if value is not None:
                doc[key] = value
        return doc


def _locality(entity: Entity) -> str | None:
    address = entity.value("address")
    return address.get("addressLocality") if isinstance(address, dict) else None


def _point(entity: Entity) -> tuple[float, float] | None:
    loc = entity.value("location")
    if isinstance(loc, dict) and loc.get("type") == "Point":
        lon, lat = loc["coordinates"][:2]
        return float(lon), float(lat)
    return None


def _distance_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lon1, lat1, lon2, lat2 = map(math.radians, (*a, *b))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 12742 * math.asin(math.sqrt(h))


def _all(broker, type_name: str) -> list[Entity]:
    return broker.query_entities(type_name, None, 1000)


def collect_latest(broker, station_id: str, clock=None) -> StationSnapshot:
    """Station availability plus the city's weather and the linked (or nearest) traffic reading."""
    station = broker.get_entity(station_id, "entity")
    bikes = station.attributes.get(BIKES_ATTR)
    if bikes is None:
        raise NotFound(f"station {station_id} has no {BIKES_ATTR}")
    as_of = bikes.observed_at or format_instant((clock or SystemClock()).now())

    weather = None
    candidates = _all(broker, "WeatherObserved")
    locality = _locality(station)
    same_city = [w for w in candidates if locality is not None and _locality(w) == locality]
    if same_city:
        weather = same_city[0]
    elif locality is None and candidates:
        weather = candidates[0]

    traffic = None
    ref = station.attributes.get("refTrafficFlowObserved")
    if ref is not None:
        try:
            traffic = broker.get_entity(ref.value, "entity")
        except NotFound:
            traffic = None
    if traffic is None and _point(station) is not None:
        located = [(t, _point(t)) for t in _all(broker, "TrafficFlowObserved")]
        located = [(t, p) for t, p in located if p is not None]
        if located:
            traffic = min(located, key=lambda tp: (_distance_km(_point(station), tp[1]), tp[0].id))[0]

    return StationSnapshot(
        station_id, int(bikes.value), as_of,
        temperature=weather.value("temperature") if weather else None,
        precipitation=weather.value("precipitation") if weather else None,
        traffic_intensity=traffic.value("intensity") if traffic else None,
    )


class ConsumerService:
    """Holds the current model; retraining swaps it atomically."""

    def __init__(self, broker, history, clock=None):
        self.broker = broker
        self.history = history
        self.clock = clock or SystemClock()
        self._model: BaselineModel | None = None
        self._lock = threading.Lock()
        self.request_log: list[tuple[str, str]] = []

    @property
    def model(self) -> BaselineModel | None:
        return self._model

    def train(self) -> BaselineModel:
        records = self.history.query(None, BIKES_ATTR)
        model = train_baseline(observations_from_history(records), self.clock.now())
        with self._lock:
            self._model = model
        return model

    def _trace(self, step: str, station: str) -> None:
        with self._lock:
            self.request_log.append((step, station))
        log.info("%s %s", step, station)

    def predict(self, station: str, at: str) -> dict:
        model = self._model
        if model is None:
            raise BadRequest("no model trained yet; POST /train first")
        try:
            when = parse_instant(at)
        except ValueError as exc:
            raise BadRequest(f"bad timestamp {at!r}") from exc
        self._trace("request", station)
        snapshot = None
        try:
            snapshot = collect_latest(self.broker, station, self.clock)
        except NotFound:
            log.info("no live entity for %s; predicting from history only", station)
        self._trace("collect_latest", station)
        prediction = model.predict(station, when)
        self._trace("predict", station)
        doc = prediction.to_dict()
        if snapshot is not None:
            doc["latest"] = snapshot.to_dict()
        self._trace("response", station)
        return doc


def build_router(service: ConsumerService) -> Router:
    r = Router()

    @r.route("GET", "/predict")
    def predict(req: Request) -> Response:
        station, at = req.query.get("station"), req.query.get("at")
        if not station or not at:
            raise BadRequest("predict needs station and at query parameters")
        return Response(200, service.predict(station, at))

    @r.route("POST", "/train")
    def train(req: Request) -> Response:
        model = service.train()
        return Response(200, {"trainedOn": model.trained_on, "trainedAt": model.trained_at,
                              "cells": len(model.table)})

    return r
