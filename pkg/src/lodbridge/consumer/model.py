"""Hour-of-week baseline predictor for bike availability."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Protocol

from ..clock import UTC, format_instant, parse_instant
from ..errors import BadRequest, NotFound

BIKES_ATTR = "availableBikeNumber"


class UnknownStation(NotFound):
    kind = "UnknownStation"
    title = "Station not present in the training data"


def hour_of_week(at: datetime | str) -> int:
    """Monday 00:00 UTC is 0, Sunday 23:00 is 167."""
    if isinstance(at, str):
        at = parse_instant(at)
    at = at.astimezone(UTC)
    return at.weekday() * 24 + at.hour


@dataclass(frozen=True)
class Observation:
    station: str
    observed_at: str
    bikes: float


@dataclass(frozen=True)
class Prediction:
    station: str
    at: str
    value: float
    confidence: str

    def to_dict(self) -> dict:
        return {"station": self.station, "at": self.at, "predictedAvailableBikes": self.value,
                "confidence": self.confidence}


class Predictor(Protocol):
    def predict(self, station: str, at: datetime | str) -> Prediction: ...


@dataclass(frozen=True)
class BaselineModel:
    table: dict[tuple[str, int], float]
    station_means: dict[str, float]
    global_mean: float
    trained_on: int
    trained_at: str
    counts: dict[tuple[str, int], int] = field(default_factory=dict)

    def predict(self, station: str, at: datetime | str) -> Prediction:
        when = parse_instant(at) if isinstance(at, str) else at
        stamp = format_instant(when)
        if station not in self.station_means:
            raise UnknownStation(f"no history for station {station}")
        how = hour_of_week(when)
        cell = self.table.get((station, how))
        if cell is not None:
            return Prediction(station, stamp, cell, f"hour-of-week mean over {self.counts.get((station, how), 0)} "
                                                    f"observations (cell {how})")
        return Prediction(station, stamp, self.station_means[station],
                          f"station-wide mean; no observations for hour-of-week {how}")

    def to_dict(self) -> dict:
        return {"trainedOn": self.trained_on, "trainedAt": self.trained_at, "globalMean": self.global_mean,
                "stationMeans": dict(sorted(self.station_means.items())),
                "cells": [{"station": s, "hourOfWeek": h, "mean": m, "count": self.counts.get((s, h), 0)}
                          for (s, h), m in sorted(self.table.items())]}


def observations_from_history(records: Iterable) -> list[Observation]:
    """Bike counts from historian records of the ``availableBikeNumber`` attribute."""
    out = []
    for r in records:
        if r.attr_name != BIKES_ATTR:
            continue
        if isinstance(r.value, bool) or not isinstance(r.value, (int, float)):
            raise BadRequest(f"non-numeric {BIKES_ATTR} for {r.entity_id} at {r.observed_at}")
        out.append(Observation(r.entity_id, r.observed_at, r.value))
    return out


def _mean(values: list[float]) -> float:
    m = math.fsum(values) / len(values)
    return int(m) if m == int(m) else m


def train_baseline(observations: Iterable[Observation], trained_at: datetime | str | None = None) -> BaselineModel:
    obs = list(observations)
    if not obs:
        raise BadRequest("cannot train on an empty history")
    cells: dict[tuple[str, int], list[float]] = defaultdict(list)
    stations: dict[str, list[float]] = defaultdict(list)
    for o in obs:
        if o.bikes < 0:
            raise BadRequest(f"negative bike count for {o.station} at {o.observed_at}")
        cells[(o.station, hour_of_week(o.observed_at))].append(o.bikes)
        stations[o.station].append(o.bikes)
    # sorting before summing makes the means independent of input order
    table = {k: _mean(sorted(v)) for k, v in cells.items()}
    station_means = {k: _mean(sorted(v)) for k, v in stations.items()}
    if trained_at is None:
        trained_at = max(obs, key=lambda o: parse_instant(o.observed_at)).observed_at
    stamp = trained_at if isinstance(trained_at, str) else format_instant(trained_at)
    return BaselineModel(table, station_means, _mean(sorted(o.bikes for o in obs)), len(obs), stamp,
                         {k: len(v) for k, v in cells.items()})
