"""Clocks and UTC instant helpers.

Every service takes a clock so that tests and the bundled scenario can run
against virtual time. ``SystemClock`` is the live default.
"""
from __future__ import annotations

import threading
import time
from datetime import datetime, timedelta, timezone

UTC = timezone.utc


def format_instant(dt: datetime) -> str:
    """Render ``dt`` as ``YYYY-MM-DDTHH:MM:SS.ffZ`` (UTC, two fraction digits)."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=UTC)
    dt = dt.astimezone(UTC)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + ".%02dZ" % (dt.microsecond // 10000)


def parse_instant(text: str) -> datetime:
    """Parse an ISO-8601 instant. Naive values are taken as UTC."""
    if not isinstance(text, str) or not text:
        raise ValueError(f"not an ISO-8601 instant: {text!r}")
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    # fromisoformat on 3.10 only accepts 0, 3 or 6 fraction digits
    if "." in s:
        head, _, rest = s.partition(".")
        digits = ""
        while rest and rest[0].isdigit():
            digits, rest = digits + rest[0], rest[1:]
        s = head + "." + (digits + "000000")[:6] + rest
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise ValueError(f"not an ISO-8601 instant: {text!r}") from exc
    if dt.tzinfo is None:
        return dt.replace(tzinfo=UTC)
    return dt.astimezone(UTC)


def canonical_instant(text: str) -> str:
    return format_instant(parse_instant(text))


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(UTC)

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def sleep_until(self, when: datetime) -> None:
        self.sleep((when - self.now()).total_seconds())


class ManualClock:
    """Virtual clock: time moves only via ``advance``/``sleep`` or a fixed ``step``.

    ``step`` advances the clock after every ``now()`` call, which gives a
    strictly monotone sequence of timestamps in single-threaded tests.
    """

    def __init__(self, start: datetime | str = "2021-11-10T15:00:00Z", step: float = 0.0):
        self._now = parse_instant(start) if isinstance(start, str) else start
        self._step = timedelta(seconds=step)
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            current = self._now
            self._now = current + self._step
            return current

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += timedelta(seconds=seconds)

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)
        else:
            # give other threads a chance, as a real sleep would
            time.sleep(0)

    def sleep_until(self, when: datetime) -> None:
        with self._lock:
            if when > self._now:
                self._now = when
        time.sleep(0)
