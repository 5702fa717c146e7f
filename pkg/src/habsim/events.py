"""Events, scenario files and append-only event logs.

Every message in the system is an :class:`Event` serialized on one line::

    DOX,SimSenO,2008-08-23 01:30:05,{"Lat":47.505,"Lon":-122.215,"Depth":0.0,"DOX":11.8}

Payloads written with single quotes (``{'DOX':11.8}``) are accepted on input;
output always uses the double-quoted form.
"""

from __future__ import annotations

import ast
import json
import math
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Union

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

Value = Union[int, float, str]

START = "START"
STOP = "STOP"
SERVICES = ("OUTLIERS", "INFER", "PLAN", "REPORT", "PREDICT")
CONFIG = "CONFIG"
CONFIG_KEYS = frozenset(
    {"id", "description", "delay", "max", "min", "precision", "noisesigma", "period", "seed",
     "lat", "lon", "depth"}
)


class EventParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


class ScenarioError(ValueError):
    """Scenario validation failed; ``problems`` lists every violation found."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario:\n  " + "\n  ".join(problems))


def format_time(t: datetime) -> str:
    return t.strftime(TIME_FORMAT)


def parse_time(text: str) -> datetime:
    return datetime.strptime(text.strip(), TIME_FORMAT)


def _check_field(name: str, value: str) -> None:
    if not value:
        raise ValueError(f"{name} must be non-empty")
    if any(c in value for c in ",\n\r"):
        raise ValueError(f"{name} {value!r} contains a separator")


@dataclass(frozen=True)
class Event:
    id: str
    source: str
    timestamp: datetime
    payload: dict[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        _check_field("id", self.id)
        _check_field("source", self.source)
        if self.timestamp.microsecond:
            object.__setattr__(self, "timestamp", self.timestamp.replace(microsecond=0))
        payload = dict(self.payload)
        for k, v in payload.items():
            if not isinstance(k, str) or not k:
                raise ValueError(f"payload key {k!r} must be a non-empty string")
            if isinstance(v, bool) or not isinstance(v, (int, float, str)):
                raise ValueError(f"payload value for {k!r} must be a number or string, got {v!r}")
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"payload value for {k!r} is not finite")
        object.__setattr__(self, "payload", payload)

    def __getitem__(self, key: str) -> Value:
        return self.payload[key]

    def get(self, key: str, default=None):
        return self.payload.get(key, default)

    def serialize(self) -> str:
        body = json.dumps(self.payload, separators=(",", ":"), ensure_ascii=False)
        return f"{self.id},{self.source},{format_time(self.timestamp)},{body}"

    def __str__(self) -> str:
        return self.serialize()


def serialize_event(event: Event) -> str:
    return event.serialize()


def parse_event_line(line: str, lineno: int | None = None) -> Event:
    """Parse ``id,source,timestamp,payload``; raise :class:`EventParseError` on bad input."""
    parts = line.strip().split(",", 3)
    if len(parts) < 4:
        raise EventParseError(f"expected 4 fields (id,source,timestamp,payload), got {len(parts)}", lineno)
    ev_id, source, stamp, body = (p.strip() for p in parts)
    try:
        timestamp = parse_time(stamp)
    except ValueError:
        raise EventParseError(f"unparsable timestamp {stamp!r}", lineno) from None
    if not (body.startswith("{") and body.endswith("}")):
        raise EventParseError(f"payload must be an object, got {body!r}", lineno)
    try:
        payload = ast.literal_eval(body)
    except (ValueError, SyntaxError) as exc:
        raise EventParseError(f"malformed payload {body!r}: {exc}", lineno) from None
    if not isinstance(payload, dict):
        raise EventParseError(f"payload must be an object, got {body!r}", lineno)
    try:
        return Event(ev_id, source, timestamp, payload)
    except ValueError as exc:
        raise EventParseError(str(exc), lineno) from None


def iter_event_lines(lines: Iterable[str]) -> Iterator[tuple[int, str]]:
    """Yield (line number, text) skipping blank lines and ``#`` comments."""
    for n, raw in enumerate(lines, 1):
        text = raw.strip()
        if text and not text.startswith("#"):
            yield n, text


def read_events(path: str | Path) -> list[Event]:
    with open(path, encoding="utf-8") as fh:
        return [parse_event_line(text, n) for n, text in iter_event_lines(fh)]


def write_events(events: Iterable[Event], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(ev.serialize() + "\n")


@dataclass(frozen=True)
class ScenarioCommand:
    at: datetime
    command: str  # START, STOP, a service name or CONFIG
    source: str   # issuing component, or the addressee of a CONFIG command
    args: dict[str, Value] = field(default_factory=dict)
    id: str = ""  # measurement id for CONFIG commands

    @property
    def is_service(self) -> bool:
        return self.command in SERVICES

    def to_event(self) -> Event:
        ev_id = self.id if self.command == CONFIG else self.command
        return Event(ev_id, self.source, self.at, self.args)


def command_from_event(ev: Event) -> ScenarioCommand:
    if ev.id in (START, STOP) or ev.id in SERVICES:
        return ScenarioCommand(ev.timestamp, ev.id, ev.source, dict(ev.payload))
    if ev.payload and set(ev.payload) <= CONFIG_KEYS:
        return ScenarioCommand(ev.timestamp, CONFIG, ev.source, dict(ev.payload), id=ev.id)
    raise ValueError(f"unknown command {ev.id!r}")


def parse_scenario(lines: Iterable[str]) -> list[ScenarioCommand]:
    """Parse and validate scenario lines; every violation is collected before raising."""
    problems: list[str] = []
    commands: list[tuple[int, ScenarioCommand]] = []
    for n, text in iter_event_lines(lines):
        try:
            ev = parse_event_line(text, n)
            commands.append((n, command_from_event(ev)))
        except EventParseError as exc:
            problems.append(str(exc))
        except ValueError as exc:
            problems.append(f"line {n}: {exc}")
    if not commands:
        problems.append("scenario is empty (needs START and STOP)")
    else:
        for (n0, a), (n1, b) in zip(commands, commands[1:]):
            if b.at < a.at:
                problems.append(f"line {n1}: timestamp {format_time(b.at)} precedes line {n0}")
        if commands[0][1].command != START:
            problems.append(f"line {commands[0][0]}: first command must be START")
        if commands[-1][1].command != STOP:
            problems.append(f"line {commands[-1][0]}: last command must be STOP")
        for n, c in commands[1:-1]:
            if c.command in (START, STOP):
                problems.append(f"line {n}: {c.command} allowed only at the {'start' if c.command == START else 'end'}")
    if problems:
        raise ScenarioError(problems)
    return [c for _, c in commands]


def load_scenario(path: str | Path) -> list[ScenarioCommand]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_scenario(fh)
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    except UnicodeDecodeError as exc:
        raise ScenarioError([f"{path} is not UTF-8 text: {exc}"]) from None


class EventLog:
    """Append-only event store with a (source, id) index.

    When ``path`` is given every appended event is also written to that file
    as one canonical line.
    """

    def __init__(self, path: str | Path | None = None):
        self._events: list[Event] = []
        self._index: dict[tuple[str, str], list[int]] = {}
        self._by_id: dict[str, list[int]] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_lock"] = None
        state["_fh"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def append(self, event: Event) -> None:
        with self._lock:
            i = len(self._events)
            self._events.append(event)
            self._index.setdefault((event.source, event.id), []).append(i)
            self._by_id.setdefault(event.id, []).append(i)
            if self._fh is not None:
                self._fh.write(event.serialize() + "\n")
                self._fh.flush()

    def extend(self, events: Iterable[Event]) -> None:
        for ev in events:
            self.append(ev)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.snapshot())

    def snapshot(self) -> tuple[Event, ...]:
        """Consistent prefix of the log, safe to read while appends continue."""
        with self._lock:
            return tuple(self._events)

    def query(self, source: str | None = None, id: str | None = None,
              t0: datetime | None = None, t1: datetime | None = None) -> list[Event]:
        if t0 is not None and t1 is not None and t0 > t1:
            raise ValueError("t0 must not be after t1")
        with self._lock:
            if source is not None and id is not None:
                idx = self._index.get((source, id), [])
            elif id is not None:
                idx = self._by_id.get(id, [])
            else:
                idx = range(len(self._events))
            events = [self._events[i] for i in idx]
        return [
            ev for ev in events
            if (source is None or ev.source == source)
            and (t0 is None or ev.timestamp >= t0)
            and (t1 is None or ev.timestamp <= t1)
        ]

    def latest(self, id: str, source: str | None = None) -> Event | None:
        with self._lock:
            idx = self._index.get((source, id), []) if source is not None else self._by_id.get(id, [])
            return self._events[idx[-1]] if idx else None

    def write(self, path: str | Path) -> None:
        write_events(self.snapshot(), path)

    @classmethod
    def read(cls, path: str | Path) -> "EventLog":
        log = cls()
        log.extend(read_events(path))
        return log


def query(log: EventLog, source: str | None = None, id: str | None = None,
          t0: datetime | None = None, t1: datetime | None = None) -> list[Event]:
    return log.query(source=source, id=id, t0=t0, t1=t1)
