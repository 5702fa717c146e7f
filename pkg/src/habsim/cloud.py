"""Cloud layer: central event store and the forecast-driven bloom prediction service."""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .base import Clocked
from .environment import Forecast, daily_summary
from .events import Event, format_time, parse_event_line
from .fog import BloomEstimate, InferenceInputs, inference_step
from .params import BloomParams, SedimentParams

RAW = "raw"
ESTIMATED = "estimated"
PREDICTED = "predicted"
CHANNELS = (RAW, ESTIMATED, PREDICTED)


def _hours(times: Sequence[datetime]) -> np.ndarray:
    return np.array([(t - times[0]).total_seconds() / 3600.0 for t in times])


def infer_sediment(times: Sequence[datetime], rain: Sequence[float], tau: float = 24.0, gain: float = 1.0,
                   s0: float = 0.0) -> np.ndarray:
    """First-order filter of rainfall: s <- s*exp(-dt/tau) + gain*rain*dt, dt in hours."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    rain = np.asarray(rain, dtype=float)
    if np.any(rain < 0):
        raise ValueError("rain must be non-negative")
    h = _hours(times)
    if np.any(np.diff(h) <= 0):
        raise ValueError("times must be strictly increasing")
    s = np.empty(len(h))
    s[0] = s0
    for k in range(1, len(h)):
        dt = h[k] - h[k - 1]
        s[k] = s[k - 1] * math.exp(-dt / tau) + gain * rain[k - 1] * dt
    return s


def infer_water_speed(times: Sequence[datetime], wind_v, wind_u, k_wind: float = 0.03,
                      lag: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Surface current as a fixed share of the wind, optionally through a first-order lag (hours)."""
    tv = k_wind * np.asarray(wind_v, dtype=float)
    tu = k_wind * np.asarray(wind_u, dtype=float)
    if not (np.all(np.isfinite(tv)) and np.all(np.isfinite(tu))):
        raise ValueError("wind must be finite")
    if lag is None or lag == 0:
        return tv, tu
    if lag < 0:
        raise ValueError("lag must be non-negative")
    h = _hours(times)
    v, u = tv.copy(), tu.copy()
    for k in range(1, len(h)):
        a = math.exp(-(h[k] - h[k - 1]) / lag)
        v[k] = tv[k] + (v[k - 1] - tv[k]) * a
        u[k] = tu[k] + (u[k - 1] - tu[k]) * a
    return v, u


@dataclass
class BloomForecast:
    times: list[datetime]
    r: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    precursor: np.ndarray  # sun * sediment
    sediment: np.ndarray
    wfv: np.ndarray
    wfu: np.ndarray
    threshold: float

    def daily(self) -> list[tuple[date, bool, float, float]]:
        return daily_summary(self.times, self.r, self.lat, self.lon, self.threshold)

    def to_events(self, source: str = "Prediction") -> list[Event]:
        return [Event("PRD", source, t, {
            "R": float(self.r[k]), "Lat": float(self.lat[k]), "Lon": float(self.lon[k]),
            "Detected": int(self.r[k] >= self.threshold), "Precursor": float(self.precursor[k]),
            "Sediment": float(self.sediment[k]), "WFV": float(self.wfv[k]), "WFU": float(self.wfu[k]),
        }) for k, t in enumerate(self.times)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", "r", "lat", "lon", "precursor", "sediment", "wfv", "wfu"))
            for k, t in enumerate(self.times):
                w.writerow((format_time(t), *(repr(float(a[k])) for a in
                            (self.r, self.lat, self.lon, self.precursor, self.sediment, self.wfv, self.wfu))))


def predict_bloom(forecast: Forecast, incubator: tuple[float, float], bloom: BloomParams = BloomParams(),
                  sediment: SedimentParams = SedimentParams(), k_wind: float = 0.03, lag: float | None = None,
                  s0: float = 0.0, ref_lat: float | None = None) -> BloomForecast:
    """Bloom density and trajectory over the forecast horizon.

    Rain feeds the sediment filter, sediment stands in for nitrates, wind
    gives the surface current, and the bloom model runs without its
    oxygen term. The position restarts at the incubator every midnight.
    """
    if len(forecast) < 2:
        raise ValueError("forecast horizon shorter than one model step")
    times = forecast.times
    c = forecast.columns
    sed = infer_sediment(times, c["rain"], sediment.tau, sediment.gain, s0)
    wfv, wfu = infer_water_speed(times, c["wind_v"], c["wind_u"], k_wind, lag)
    sun = np.clip(c["sun"], 0.0, 1.0)
    nox = sediment.nox_base + sediment.nox_scale * sed
    ref = incubator[0] if ref_lat is None else ref_lat
    n = len(times)
    r, lat, lon = np.empty(n), np.empty(n), np.empty(n)
    est = BloomEstimate(times[0], bloom.r0, *incubator)
    r[0], lat[0], lon[0] = est.r, est.lat, est.lon
    for k in range(1, n):
        dt = (times[k] - times[k - 1]).total_seconds() / 3600.0
        inp = InferenceInputs(sun=float(sun[k - 1]), nox=float(nox[k - 1]), wfv=float(wfv[k - 1]), wfu=float(wfu[k - 1]))
        est = inference_step(est, inp, dt, bloom, ref, breath_weight=0.0)
        if times[k].time() == datetime.min.time():
            est = BloomEstimate(est.t, est.r, *incubator, est.detected)
        r[k], lat[k], lon[k] = est.r, est.lat, est.lon
    return BloomForecast(list(times), r, lat, lon, sun * sed, sed, wfv, wfu, bloom.detect_threshold)


# --- central store -------------------------------------------------------------


@dataclass(frozen=True)
class Entry:
    body: str
    channel: str
    event: Event

    def line(self) -> str:
        return f"{self.body},{self.channel},{self.event.serialize()}"


class CentralLog:
    """Cloud store of events from every water body, tagged by channel.

    Re-delivery of an event already stored for the same body and channel is
    ignored.
    """

    def __init__(self, path: str | Path | None = None):
        self.entries: list[Entry] = []
        self._seen: set[tuple] = set()
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

    def ingest(self, event: Event, channel: str, body: str = "default") -> bool:
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel {channel!r}")
        key = (body, channel, event.source, event.id, event.timestamp)
        with self._lock:
            if key in self._seen:
                return False
            self._seen.add(key)
            entry = Entry(body, channel, event)
            self.entries.append(entry)
            if self._fh is not None:
                self._fh.write(entry.line() + "\n")
                self._fh.flush()
            return True

    def __len__(self) -> int:
        return len(self.entries)

    def query(self, body: str | None = None, channel: str | None = None, id: str | None = None) -> list[Event]:
        with self._lock:
            entries = list(self.entries)
        return [e.event for e in entries
                if (body is None or e.body == body) and (channel is None or e.channel == channel)
                and (id is None or e.event.id == id)]

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @staticmethod
    def parse_line(line: str) -> Entry:
        body, channel, rest = line.rstrip("\n").split(",", 2)
        return Entry(body, channel, parse_event_line(rest))


def cloud_ingest(log: CentralLog, event: Event, channel: str, body: str = "default") -> bool:
    return log.ingest(event, channel, body)


class Cloud(Clocked):
    """Central store fed by fog ``d1``/``d1hat`` links, plus the prediction service."""

    def __init__(self, name: str, epoch: datetime, log: CentralLog | None = None, forecast: Forecast | None = None,
                 incubator: tuple[float, float] | None = None, bloom: BloomParams = BloomParams(),
                 sediment: SedimentParams = SedimentParams(), k_wind: float = 0.03, lag: float | None = None):
        super().__init__(name, epoch)
        self.log = log if log is not None else CentralLog()
        self.forecast = forecast
        self.incubator = incubator
        self.bloom = bloom
        self.sediment = sediment
        self.k_wind = k_wind
        self.lag = lag
        self.add_in_port("cmd")
        self.bodies: dict[str, tuple[str, str]] = {}
        self.predictions: list[BloomForecast] = []

    def add_body(self, body: str) -> tuple[str, str]:
        raw, est = f"d1_{body}", f"d1hat_{body}"
        self.add_in_port(raw)
        self.add_in_port(est)
        self.bodies[raw] = (body, RAW)
        self.bodies[est] = (body, ESTIMATED)
        return raw, est

    def on_input(self, port, value):
        if not isinstance(value, Event):
            return
        if port in self.bodies:
            body, channel = self.bodies[port]
            self.log.ingest(value, channel, body)
        elif port == "cmd" and value.id == "PREDICT":
            self.predict(value)

    def predict(self, cmd: Event) -> None:
        body = str(cmd.get("body", next(iter(self.bodies.values()), ("default",))[0]))
        if self.forecast is None or self.incubator is None:
            self.log.ingest(Event("ERR", self.name, self.now, {"Reason": "no forecast configured"}), PREDICTED, body)
            return
        end = self.now + timedelta(hours=float(cmd.get("horizon", 1e6)))
        try:
            fc = predict_bloom(self.forecast.window(self.now, end), self.incubator, self.bloom, self.sediment,
                               self.k_wind, self.lag)
        except ValueError as exc:
            self.log.ingest(Event("ERR", self.name, self.now, {"Reason": str(exc)}), PREDICTED, body)
            return
        self.predictions.append(fc)
        for ev in fc.to_events():
            self.log.ingest(ev, PREDICTED, body)
