"""Fog layer: ground control station plus inference, planning, outlier and analysis services."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .base import Clocked
from .devs import Coupled
from .events import SERVICES, Event, EventLog, format_time, parse_time
from .params import M_PER_DEG_LAT, BloomParams, m_per_deg_lon

HAB = "HAB"    # bloom estimate
TRK = "TRK"    # track command
WARN = "WARN"
ERR = "ERR"
FOG_SERVICES = ("OUTLIERS", "INFER", "PLAN", "REPORT")


class InferenceFault(ValueError):
    pass


@dataclass(frozen=True)
class BloomEstimate:
    t: datetime
    r: float
    lat: float
    lon: float
    detected: bool = False
    photo: float = 0.0
    breath: float = 0.0

    def to_event(self, source: str) -> Event:
        return Event(HAB, source, self.t, {
            "R": self.r, "Lat": self.lat, "Lon": self.lon, "Detected": int(self.detected),
            "Photo": self.photo, "Breath": self.breath,
        })

    @classmethod
    def from_event(cls, ev: Event) -> "BloomEstimate":
        return cls(ev.timestamp, float(ev["R"]), float(ev["Lat"]), float(ev["Lon"]), bool(ev["Detected"]),
                   float(ev.get("Photo", 0.0)), float(ev.get("Breath", 0.0)))


@dataclass(frozen=True)
class InferenceInputs:
    sun: float = 0.0
    nox: float = 0.0
    dox: float = 0.0
    wfv: float = 0.0  # m/s north
    wfu: float = 0.0  # m/s east


@dataclass(frozen=True)
class TrackCommand:
    t: datetime
    e_lat: float
    e_lon: float

    def __post_init__(self):
        if not (math.isfinite(self.e_lat) and math.isfinite(self.e_lon)):
            raise ValueError("track error must be finite")

    def to_event(self, source: str, target: str) -> Event:
        return Event(TRK, source, self.t, {"ELat": self.e_lat, "ELon": self.e_lon, "Target": target})


def relax(r: float, drive: float, dt: float, params: BloomParams) -> float:
    """Exact solution of dr/dt = drive - K3 (r - r0) over ``dt`` hours with constant drive."""
    target = params.r0 + drive / params.K3
    return target + (r - target) * math.exp(-params.K3 * dt)


def inference_step(est: BloomEstimate, inputs: InferenceInputs, dt: float, params: BloomParams = BloomParams(),
                   ref_lat: float | None = None, breath_weight: float = 1.0) -> BloomEstimate:
    """Advance the bloom estimate by ``dt`` hours holding ``inputs`` constant.

    The growth model is integrated in closed form over the step, so the
    result does not depend on how a constant-input interval is subdivided.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    vals = (inputs.sun, inputs.nox, inputs.dox, inputs.wfv, inputs.wfu)
    if not all(math.isfinite(v) for v in vals):
        raise InferenceFault(f"non-finite inference input {inputs}")
    if inputs.nox < 0 or inputs.dox < 0:
        raise InferenceFault("nox and dox must be non-negative")
    photo = inputs.sun * inputs.nox
    breath = inputs.dox * inputs.nox
    drive = params.K1 * photo + breath_weight * params.K2 * breath
    r = max(0.0, relax(est.r, drive, dt, params))
    ref = est.lat if ref_lat is None else ref_lat
    lat = est.lat + dt * params.Kv * inputs.wfv * 3600.0 / M_PER_DEG_LAT
    lon = est.lon + dt * params.Kv * inputs.wfu * 3600.0 / m_per_deg_lon(ref)
    return BloomEstimate(est.t + timedelta(hours=dt), r, lat, lon, r >= params.detect_threshold, photo, breath)


def plan_track(est: BloomEstimate, usv_lat: float, usv_lon: float) -> TrackCommand:
    return TrackCommand(est.t, est.lat - usv_lat, est.lon - usv_lon)


# --- outlier repair ------------------------------------------------------------


@dataclass(frozen=True)
class Replacement:
    t: datetime
    original: float | None  # None for a filled gap
    value: float
    kind: str  # "spike" or "gap"


@dataclass
class RepairResult:
    series: list[tuple[datetime, float]]
    replacements: list[Replacement]
    notice: str = ""


def _rolling_window(n: int, i: int, w: int) -> tuple[int, int]:
    lo = max(0, min(i - w // 2, n - w))
    return lo, min(n, lo + w)


def _local_fit(cx: np.ndarray, cy: np.ndarray, at: float) -> float:
    """Value at ``at`` of a quadratic (linear for few points) fitted with one outlier-trimming pass."""
    if len(cx) == 0:
        return float("nan")
    if len(cx) < 3 or np.ptp(cx) == 0:
        return float(cy.mean())
    xm, sc = cx.mean(), np.ptp(cx)
    u = (cx - xm) / sc
    deg = 2 if len(cx) >= 6 else 1
    c = np.polyfit(u, cy, deg)
    e = cy - np.polyval(c, u)
    mad = 1.4826 * np.median(np.abs(e - np.median(e)))
    keep = np.abs(e) <= 3 * mad
    if mad > 0 and deg + 2 < keep.sum() < len(keep):
        c = np.polyfit(u[keep], cy[keep], deg)
    return float(np.polyval(c, (at - xm) / sc))


def repair_outliers(series: Sequence[tuple[datetime, float]], window: int = 25, z: float = 5.0,
                    cadence: float | None = None) -> RepairResult:
    """Replace spikes and fill missing samples from a local polynomial fit.

    Each point is compared with a fit through its neighbours (itself left
    out). It is a spike when that residual exceeds ``z`` robust scales, the
    scale being the MAD of the window's residuals, floored by the MAD over the
    whole series. Missing samples are detected against ``cadence`` seconds
    (default: the median spacing). Replacement values come from the same kind
    of fit through the clean points around them.
    """
    if window < 3:
        raise ValueError("window must hold at least 3 points")
    pts = list(series)
    if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
        raise ValueError("series must be strictly time-sorted")
    if len(pts) < window:
        return RepairResult(pts, [], f"series too short ({len(pts)} < {window}); left unchanged")
    t0 = pts[0][0]
    x = np.array([(t - t0).total_seconds() for t, _ in pts])
    y = np.array([v for _, v in pts], dtype=float)
    n = len(y)

    res = np.empty(n)
    for i in range(n):
        lo, hi = _rolling_window(n, i, window)
        idx = np.r_[lo:i, i + 1:hi]
        res[i] = y[i] - _local_fit(x[idx], y[idx], x[i])
    floor = 1.4826 * np.median(np.abs(res))
    flagged = np.zeros(n, dtype=bool)
    for i in range(n):
        lo, hi = _rolling_window(n, i, window)
        scale = max(1.4826 * np.median(np.abs(res[lo:hi])), floor)
        tol = 1e-9 * max(1.0, abs(y[i]))
        if abs(res[i]) <= tol:
            continue
        flagged[i] = scale <= tol or abs(res[i]) > z * scale

    step = cadence if cadence is not None else float(np.median(np.diff(x)))
    gaps: list[float] = []
    if step > 0:
        for a, b in zip(x, x[1:]):
            k = 1
            while a + k * step < b - 0.5 * step:
                gaps.append(a + k * step)
                k += 1

    clean_x, clean_y = x[~flagged], y[~flagged]

    def fit(at: float) -> float:
        j = int(np.searchsorted(clean_x, at))
        lo, hi = _rolling_window(len(clean_x), j, window)
        return _local_fit(clean_x[lo:hi], clean_y[lo:hi], at)

    out = {float(xi): float(yi) for xi, yi in zip(x, y)}
    reps: list[Replacement] = []
    for i in np.flatnonzero(flagged):
        v = fit(x[i])
        out[float(x[i])] = v
        reps.append(Replacement(pts[i][0], float(y[i]), v, "spike"))
    for g in gaps:
        v = fit(g)
        tg = t0 + timedelta(seconds=g)
        out[g] = v
        reps.append(Replacement(tg, None, v, "gap"))
    reps.sort(key=lambda r: r.t)
    repaired = [(t0 + timedelta(seconds=k), v) for k, v in sorted(out.items())]
    return RepairResult(repaired, reps)


# --- report ------------------------------------------------------------------


SIGNAL_HEADER = ("t", "source", "id", "lat", "lon", "value")
INFERENCE_HEADER = ("t", "detected", "r", "lon", "lat")
USV_HEADER = ("t", "source", "power", "speed", "lon", "lat")
SUMMARY_HEADER = ("source", "id", "count", "min", "max", "mean")


@dataclass
class ReportBundle:
    tables: dict[str, list[tuple]]
    files: dict[str, Path] = field(default_factory=dict)
    notice: str = ""

    def rows(self, name: str) -> list[tuple]:
        return self.tables[name]


def _stamp(t: datetime) -> str:
    return t.strftime("%Y%m%dT%H%M%S")


def build_report(events: Iterable[Event], t0: datetime | None = None, t1: datetime | None = None,
                 out_dir: str | Path | None = None, name: str = "run") -> ReportBundle:
    """Plot-ready tables of sensor signals, bloom inference and USV status, plus per-signal statistics."""
    events = list(events)
    if t0 is not None and t1 is not None and t0 > t1:
        raise ValueError("window start after window end")
    sel = [ev for ev in events if (t0 is None or ev.timestamp >= t0) and (t1 is None or ev.timestamp <= t1)]
    signals, inference, usv = [], [], []
    power: dict[str, float] = {}
    stats: dict[tuple[str, str], list[float]] = {}
    for ev in sel:
        if ev.id == HAB:
            inference.append((format_time(ev.timestamp), int(ev["Detected"]), ev["R"], ev["Lon"], ev["Lat"]))
        elif ev.id == "POW":
            power[ev.source] = float(ev["POW"])
        elif ev.id == "POS" and "Speed" in ev.payload:
            usv.append((format_time(ev.timestamp), ev.source, power.get(ev.source, ""), ev["Speed"], ev["Lon"], ev["Lat"]))
        v = ev.payload.get(ev.id)
        if isinstance(v, (int, float)) and ev.id not in (HAB, TRK):
            signals.append((format_time(ev.timestamp), ev.source, ev.id, ev.get("Lat", ""), ev.get("Lon", ""), v))
            stats.setdefault((ev.source, ev.id), []).append(float(v))
    summary = [(s, i, len(v), min(v), max(v), float(np.mean(v))) for (s, i), v in sorted(stats.items())]
    bundle = ReportBundle({"signals": signals, "inference": inference, "usv": usv, "summary": summary})
    if not sel:
        bundle.notice = "no events in window"
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        lo = t0 or (sel[0].timestamp if sel else None)
        hi = t1 or (sel[-1].timestamp if sel else None)
        window = f"{_stamp(lo)}-{_stamp(hi)}" if lo and hi else "empty"
        headers = {"signals": SIGNAL_HEADER, "inference": INFERENCE_HEADER, "usv": USV_HEADER, "summary": SUMMARY_HEADER}
        for key, header in headers.items():
            path = d / f"{name}_{window}_{key}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(tuple(repr(c) if isinstance(c, float) else c for c in row) for row in bundle.tables[key])
            bundle.files[key] = path
    return bundle


# --- atomic models -------------------------------------------------------------


@dataclass(frozen=True)
class Request:
    command: Event
    events: tuple[Event, ...] = ()


class Service(Clocked):
    def __init__(self, name: str, epoch: datetime):
        super().__init__(name, epoch)
        self.add_in_port("req")
        self.add_out_port("out")

    def on_input(self, port, value):
        if port == "req" and isinstance(value, Request):
            for ev in self.handle(value):
                self.emit("out", ev)

    def handle(self, req: Request) -> list[Event]:
        return []


class InferenceService(Service):
    """Point estimate of bloom density and position, stepped on each INFER request."""

    INPUT_IDS = ("IRA", "NOX", "DOX", "FLOW", "POS")

    def __init__(self, name: str, epoch: datetime, incubator: tuple[float, float],
                 params: BloomParams = BloomParams(), ref_lat: float | None = None):
        super().__init__(name, epoch)
        self.incubator = incubator
        self.params = params
        self.ref_lat = incubator[0] if ref_lat is None else ref_lat
        self.est: BloomEstimate | None = None

    @staticmethod
    def inputs_from(events: Iterable[Event]) -> InferenceInputs:
        latest = {}
        for ev in events:
            if "Fault" not in ev.payload:
                latest[ev.id] = ev
        def val(i, key):
            ev = latest.get(i)
            return float(ev[key]) if ev is not None and key in ev.payload else 0.0
        return InferenceInputs(
            sun=val("IRA", "IRA"), nox=val("NOX", "NOX"), dox=val("DOX", "DOX"),
            wfv=val("FLOW", "WFV") + val("POS", "SPV"), wfu=val("FLOW", "WFU") + val("POS", "SPU"),
        )

    def handle(self, req):
        now = self.now
        if self.est is None:
            lat, lon = self.incubator
            self.est = BloomEstimate(now, self.params.r0, lat, lon, False)
            return [self.est.to_event(self.name)]
        dt = (now - self.est.t).total_seconds() / 3600.0
        if dt <= 0:
            return []
        try:
            inputs = self.inputs_from(req.events)
            est = inference_step(self.est, inputs, dt, self.params, self.ref_lat)
        except InferenceFault as exc:
            return [Event(ERR, self.name, now, {"Reason": str(exc)})]
        if now.date() != self.est.t.date():
            # re-seed the position at the incubator at the start of the day
            midnight = datetime.combine(now.date(), datetime.min.time())
            since = (now - midnight).total_seconds() / 3600.0
            seed = BloomEstimate(midnight, est.r, *self.incubator)
            moved = inference_step(seed, inputs, since, self.params, self.ref_lat) if since > 0 else seed
            est = BloomEstimate(now, est.r, moved.lat, moved.lon, est.detected, est.photo, est.breath)
        self.est = est
        return [est.to_event(self.name)]


class PlannerService(Service):
    """Turns bloom estimates into track commands for one USV.

    Tracking starts on the first detection of a day (after a PLAN request
    has enabled the planner) and stays on until the day ends.
    """

    def __init__(self, name: str, epoch: datetime, target: str = "USV", staleness: float = 3600.0):
        super().__init__(name, epoch)
        self.add_in_port("est")
        self.add_in_port("pos")
        self.target = target
        self.staleness = staleness
        self.enabled = False
        self.latched_day = None
        self.fix: Event | None = None

    def on_input(self, port, value):
        if port == "req" and isinstance(value, Request):
            args = value.command.payload
            self.enabled = bool(args.get("enable", 1))
            self.staleness = float(args.get("staleness", self.staleness))
            self.target = str(args.get("target", self.target))
        elif port == "pos" and isinstance(value, Event):
            if value.source == self.target and "Fault" not in value.payload:
                self.fix = value
        elif port == "est" and isinstance(value, Event) and value.id == HAB:
            for ev in self.plan(BloomEstimate.from_event(value)):
                self.emit("out", ev)

    def plan(self, est: BloomEstimate) -> list[Event]:
        if not self.enabled:
            return []
        day = est.t.date()
        if est.detected:
            self.latched_day = day
        if self.latched_day != day:
            return []
        if self.fix is None:
            return [Event(WARN, self.name, self.now, {"Reason": f"no position fix from {self.target}"})]
        age = (est.t - self.fix.timestamp).total_seconds()
        if age > self.staleness:
            return [Event(WARN, self.name, self.now, {"Reason": f"stale position fix from {self.target}", "Age": age})]
        cmd = plan_track(est, float(self.fix["Lat"]), float(self.fix["Lon"]))
        return [TrackCommand(self.now, cmd.e_lat, cmd.e_lon).to_event(self.name, self.target)]


class OutlierService(Service):
    """Repairs one signal per OUTLIERS request; each repair is published once."""

    def __init__(self, name: str, epoch: datetime, window: int = 25, z: float = 5.0):
        super().__init__(name, epoch)
        self.window = window
        self.z = z
        self.published: set[tuple[str, str, datetime]] = set()

    def handle(self, req):
        args = req.command.payload
        sig = str(args.get("signal", ""))
        window = int(args.get("window", self.window))
        z = float(args.get("z", self.z))
        cadence = float(args["cadence"]) if "cadence" in args else None
        by_source: dict[str, list[Event]] = {}
        for ev in req.events:
            if ev.id == sig and isinstance(ev.get(sig), (int, float)):
                by_source.setdefault(ev.source, []).append(ev)
        out = []
        for src, evs in sorted(by_source.items()):
            res = repair_outliers([(e.timestamp, float(e[sig])) for e in evs], window, z, cadence)
            ref = {e.timestamp: e for e in evs}
            for rep in res.replacements:
                key = (src, sig, rep.t)
                if key in self.published or not math.isfinite(rep.value):
                    continue
                self.published.add(key)
                near = ref.get(rep.t) or evs[-1]
                payload = {"Lat": near.get("Lat", 0.0), "Lon": near.get("Lon", 0.0), sig: rep.value,
                           "Kind": rep.kind, "Of": src}
                if rep.original is not None:
                    payload["Original"] = rep.original
                out.append(Event(sig, self.name, rep.t, payload))
        return out


class AnalysisService(Service):
    def __init__(self, name: str, epoch: datetime, out_dir: str | Path | None = None, scenario: str = "run"):
        super().__init__(name, epoch)
        self.out_dir = out_dir
        self.scenario = scenario
        self.bundles: list[ReportBundle] = []

    def handle(self, req):
        args = req.command.payload
        t0 = parse_time(str(args["t0"])) if "t0" in args else None
        t1 = parse_time(str(args["t1"])) if "t1" in args else None
        bundle = build_report(req.events, t0, t1, self.out_dir, self.scenario)
        self.bundles.append(bundle)
        payload = {k: len(v) for k, v in bundle.tables.items()}
        if bundle.notice:
            payload["Notice"] = bundle.notice
        return [Event("REPORT", self.name, self.now, payload)]


class Gcs(Clocked):
    """Ground control station: stores, forwards and dispatches.

    Raw sensor data goes to the fog log and ``d1``; service results go to
    the log and ``d1hat``; scenario service commands become requests on
    ``req_<SERVICE>``. Position fixes and bloom estimates are also handed
    to the planner.
    """

    def __init__(self, name: str, epoch: datetime, services: Iterable[str], log: EventLog | None = None):
        super().__init__(name, epoch)
        self.services = tuple(services)
        self.log = log if log is not None else EventLog()
        for p in ("cmd", "d", "res"):
            self.add_in_port(p)
        for p in ("d1", "d1hat", "est", "pos"):
            self.add_out_port(p)
        for s in self.services:
            self.add_out_port(f"req_{s}")

    def on_command(self, ev):
        self.log.append(ev)
        super().on_command(ev)

    def on_input(self, port, value):
        if not isinstance(value, Event):
            return
        if port == "d":
            self.log.append(value)
            self.emit("d1", value)
            if value.id == "POS" and "PLAN" in self.services:
                self.emit("pos", value)
        elif port == "res":
            self.log.append(value)
            self.emit("d1hat", value)
            if value.id == HAB and "PLAN" in self.services:
                self.emit("est", value)
        elif port == "cmd":
            if value.id not in SERVICES:
                return  # sensor configuration, not addressed to the fog
            self.log.append(value)
            self.dispatch(value)

    def dispatch(self, cmd: Event) -> None:
        name = cmd.id
        if name == "PREDICT":
            return  # cloud service
        if name not in self.services:
            err = Event(ERR, self.name, self.now, {"Reason": f"unknown service {name}"})
            self.log.append(err)
            return
        if name == "INFER":
            events = tuple(ev for ev in (self.log.latest(i) for i in InferenceService.INPUT_IDS) if ev is not None)
        elif name == "OUTLIERS":
            events = tuple(self.log.query(id=str(cmd.get("signal", ""))))
        elif name == "REPORT":
            events = self.log.snapshot()
        else:
            events = ()
        self.emit(f"req_{name}", Request(cmd, events))


class Fog(Coupled):
    """GCS plus the enabled services, wired as a single fog node."""

    def __init__(self, name: str, epoch: datetime, incubator: tuple[float, float], services: Sequence[str] = FOG_SERVICES,
                 bloom: BloomParams = BloomParams(), log: EventLog | None = None, usv: str = "USV",
                 out_dir: str | Path | None = None, scenario: str = "run", ref_lat: float | None = None):
        super().__init__(name)
        unknown = set(services) - set(FOG_SERVICES)
        if unknown:
            raise ValueError(f"unknown fog services {sorted(unknown)}")
        for p in ("d", "cmd"):
            self.add_in_port(p)
        for p in ("track", "d1", "d1hat"):
            self.add_out_port(p)
        self.gcs = self.add_component(Gcs("GCS", epoch, services, log))
        self.services: dict[str, Service] = {}
        makers = {
            "INFER": lambda: InferenceService("Inference", epoch, incubator, bloom, ref_lat),
            "PLAN": lambda: PlannerService("Planner", epoch, usv),
            "OUTLIERS": lambda: OutlierService("Outliers", epoch),
            "REPORT": lambda: AnalysisService("Analysis", epoch, out_dir, scenario),
        }
        for s in FOG_SERVICES:
            if s in services:
                svc = self.add_component(makers[s]())
                self.services[s] = svc
                self.connect(f"GCS.req_{s}", f"{svc.name}.req")
                self.connect(f"{svc.name}.out", "GCS.res")
        self.connect("d", "GCS.d")
        self.connect("cmd", "GCS.cmd")
        self.connect("GCS.d1", "d1")
        self.connect("GCS.d1hat", "d1hat")
        if "PLAN" in self.services:
            self.connect("GCS.est", "Planner.est")
            self.connect("GCS.pos", "Planner.pos")
            self.connect("Planner.out", "track")

    @property
    def log(self) -> EventLog:
        return self.gcs.log
