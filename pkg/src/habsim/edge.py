"""Edge layer: sensor digital twins, the USV and the scenario-file source."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable

import numpy as np

from .base import Clocked
from .devs import Atomic
from .environment import Environment, SamplingError
from .events import Event, ScenarioCommand
from .params import M_PER_DEG_LAT, m_per_deg_lon, velocity_to_deg


@dataclass(frozen=True)
class SensorConfig:
    id: str
    delay: float = 0.0       # seconds between sampling and reporting
    min: float = -1e9
    max: float = 1e9
    precision: float = 1e-6
    noisesigma: float = 0.0
    period: float = 1800.0   # seconds
    seed: int = 0

    def __post_init__(self):
        if not self.min < self.max:
            raise ValueError(f"{self.id}: need min < max")
        if not self.precision > 0:
            raise ValueError(f"{self.id}: precision must be positive")
        if self.max - self.min < self.precision:
            raise ValueError(f"{self.id}: range narrower than one precision step")
        if not self.noisesigma >= 0:
            raise ValueError(f"{self.id}: noisesigma must be non-negative")
        if not self.period > 0:
            raise ValueError(f"{self.id}: period must be positive")
        if not self.delay >= 0:
            raise ValueError(f"{self.id}: delay must be non-negative")

    def updated(self, args: dict) -> "SensorConfig":
        """Copy with fields overridden by a CONFIG command payload."""
        known = {k: v for k, v in args.items() if k in ("delay", "min", "max", "precision", "noisesigma", "period", "seed")}
        if "seed" in known:
            known["seed"] = int(known["seed"])
        return replace(self, **{k: (v if k == "seed" else float(v)) for k, v in known.items()})


def sensor_rng(seed: int, source: str, sensor_id: str) -> np.random.Generator:
    """Independent noise stream per (scenario seed, sensor)."""
    key = zlib.crc32(f"{source}:{sensor_id}".encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def quantize(value: float, precision: float) -> float:
    """Nearest multiple of ``precision``, halves rounded away from zero."""
    q = Decimal(repr(float(precision)))
    n = (Decimal(repr(float(value))) / q).to_integral_value(rounding=ROUND_HALF_UP)
    return float(n * q)


def sensor_measure(truth: float, cfg: SensorConfig, rng: np.random.Generator | None = None) -> float:
    noisy = truth
    if cfg.noisesigma > 0:
        if rng is None:
            raise ValueError("a noise generator is required when noisesigma > 0")
        noisy = truth + rng.normal(0.0, cfg.noisesigma)
    v = quantize(min(max(noisy, cfg.min), cfg.max), cfg.precision)
    # quantizing can step past a bound that is not itself a multiple of precision
    if v > cfg.max:
        v = quantize(v - cfg.precision, cfg.precision)
    elif v < cfg.min:
        v = quantize(v + cfg.precision, cfg.precision)
    return v


# --- USV dynamics ------------------------------------------------------------


@dataclass(frozen=True)
class UsvParams:
    Kp: float = 30.0
    Ke: float = -0.003
    Ks: float = 0.04
    K2d: float = 0.01
    step_gain: float = 1.0
    period: float = 1800.0  # seconds per step

    def __post_init__(self):
        for name in ("Kp", "Ke", "Ks", "K2d", "step_gain", "period"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (self.Kp > 0 and self.Ks > 0 and self.K2d > 0):
            raise ValueError("Kp, Ks and K2d must be positive")
        if not 0 < self.step_gain <= 1:
            raise ValueError("step_gain must lie in (0, 1]")
        if not self.period > 0:
            raise ValueError("period must be positive")


@dataclass
class UsvState:
    lat_usv: float
    lon_usv: float
    e_lat: float = 0.0
    e_lon: float = 0.0
    power: float = 1.0
    sun: float = 0.0
    wfv: float = 0.0
    wfu: float = 0.0
    speed: float = 0.0  # m/s over the last step
    spv: float = 0.0    # ship velocity north, m/s
    spu: float = 0.0    # ship velocity east, m/s

    def __post_init__(self):
        if not 0 <= self.power <= 1:
            raise ValueError("power must lie in [0, 1]")


def usv_power_step(state: UsvState, params: UsvParams) -> float:
    navigating = state.power > 0
    prop = params.Kp * math.hypot(state.e_lat, state.e_lon) if navigating else 0.0
    return min(max(state.power + params.Ke + params.Ks * state.sun - prop, 0.0), 1.0)


def usv_position_step(state: UsvState, params: UsvParams, ref_lat: float | None = None) -> tuple[float, float]:
    ref = state.lat_usv if ref_lat is None else ref_lat
    dlat, dlon = velocity_to_deg(state.wfv, state.wfu, params.period, ref)
    return (state.lat_usv + params.step_gain * state.e_lat + params.K2d * dlat,
            state.lon_usv + params.step_gain * state.e_lon + params.K2d * dlon)


def steps_to_depletion(power: float, error: float, params: UsvParams) -> int:
    """Closed-form number of steps until the battery is empty with no sun and a constant error."""
    drain = -params.Ke + params.Kp * error
    if drain <= 0:
        raise ValueError("battery never depletes")
    return math.ceil(power / drain)


# --- atomic models -----------------------------------------------------------


def _fault(sensor_id: str, source: str, t: datetime, lat: float, lon: float, msg: str) -> Event:
    return Event(sensor_id, source, t, {"Lat": lat, "Lon": lon, "Fault": msg})


class ScenarioSource(Atomic):
    """Replays scenario commands as events on ``cmd``.

    Service commands carrying a ``period`` argument repeat every ``period``
    seconds until STOP.
    """

    def __init__(self, commands: list[ScenarioCommand], name: str = "SimFile"):
        super().__init__(name)
        if not commands:
            raise ValueError("scenario has no commands")
        self.cmd = self.add_out_port("cmd")
        self.epoch = commands[0].at
        self.stop_at = commands[-1].at
        self.queue: list[tuple[float, int, Event]] = []
        for i, c in enumerate(commands):
            self.queue.append((self._secs(c.at), i, c.to_event()))
        n = len(commands)
        for c in commands:
            period = c.args.get("period") if c.is_service else None
            if period:
                t = c.at + timedelta(seconds=float(period))
                while t < self.stop_at:
                    self.queue.append((self._secs(t), n, Event(c.command, c.source, t, c.args)))
                    n += 1
                    t += timedelta(seconds=float(period))
        self.queue.sort(key=lambda x: (x[0], x[1]))
        self.pos = 0
        self.now = 0.0
        self._sched()

    def _secs(self, t: datetime) -> float:
        return (t - self.epoch).total_seconds()

    def _sched(self):
        if self.pos < len(self.queue):
            self.hold_in("replay", self.queue[self.pos][0] - self.now)
        else:
            self.passivate()

    def lambdaf(self):
        t = self.queue[self.pos][0]
        i = self.pos
        while i < len(self.queue) and self.queue[i][0] == t:
            self.cmd.add(self.queue[i][2])
            i += 1

    def deltint(self):
        t = self.queue[self.pos][0]
        while self.pos < len(self.queue) and self.queue[self.pos][0] == t:
            self.pos += 1
        self.now = t
        self._sched()

    def deltext(self, e):
        self.now += e
        self._sched()


class SensorTwin(Clocked):
    """Fixed-position digital twin of a single probe.

    ``reader(t, lat, lon, depth)`` returns the true value. Real-device events
    arriving on ``d`` are forwarded unchanged (hardware in the loop).
    """

    def __init__(self, name: str, epoch: datetime, cfg: SensorConfig, reader: Callable[[datetime, float, float, float], float],
                 lat: float, lon: float, depth: float | None = 0.0, seed: int = 0):
        super().__init__(name, epoch)
        self.cfg = cfg
        self.reader = reader
        self.lat, self.lon, self.depth = lat, lon, depth
        self.seed = seed
        self.rng = sensor_rng(seed + cfg.seed, name, cfg.id)
        self.add_in_port("cmd")
        self.add_in_port("d")
        self.add_out_port("out")
        self.samples = 0

    def on_start(self):
        self.schedule(0.0, None, "sample")

    def on_input(self, port, value):
        if port == "d" and isinstance(value, Event):
            self.emit("out", value)
        elif port == "cmd" and isinstance(value, Event) and value.source == self.name and value.id == self.cfg.id:
            if value.payload.keys() & {"lat", "lon", "depth"}:
                self.lat = float(value.get("lat", self.lat))
                self.lon = float(value.get("lon", self.lon))
                self.depth = float(value.get("depth", self.depth or 0.0))
            cfg = self.cfg.updated(value.payload)
            if cfg.seed != self.cfg.seed:
                self.rng = sensor_rng(self.seed + cfg.seed, self.name, cfg.id)
            self.cfg = cfg

    def on_timer(self, item):
        if not self.running:
            return
        self.samples += 1
        t_out = self.now + timedelta(seconds=self.cfg.delay)
        try:
            truth = self.reader(self.now, self.lat, self.lon, self.depth or 0.0)
            payload = {"Lat": self.lat, "Lon": self.lon}
            if self.depth is not None:
                payload["Depth"] = self.depth
            payload[self.cfg.id] = sensor_measure(truth, self.cfg, self.rng)
            ev = Event(self.cfg.id, self.name, t_out, payload)
        except SamplingError as exc:
            ev = _fault(self.cfg.id, self.name, t_out, self.lat, self.lon, str(exc))
        self.schedule(self.cfg.delay, "out", ev)
        self.schedule(self.cfg.period, None, "sample")


def water_reader(env: Environment, field: str) -> Callable:
    def read(t, lat, lon, depth):
        return getattr(env.sample(t, lat, lon, depth), field)
    return read


def sun_reader(env: Environment) -> Callable:
    def read(t, lat, lon, depth):
        return env.sun(t, lat, lon)
    return read


USV_SENSORS = ("TEM", "DOX", "NOX", "FLOW")


def default_usv_sensors() -> dict[str, SensorConfig]:
    # delays follow the reporting offsets seen in logged USV messages
    return {
        "DOX": SensorConfig("DOX", delay=5, min=0.0, max=30.0, precision=0.1, noisesigma=0.2),
        "NOX": SensorConfig("NOX", delay=6, min=0.0, max=5.0, precision=0.0001, noisesigma=0.0005),
        "TEM": SensorConfig("TEM", delay=7, min=-5.0, max=45.0, precision=0.1, noisesigma=0.1),
        "FLOW": SensorConfig("FLOW", delay=4, min=-2.0, max=2.0, precision=0.001, noisesigma=0.002),
    }


class Usv(Clocked):
    """Unmanned surface vehicle: power unit, positioning unit and onboard probes.

    Every ``params.period`` seconds the vehicle updates its battery from the
    pending tracking error, moves, samples its probes at the new position and
    reports TEM, DOX, NOX, FLOW (water velocity relative to the hull), POW and
    POS events after each probe's delay. Track commands (``TRK`` events with
    ``ELat``/``ELon``) arriving on ``track`` set the error used at the next
    step; the error is consumed by that step.
    """

    POS_DELAY = 1.0

    def __init__(self, name: str, epoch: datetime, env: Environment, state: UsvState,
                 params: UsvParams = UsvParams(), sensors: dict[str, SensorConfig] | None = None,
                 seed: int = 0, ref_lat: float | None = None, sun_override: float | None = None):
        super().__init__(name, epoch)
        self.env = env
        self.state = state
        self.params = params
        self.sensors = dict(default_usv_sensors() if sensors is None else sensors)
        self.seed = seed
        self.ref_lat = state.lat_usv if ref_lat is None else ref_lat
        self.sun_override = sun_override
        self.rngs = {k: sensor_rng(seed + c.seed, name, k) for k, c in self.sensors.items()}
        self.add_in_port("cmd")
        self.add_in_port("track")
        self.add_out_port("out")
        self.steps = 0
        self.history: list[tuple[datetime, float, float, float]] = []  # (t, power, lat, lon)

    def on_start(self):
        self.sample()
        self.schedule(self.params.period, None, "step")

    def on_input(self, port, value):
        if not isinstance(value, Event):
            return
        if port == "track" and value.id == "TRK" and value.get("Target", self.name) == self.name:
            self.state.e_lat = float(value["ELat"])
            self.state.e_lon = float(value["ELon"])
        elif port == "cmd" and value.source == self.name and value.id in self.sensors:
            cfg = self.sensors[value.id].updated(value.payload)
            if cfg.seed != self.sensors[value.id].seed:
                self.rngs[value.id] = sensor_rng(self.seed + cfg.seed, self.name, value.id)
            self.sensors[value.id] = cfg

    def _sun(self) -> float:
        if self.sun_override is not None:
            return self.sun_override
        try:
            return self.env.sun(self.now, self.state.lat_usv, self.state.lon_usv)
        except SamplingError:
            return 0.0

    def on_timer(self, item):
        if not self.running:
            return
        self.step()
        self.sample()
        self.schedule(self.params.period, None, "step")

    def step(self) -> None:
        s = self.state
        s.sun = self._sun()
        lat0, lon0 = s.lat_usv, s.lon_usv
        s.power = usv_power_step(s, self.params)
        if s.power > 0:
            s.lat_usv, s.lon_usv = usv_position_step(s, self.params, self.ref_lat)
        dn = (s.lat_usv - lat0) * M_PER_DEG_LAT
        de = (s.lon_usv - lon0) * m_per_deg_lon(self.ref_lat)
        s.spv, s.spu = dn / self.params.period, de / self.params.period
        s.speed = math.hypot(s.spv, s.spu)
        s.e_lat = s.e_lon = 0.0
        self.steps += 1

    def sample(self) -> None:
        s = self.state
        self.history.append((self.now, s.power, s.lat_usv, s.lon_usv))
        pos_t = self.now + timedelta(seconds=self.POS_DELAY)
        self.schedule(self.POS_DELAY, "out", Event("POW", self.name, pos_t, {"POW": s.power}))
        self.schedule(self.POS_DELAY, "out", Event("POS", self.name, pos_t, {
            "Lat": s.lat_usv, "Lon": s.lon_usv, "SPV": s.spv, "SPU": s.spu, "Speed": s.speed}))
        try:
            rec = self.env.sample(self.now, s.lat_usv, s.lon_usv)
        except SamplingError as exc:
            for sid, cfg in self.sensors.items():
                t = self.now + timedelta(seconds=cfg.delay)
                self.schedule(cfg.delay, "out", _fault(sid, self.name, t, s.lat_usv, s.lon_usv, str(exc)))
            return
        s.wfv, s.wfu = rec.wfv, rec.wfu
        for sid, cfg in self.sensors.items():
            t = self.now + timedelta(seconds=cfg.delay)
            payload = {"Lat": s.lat_usv, "Lon": s.lon_usv, "Depth": rec.depth}
            if sid == "FLOW":
                payload["WFV"] = sensor_measure(rec.wfv - s.spv, cfg, self.rngs[sid])
                payload["WFU"] = sensor_measure(rec.wfu - s.spu, cfg, self.rngs[sid])
            else:
                payload[sid] = sensor_measure(getattr(rec, sid.lower()), cfg, self.rngs[sid])
            self.schedule(cfg.delay, "out", Event(sid, self.name, t, payload))
