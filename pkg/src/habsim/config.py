"""Run configuration: an INI file with one section per subsystem.

Relative paths are resolved against the directory holding the file. Every
problem found is collected and reported at once through :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .edge import SensorConfig, UsvParams, default_usv_sensors
from .environment import GridSpec, IncubatorSpec, RainEpisode, SyntheticSpec
from .events import ScenarioError, load_scenario, parse_time
from .fog import FOG_SERVICES
from .params import BloomParams, SedimentParams

MODES = ("virtual", "realtime", "hybrid")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass(frozen=True)
class FixedSensor:
    name: str             # component / event source name
    kind: str             # "sun" or a water field (tem, dox, nox, wfv, wfu, bloom_density)
    cfg: SensorConfig
    lat: float
    lon: float
    depth: float = 0.0


@dataclass(frozen=True)
class UsvConfig:
    name: str = "USV"
    lat: float = 47.500
    lon: float = -122.220
    power: float = 1.0
    params: UsvParams = UsvParams()
    sensors: dict = field(default_factory=default_usv_sensors)
    sun_override: float | None = None


@dataclass
class RunConfig:
    path: Path | None
    name: str
    scenario: Path
    seed: int = 0
    out_dir: Path = Path("out")
    mode: str = "virtual"
    scale: float = 1.0
    until: float | None = None   # seconds of virtual time from START
    parallel: bool = False
    inject_host: str = "127.0.0.1"
    inject_port: int = 0
    data_source: str = "synthetic"
    water_csv: Path | None = None
    irradiance_csv: Path | None = None
    forecast_csv: Path | None = None
    synthetic: SyntheticSpec = SyntheticSpec()
    bloom: BloomParams = BloomParams()
    sediment: SedimentParams = SedimentParams()
    sensors: list[FixedSensor] = field(default_factory=list)
    usv: UsvConfig | None = None
    fog_name: str = "Fog"
    body: str = "lake"
    services: tuple[str, ...] = FOG_SERVICES
    staleness: float = 3600.0
    cloud: bool = True
    k_wind: float = 0.03
    lag: float | None = None

    @property
    def incubator(self) -> tuple[float, float]:
        return self.synthetic.incubator.lat, self.synthetic.incubator.lon

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        problems = validate_config(cfg)
        if problems:
            raise ConfigError(problems)
        return cfg


def _num(sec, key, default, problems, cast=float):
    if key not in sec:
        return default
    raw = sec[key]
    try:
        v = cast(raw)
    except ValueError:
        problems.append(f"[{sec.name}] {key}: cannot parse {raw!r}")
        return default
    if isinstance(v, float) and math.isnan(v):
        problems.append(f"[{sec.name}] {key}: NaN not allowed")
        return default
    return v


def _bool(sec, key, default, problems):
    if key not in sec:
        return default
    try:
        return sec.getboolean(key)
    except ValueError:
        problems.append(f"[{sec.name}] {key}: expected a boolean, got {sec[key]!r}")
        return default


def _build(cls, sec, problems, **extra):
    """Instantiate a dataclass from an INI section, one float per known field."""
    kw = dict(extra)
    for f in fields(cls):
        if sec is not None and f.name in sec and f.name not in kw:
            kw[f.name] = _num(sec, f.name, None, problems)
    kw = {k: v for k, v in kw.items() if v is not None}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"[{sec.name if sec is not None else cls.__name__}] {exc}")
        return cls(**extra) if not kw else None


def _rain(text: str, problems: list[str]):
    text = text.strip()
    if text in ("", "random"):
        return None
    if text == "none":
        return ()
    eps = []
    for part in text.split(";"):
        try:
            start, dur, rate = (float(x) for x in part.split(":"))
            eps.append(RainEpisode(start, dur, rate))
        except ValueError:
            problems.append(f"[synthetic] rain: bad episode {part!r} (want start:duration:rate)")
    return tuple(eps)


def _sensor_cfg(sec, sid: str, base: SensorConfig | None, problems) -> SensorConfig | None:
    kw = {} if base is None else {f.name: getattr(base, f.name) for f in fields(SensorConfig)}
    kw["id"] = sid
    for key in ("delay", "min", "max", "precision", "noisesigma", "period"):
        if key in sec:
            kw[key] = _num(sec, key, kw.get(key), problems)
    if "seed" in sec:
        kw["seed"] = _num(sec, "seed", 0, problems, int)
    try:
        return SensorConfig(**kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"[{sec.name}] {exc}")
        return None


WATER_KINDS = ("tem", "dox", "nox", "wfv", "wfu", "bloom_density")


def parse_config(text: str, base_dir: Path | None = None, path: Path | None = None) -> RunConfig:
    problems: list[str] = []
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    base = base_dir or Path(".")

    def p(v: str) -> Path:
        q = Path(v)
        return q if q.is_absolute() else base / q

    if "run" not in cp:
        raise ConfigError(["missing [run] section"])
    run = cp["run"]
    if "scenario" not in run:
        problems.append("[run] scenario is required")
    mode = run.get("mode", "virtual")
    cfg = RunConfig(
        path=path,
        name=run.get("name", path.stem if path else "run"),
        scenario=p(run.get("scenario", "")),
        seed=_num(run, "seed", 0, problems, int),
        out_dir=p(run.get("out", "out")),
        mode=mode,
        scale=_num(run, "scale", 1.0, problems),
        until=_num(run, "until", None, problems),
        parallel=_bool(run, "parallel", False, problems),
        inject_host=run.get("inject_host", "127.0.0.1"),
        inject_port=_num(run, "inject_port", 0, problems, int),
    )

    if "data" in cp:
        d = cp["data"]
        cfg.data_source = d.get("source", "synthetic")
        for key in ("water", "irradiance", "forecast"):
            if key in d:
                setattr(cfg, f"{key}_csv", p(d[key]))

    inc_sec = cp["incubator"] if "incubator" in cp else None
    inc = _build(IncubatorSpec, inc_sec, problems) or IncubatorSpec()
    grid_sec = cp["grid"] if "grid" in cp else None
    if grid_sec is not None:
        kw = {}
        for f in fields(GridSpec):
            if f.name in grid_sec:
                kw[f.name] = _num(grid_sec, f.name, None, problems, int if f.name in ("ny", "nx") else float)
        grid = _build(GridSpec, None, problems, **{k: v for k, v in kw.items() if v is not None}) or GridSpec()
    else:
        grid = GridSpec()
    cfg.bloom = _build(BloomParams, cp["bloom"] if "bloom" in cp else None, problems) or BloomParams()
    cfg.sediment = _build(SedimentParams, cp["sediment"] if "sediment" in cp else None, problems) or SedimentParams()

    syn: dict = {"grid": grid, "incubator": inc, "bloom": cfg.bloom, "sediment": cfg.sediment}
    if "synthetic" in cp:
        s = cp["synthetic"]
        if "start" in s:
            try:
                syn["start"] = parse_time(s["start"])
            except ValueError:
                problems.append(f"[synthetic] start: bad timestamp {s['start']!r}")
        for key in ("days", "rain_probability", "sunrise", "sunset", "k_wind", "current_noise", "plume_drift",
                    "initial_plume", "bloom_width", "growth_noise", "tem_mean", "tem_amplitude", "tem_noise",
                    "dox_base", "dox_amplitude", "dox_bloom"):
            if key in s:
                syn[key] = _num(s, key, None, problems)
        for key in ("cadence", "substeps"):
            if key in s:
                syn[key] = _num(s, key, None, problems, int)
        if "advection" in s:
            syn["advection"] = _bool(s, "advection", True, problems)
        if "rain" in s:
            syn["rain"] = _rain(s["rain"], problems)
    try:
        cfg.synthetic = SyntheticSpec(**{k: v for k, v in syn.items() if v is not None})
    except (TypeError, ValueError) as exc:
        problems.append(f"[synthetic] {exc}")

    for sec_name in cp.sections():
        if not sec_name.startswith("sensor:"):
            continue
        s = cp[sec_name]
        name = sec_name.split(":", 1)[1].strip()
        kind = s.get("kind", "sun")
        if kind != "sun" and kind not in WATER_KINDS:
            problems.append(f"[{sec_name}] kind must be 'sun' or one of {', '.join(WATER_KINDS)}")
            continue
        sid = s.get("id", "IRA" if kind == "sun" else kind.upper())
        sc = _sensor_cfg(s, sid, None, problems)
        if sc is None:
            continue
        cfg.sensors.append(FixedSensor(name, kind, sc, _num(s, "lat", inc.lat, problems),
                                       _num(s, "lon", inc.lon, problems), _num(s, "depth", 0.0, problems)))

    if "usv" in cp and _bool(cp["usv"], "enabled", True, problems):
        u = cp["usv"]
        params = _build(UsvParams, u, problems) or UsvParams()
        sensors = default_usv_sensors()
        for sec_name in cp.sections():
            if sec_name.startswith("usv_sensor:"):
                sid = sec_name.split(":", 1)[1].strip()
                if sid not in sensors:
                    problems.append(f"[{sec_name}] unknown onboard sensor (have {', '.join(sensors)})")
                    continue
                sc = _sensor_cfg(cp[sec_name], sid, sensors[sid], problems)
                if sc is not None:
                    sensors[sid] = sc
        cfg.usv = UsvConfig(u.get("name", "USV"), _num(u, "lat", 47.5, problems), _num(u, "lon", -122.22, problems),
                            _num(u, "power", 1.0, problems), params, sensors, _num(u, "sun_override", None, problems))

    if "fog" in cp:
        f = cp["fog"]
        cfg.fog_name = f.get("name", cfg.fog_name)
        cfg.body = f.get("body", cfg.body)
        if "services" in f:
            cfg.services = tuple(x.strip() for x in f["services"].split(",") if x.strip())
        cfg.staleness = _num(f, "staleness", cfg.staleness, problems)
    if "cloud" in cp:
        c = cp["cloud"]
        cfg.cloud = _bool(c, "enabled", True, problems)
        cfg.k_wind = _num(c, "k_wind", cfg.k_wind, problems)
        cfg.lag = _num(c, "lag", None, problems)

    problems += validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate_config(cfg: RunConfig) -> list[str]:
    problems = []
    if cfg.mode not in MODES:
        problems.append(f"[run] mode must be one of {', '.join(MODES)}")
    if cfg.mode != "virtual" and not cfg.scale > 0:
        problems.append("[run] scale must be positive in realtime/hybrid mode")
    if cfg.until is not None and not cfg.until >= 0:
        problems.append("[run] until must be non-negative")
    if cfg.data_source not in ("synthetic", "csv"):
        problems.append("[data] source must be 'synthetic' or 'csv'")
    if cfg.data_source == "csv":
        if cfg.water_csv is None and (cfg.usv is not None or any(s.kind != "sun" for s in cfg.sensors)):
            problems.append("[data] water is required when water sensors or a USV are configured")
        for key in ("water_csv", "irradiance_csv", "forecast_csv"):
            v = getattr(cfg, key)
            if v is not None and not v.is_file():
                problems.append(f"[data] {key.split('_')[0]}: file not found: {v}")
    unknown = set(cfg.services) - set(FOG_SERVICES)
    if unknown:
        problems.append(f"[fog] unknown services {sorted(unknown)}")
    if "PLAN" in cfg.services and "INFER" not in cfg.services:
        problems.append("[fog] PLAN needs the INFER service")
    if cfg.usv is not None:
        if not 0.0 <= cfg.usv.power <= 1.0:
            problems.append(f"[usv] power must lie in [0, 1], got {cfg.usv.power}")
        if cfg.usv.sun_override is not None and not 0.0 <= cfg.usv.sun_override <= 1.0:
            problems.append(f"[usv] sun_override must lie in [0, 1], got {cfg.usv.sun_override}")
    names = [s.name for s in cfg.sensors] + ([cfg.usv.name] if cfg.usv else [])
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        problems.append(f"duplicate component names {sorted(dup)}")
    if not cfg.scenario.is_file():
        problems.append(f"[run] scenario: file not found: {cfg.scenario}")
    else:
        try:
            commands = load_scenario(cfg.scenario)
        except ScenarioError as exc:
            problems += [f"scenario: {p}" for p in exc.problems]
        else:
            for c in commands:
                if c.command in FOG_SERVICES and c.command not in cfg.services:
                    problems.append(f"scenario: {c.command} at {c.at} targets a disabled fog service")
                if c.command == "PREDICT" and not cfg.cloud:
                    problems.append(f"scenario: PREDICT at {c.at} needs the cloud layer")
    return problems


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, path.parent, path)
