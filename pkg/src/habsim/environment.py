"""Water-body ground truth: gridded datasets, irradiance and weather forecasts.

Datasets come from CSV files (``t,lat,lon,depth,wfv,wfu,tem,dox,nox,bloom``,
one row per cell and instant) or from :func:`generate_synthetic_scenario`.
Sampling is linear in time and nearest-cell in space.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .events import format_time, parse_time
from .params import M_PER_DEG_LAT, BloomParams, SedimentParams, m_per_deg_lon

WATER_FIELDS = ("wfv", "wfu", "tem", "dox", "nox", "bloom")
WATER_HEADER = ("t", "lat", "lon", "depth") + WATER_FIELDS
IRRADIANCE_HEADER = ("t", "lat", "lon", "sun")
FORECAST_HEADER = ("t", "rain", "wind_v", "wind_u", "sun")
TRACK_HEADER = ("t", "r", "lat", "lon")


class SamplingError(ValueError):
    """Requested time or position lies outside the dataset."""


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class WaterBodyRecord:
    t: datetime
    lat: float
    lon: float
    depth: float
    wfv: float
    wfu: float
    tem: float
    dox: float
    nox: float
    bloom_density: float


@dataclass(frozen=True)
class IrradianceRecord:
    t: datetime
    lat: float
    lon: float
    sun: float


@dataclass(frozen=True)
class ForecastRecord:
    t: datetime
    rain: float
    wind_v: float
    wind_u: float
    sun_forecast: float


def _fmt(x: float) -> str:
    return repr(float(x))


def _hours(times: Sequence[datetime], t0: datetime) -> np.ndarray:
    return np.array([(t - t0).total_seconds() / 3600.0 for t in times])


def _bracket(hours: np.ndarray, h: float) -> tuple[int, int, float]:
    """Indices and weight for linear interpolation; exact hits return weight 0."""
    j = int(np.searchsorted(hours, h, side="left"))
    if j < len(hours) and hours[j] == h:
        return j, j, 0.0
    i = j - 1
    w = (h - hours[i]) / (hours[j] - hours[i])
    return i, j, float(w)


class TimeSeries:
    """Named scalar series on a common time axis, linearly interpolated."""

    def __init__(self, times: Sequence[datetime], **columns: Sequence[float]):
        self.times = list(times)
        if not self.times:
            raise ValueError("empty time series")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        self.hours = _hours(self.times, self.times[0])
        self.columns = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
        for k, v in self.columns.items():
            if v.shape != (len(self.times),):
                raise ValueError(f"column {k} has wrong length")

    def __len__(self) -> int:
        return len(self.times)

    def covers(self, t: datetime) -> bool:
        return self.times[0] <= t <= self.times[-1]

    def at(self, t: datetime, name: str) -> float:
        if not self.covers(t):
            raise SamplingError(
                f"time {format_time(t)} outside [{format_time(self.times[0])}, {format_time(self.times[-1])}]"
            )
        i, j, w = _bracket(self.hours, (t - self.times[0]).total_seconds() / 3600.0)
        col = self.columns[name]
        return float(col[i]) if w == 0.0 else float(col[i] + w * (col[j] - col[i]))


class IrradianceSeries(TimeSeries):
    def __init__(self, times, sun, lat: float, lon: float):
        super().__init__(times, sun=sun)
        if np.any(self.columns["sun"] < 0) or np.any(self.columns["sun"] > 1):
            raise ValueError("irradiance must lie in [0, 1]")
        self.lat = lat
        self.lon = lon

    def sample(self, t: datetime) -> float:
        return self.at(t, "sun")

    def records(self) -> Iterator[IrradianceRecord]:
        for i, t in enumerate(self.times):
            yield IrradianceRecord(t, self.lat, self.lon, float(self.columns["sun"][i]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(IRRADIANCE_HEADER)
            for r in self.records():
                w.writerow((format_time(r.t), _fmt(r.lat), _fmt(r.lon), _fmt(r.sun)))

    @classmethod
    def from_csv(cls, path: str | Path) -> "IrradianceSeries":
        rows = _read_rows(path, IRRADIANCE_HEADER)
        return cls([parse_time(r["t"]) for r in rows], [float(r["sun"]) for r in rows],
                   float(rows[0]["lat"]), float(rows[0]["lon"]))


class Forecast(TimeSeries):
    def __init__(self, times, rain, wind_v, wind_u, sun):
        super().__init__(times, rain=rain, wind_v=wind_v, wind_u=wind_u, sun=sun)
        if np.any(self.columns["rain"] < 0):
            raise ValueError("rain must be non-negative")

    def records(self) -> list[ForecastRecord]:
        c = self.columns
        return [ForecastRecord(t, float(c["rain"][i]), float(c["wind_v"][i]), float(c["wind_u"][i]),
                               float(c["sun"][i])) for i, t in enumerate(self.times)]

    @classmethod
    def from_records(cls, records: Sequence[ForecastRecord]) -> "Forecast":
        return cls([r.t for r in records], [r.rain for r in records], [r.wind_v for r in records],
                   [r.wind_u for r in records], [r.sun_forecast for r in records])

    def window(self, t0: datetime, t1: datetime) -> "Forecast":
        keep = [i for i, t in enumerate(self.times) if t0 <= t <= t1]
        c = self.columns
        return Forecast([self.times[i] for i in keep], c["rain"][keep], c["wind_v"][keep],
                        c["wind_u"][keep], c["sun"][keep])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FORECAST_HEADER)
            for r in self.records():
                w.writerow((format_time(r.t), _fmt(r.rain), _fmt(r.wind_v), _fmt(r.wind_u), _fmt(r.sun_forecast)))

    @classmethod
    def from_csv(cls, path: str | Path) -> "Forecast":
        rows = _read_rows(path, FORECAST_HEADER)
        return cls([parse_time(r["t"]) for r in rows], *[[float(r[k]) for r in rows]
                                                         for k in ("rain", "wind_v", "wind_u", "sun")])


def _read_rows(path: str | Path, header: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(header) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


class WaterDataset:
    """Gridded water-body fields with shape (time, depth, lat, lon)."""

    def __init__(self, times: Sequence[datetime], depths: Sequence[float], lats: Sequence[float],
                 lons: Sequence[float], fields: dict[str, np.ndarray], cell: tuple[float, float] | None = None):
        self.times = list(times)
        self.hours = _hours(self.times, self.times[0])
        if np.any(np.diff(self.hours) <= 0):
            raise ValueError("dataset times must be strictly increasing")
        self.depths = np.asarray(depths, dtype=float)
        self.lats = np.asarray(lats, dtype=float)
        self.lons = np.asarray(lons, dtype=float)
        shape = (len(self.times), len(self.depths), len(self.lats), len(self.lons))
        self.fields = {}
        for name in WATER_FIELDS:
            arr = np.asarray(fields[name], dtype=float)
            if arr.shape != shape:
                raise ValueError(f"field {name} has shape {arr.shape}, expected {shape}")
            self.fields[name] = arr
        if cell is None:
            cell = (_spacing(self.lats), _spacing(self.lons))
        self.cell = cell

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        dlat, dlon = self.cell
        return (self.lats[0] - dlat / 2, self.lats[-1] + dlat / 2,
                self.lons[0] - dlon / 2, self.lons[-1] + dlon / 2)

    def covers(self, t: datetime, lat: float, lon: float) -> bool:
        lat0, lat1, lon0, lon1 = self.bounds
        return self.times[0] <= t <= self.times[-1] and lat0 <= lat <= lat1 and lon0 <= lon <= lon1

    def cell_index(self, lat: float, lon: float) -> tuple[int, int]:
        lat0, lat1, lon0, lon1 = self.bounds
        if not lat0 <= lat <= lat1:
            raise SamplingError(f"latitude {lat} outside [{lat0}, {lat1}]")
        if not lon0 <= lon <= lon1:
            raise SamplingError(f"longitude {lon} outside [{lon0}, {lon1}]")
        return int(np.argmin(np.abs(self.lats - lat))), int(np.argmin(np.abs(self.lons - lon)))

    def sample(self, t: datetime, lat: float, lon: float, depth: float = 0.0) -> WaterBodyRecord:
        if not self.times[0] <= t <= self.times[-1]:
            raise SamplingError(
                f"time {format_time(t)} outside [{format_time(self.times[0])}, {format_time(self.times[-1])}]"
            )
        iy, ix = self.cell_index(lat, lon)
        iz = int(np.argmin(np.abs(self.depths - depth)))
        i, j, w = _bracket(self.hours, (t - self.times[0]).total_seconds() / 3600.0)
        vals = {}
        for name, arr in self.fields.items():
            a = arr[i, iz, iy, ix]
            vals[name] = float(a) if w == 0.0 else float(a + w * (arr[j, iz, iy, ix] - a))
        return WaterBodyRecord(t, float(self.lats[iy]), float(self.lons[ix]), float(self.depths[iz]),
                               vals["wfv"], vals["wfu"], vals["tem"], vals["dox"], vals["nox"], vals["bloom"])

    def records(self) -> Iterator[WaterBodyRecord]:
        f = self.fields
        for k, t in enumerate(self.times):
            for iz, d in enumerate(self.depths):
                for iy, la in enumerate(self.lats):
                    for ix, lo in enumerate(self.lons):
                        yield WaterBodyRecord(t, float(la), float(lo), float(d),
                                              *(float(f[n][k, iz, iy, ix]) for n in WATER_FIELDS))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(WATER_HEADER)
            for r in self.records():
                w.writerow((format_time(r.t), _fmt(r.lat), _fmt(r.lon), _fmt(r.depth), _fmt(r.wfv),
                            _fmt(r.wfu), _fmt(r.tem), _fmt(r.dox), _fmt(r.nox), _fmt(r.bloom_density)))

    @classmethod
    def from_csv(cls, path: str | Path) -> "WaterDataset":
        rows = _read_rows(path, WATER_HEADER)
        times = sorted({parse_time(r["t"]) for r in rows})
        depths = sorted({float(r["depth"]) for r in rows}, reverse=True)
        lats = sorted({float(r["lat"]) for r in rows})
        lons = sorted({float(r["lon"]) for r in rows})
        ti = {t: i for i, t in enumerate(times)}
        di = {d: i for i, d in enumerate(depths)}
        yi = {v: i for i, v in enumerate(lats)}
        xi = {v: i for i, v in enumerate(lons)}
        shape = (len(times), len(depths), len(lats), len(lons))
        fields = {n: np.full(shape, np.nan) for n in WATER_FIELDS}
        for r in rows:
            idx = (ti[parse_time(r["t"])], di[float(r["depth"])], yi[float(r["lat"])], xi[float(r["lon"])])
            for n in WATER_FIELDS:
                fields[n][idx] = float(r[n])
        for n, arr in fields.items():
            if np.isnan(arr).any():
                raise ValueError(f"{path}: incomplete grid, field {n} has missing cells")
        return cls(times, depths, lats, lons, fields)


def _spacing(values: np.ndarray) -> float:
    return float(np.min(np.diff(values))) if len(values) > 1 else 0.0


@dataclass
class Environment:
    """Everything the edge models need to read the world: water, sun and weather."""

    water: WaterDataset | None = None
    irradiance: IrradianceSeries | None = None
    forecast: Forecast | None = None

    def sample(self, t: datetime, lat: float, lon: float, depth: float = 0.0) -> WaterBodyRecord:
        if self.water is None:
            raise SamplingError("no water dataset loaded")
        return self.water.sample(t, lat, lon, depth)

    def sun(self, t: datetime, lat: float | None = None, lon: float | None = None) -> float:
        if self.irradiance is None:
            raise SamplingError("no irradiance series loaded")
        return self.irradiance.sample(t)


def sample_environment(env: Environment | WaterDataset, t: datetime, lat: float, lon: float,
                       depth: float = 0.0) -> WaterBodyRecord:
    return env.sample(t, lat, lon, depth)


# --- synthetic scenario -----------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    lat0: float = 47.490   # centre of the south-west cell
    lon0: float = -122.235
    ny: int = 11
    nx: int = 11
    spacing: float = 0.002  # degrees

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + self.spacing * np.arange(self.ny)

    @property
    def lons(self) -> np.ndarray:
        return self.lon0 + self.spacing * np.arange(self.nx)

    @property
    def ref_lat(self) -> float:
        return self.lat0 + self.spacing * (self.ny - 1) / 2


@dataclass(frozen=True)
class IncubatorSpec:
    lat: float = 47.496
    lon: float = -122.229
    radius: float = 0.004  # std-dev of the nitrate footprint, degrees


@dataclass(frozen=True)
class RainEpisode:
    start: float     # hours from scenario start
    duration: float  # hours
    rate: float      # mm/h

    def rate_at(self, h: float) -> float:
        return self.rate if self.start <= h < self.start + self.duration else 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    start: datetime = datetime(2008, 8, 23)
    days: float = 7.0
    cadence: int = 1800  # seconds between records
    substeps: int = 6
    grid: GridSpec = GridSpec()
    incubator: IncubatorSpec = IncubatorSpec()
    rain: tuple[RainEpisode, ...] | None = None  # None draws episodes from the seed
    rain_probability: float = 0.3
    rain_rate: tuple[float, float] = (3.0, 8.0)
    rain_hours: tuple[float, float] = (1.0, 4.0)
    sunrise: float = 6.0
    sunset: float = 20.0
    cloudiness: tuple[float, float] = (0.6, 1.0)
    wind_speed: tuple[float, float] = (2.0, 6.0)
    k_wind: float = 0.03
    current_noise: float = 0.003  # m/s
    advection: bool = True
    plume_drift: float = 0.05  # share of the water velocity that carries the nitrate plume
    initial_plume: float = 0.0  # sediment units at the incubator at t=0
    sediment: SedimentParams = SedimentParams()
    bloom: BloomParams = BloomParams()
    bloom_width: float = 0.003  # degrees
    growth_noise: float = 0.05
    tem_mean: float = 19.0
    tem_amplitude: float = 1.5
    tem_noise: float = 0.1
    dox_base: float = 8.0
    dox_amplitude: float = 0.5
    dox_bloom: float = 2.0

    @property
    def end(self) -> datetime:
        return self.start + timedelta(days=self.days)


def sun_curve(hour_of_day: np.ndarray | float, sunrise: float, sunset: float) -> np.ndarray:
    """Clamped half-sine between sunrise and sunset, 0 at night, peak 1."""
    h = np.asarray(hour_of_day, dtype=float)
    x = (h - sunrise) / (sunset - sunrise)
    return np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)


@dataclass
class SyntheticScenario:
    spec: SyntheticSpec
    seed: int
    water: WaterDataset
    irradiance: IrradianceSeries
    forecast: Forecast
    track: TimeSeries           # ground-truth bloom: r, lat, lon
    plume_mass: np.ndarray      # total plume tracer over the grid at each record
    rain: tuple[RainEpisode, ...] = field(default_factory=tuple)

    @property
    def environment(self) -> Environment:
        return Environment(self.water, self.irradiance, self.forecast)

    def daily_truth(self, threshold: float | None = None) -> list[tuple[date, bool, float, float]]:
        """Per full day: (date, bloom above threshold, lat drift, lon drift) of the truth track."""
        thr = self.spec.bloom.detect_threshold if threshold is None else threshold
        return daily_summary(self.track.times, self.track.columns["r"], self.track.columns["lat"],
                             self.track.columns["lon"], thr)

    def write(self, directory: str | Path, prefix: str = "synthetic") -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "water": d / f"{prefix}_water.csv",
            "irradiance": d / f"{prefix}_irradiance.csv",
            "forecast": d / f"{prefix}_forecast.csv",
            "truth": d / f"{prefix}_truth.csv",
        }
        self.water.to_csv(paths["water"])
        self.irradiance.to_csv(paths["irradiance"])
        self.forecast.to_csv(paths["forecast"])
        with open(paths["truth"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACK_HEADER)
            c = self.track.columns
            for i, t in enumerate(self.track.times):
                w.writerow((format_time(t), _fmt(c["r"][i]), _fmt(c["lat"][i]), _fmt(c["lon"][i])))
        return paths


def daily_summary(times: Sequence[datetime], r, lat, lon, threshold: float):
    """Group a track by calendar day; only days fully covered by the samples are kept."""
    out = []
    days: dict[date, list[int]] = {}
    for i, t in enumerate(times):
        days.setdefault(t.date(), []).append(i)
    for d, idx in days.items():
        if times[idx[0]].time() != datetime.min.time():
            continue
        if times[idx[-1]] - times[idx[0]] < timedelta(hours=23):
            continue
        bloom = bool(max(r[i] for i in idx) >= threshold)
        out.append((d, bloom, float(lat[idx[-1]] - lat[idx[0]]), float(lon[idx[-1]] - lon[idx[0]])))
    return out


def _draw_rain(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[RainEpisode, ...]:
    episodes = []
    for d in range(int(math.ceil(spec.days))):
        # always draw the same number of variates per day so streams stay aligned
        u, start, dur, rate = rng.random(), rng.uniform(0, 20), rng.uniform(*spec.rain_hours), rng.uniform(*spec.rain_rate)
        if u < spec.rain_probability:
            episodes.append(RainEpisode(24.0 * d + start, dur, rate))
    return tuple(episodes)


def _advect(c: np.ndarray, v_cells: float, u_cells: float) -> np.ndarray:
    """One explicit upwind step in flux form; v/u are Courant numbers (cells per step).

    Mass leaving through the domain edge is lost; nothing enters from outside.
    """
    out = c.copy()
    if v_cells:
        flux = abs(v_cells) * c
        if v_cells > 0:
            out -= flux
            out[1:, :] += flux[:-1, :]
        else:
            out -= flux
            out[:-1, :] += flux[1:, :]
        c = out
        out = c.copy()
    if u_cells:
        flux = abs(u_cells) * c
        if u_cells > 0:
            out -= flux
            out[:, 1:] += flux[:, :-1]
        else:
            out -= flux
            out[:, :-1] += flux[:, 1:]
    return out


def generate_synthetic_scenario(seed: int, spec: SyntheticSpec | None = None) -> SyntheticScenario:
    """Build a deterministic synthetic lake: sun, weather, currents, nitrates and a bloom.

    The nitrate plume is a tracer released at the incubator at a rate
    proportional to rainfall, decaying with time constant ``sediment.tau`` and
    carried by a fraction of the water velocity. The ground-truth bloom is a
    single patch whose density follows growth from sun*nitrate and
    oxygen*nitrate with relaxation to the background level, perturbed by
    multiplicative growth noise; the patch drifts with a fraction ``bloom.Kv``
    of the water velocity and is re-seeded at the incubator every midnight.
    """
    spec = spec or SyntheticSpec()
    g, inc, bp, sp = spec.grid, spec.incubator, spec.bloom, spec.sediment
    if spec.days <= 0:
        raise GenerationError("duration must be positive")
    if g.ny < 1 or g.nx < 1 or g.spacing <= 0:
        raise GenerationError("grid needs at least one cell and a positive spacing")
    if spec.advection and g.ny * g.nx == 1:
        raise GenerationError("advection needs more than one grid cell")
    if spec.cadence <= 0 or spec.substeps < 1:
        raise GenerationError("cadence and substeps must be positive")

    rng = np.random.default_rng(seed)
    n_days = int(math.ceil(spec.days))
    cloud = rng.uniform(*spec.cloudiness, size=n_days)
    wind_speed = rng.uniform(*spec.wind_speed, size=n_days)
    wind_dir = rng.uniform(0, 2 * np.pi, size=n_days)
    rain = spec.rain if spec.rain is not None else _draw_rain(spec, rng)

    n = int(round(spec.days * 86400 / spec.cadence)) + 1
    times = [spec.start + timedelta(seconds=spec.cadence * k) for k in range(n)]
    hours = np.arange(n) * spec.cadence / 3600.0
    day_idx = np.minimum((hours // 24).astype(int), n_days - 1)
    hod = np.array([t.hour + t.minute / 60 + t.second / 3600 for t in times])

    sun = cloud[day_idx] * sun_curve(hod, spec.sunrise, spec.sunset)
    wind_v = wind_speed[day_idx] * np.cos(wind_dir[day_idx])
    wind_u = wind_speed[day_idx] * np.sin(wind_dir[day_idx])
    rain_rate = np.array([sum(ep.rate_at(h) for ep in rain) for h in hours])
    noise_v = rng.normal(0, spec.current_noise, size=n)
    noise_u = rng.normal(0, spec.current_noise, size=n)
    wfv = spec.k_wind * wind_v + noise_v
    wfu = spec.k_wind * wind_u + noise_u
    tem = spec.tem_mean + spec.tem_amplitude * np.sin(2 * np.pi * (hod - 9) / 24) + rng.normal(0, spec.tem_noise, size=n)
    dox_base = spec.dox_base + spec.dox_amplitude * np.sin(2 * np.pi * (hod - 9) / 24)
    growth_eps = rng.normal(0, spec.growth_noise, size=n)

    lats, lons = g.lats, g.lons
    LAT, LON = np.meshgrid(lats, lons, indexing="ij")
    mlat, mlon = M_PER_DEG_LAT, m_per_deg_lon(g.ref_lat)
    d2 = ((LAT - inc.lat) * mlat) ** 2 + ((LON - inc.lon) * mlon) ** 2
    footprint = np.exp(-d2 / (2 * (inc.radius * mlat) ** 2))

    def bloom_shape(blat, blon):
        dd = ((LAT - blat) * mlat) ** 2 + ((LON - blon) * mlon) ** 2
        return np.exp(-dd / (2 * (spec.bloom_width * mlat) ** 2))

    shape = (n, 1, g.ny, g.nx)
    fields = {k: np.zeros(shape) for k in WATER_FIELDS}
    plume = np.zeros((g.ny, g.nx))
    if spec.initial_plume:
        plume += spec.initial_plume * footprint
    r, blat, blon = bp.r0, inc.lat, inc.lon
    track_r, track_lat, track_lon = np.zeros(n), np.zeros(n), np.zeros(n)
    plume_mass = np.zeros(n)
    decay = 1.0 / sp.tau if math.isfinite(sp.tau) else 0.0

    for k in range(n):
        if k > 0:
            dt_h = (hours[k] - hours[k - 1])
            sub = spec.substeps
            # Courant numbers of the plume per substep
            cv = spec.plume_drift * wfv[k - 1] * 3600 * dt_h / (mlat * g.spacing)
            cu = spec.plume_drift * wfu[k - 1] * 3600 * dt_h / (mlon * g.spacing)
            sub = max(sub, int(math.ceil((abs(cv) + abs(cu)) / 0.5))) if spec.advection else sub
            h_s = dt_h / sub
            for s in range(sub):
                h_now = hours[k - 1] + s * h_s
                src = sp.gain * sum(ep.rate_at(h_now) for ep in rain)
                plume = plume + h_s * (src * footprint - decay * plume)
                if spec.advection:
                    plume = _advect(plume, cv / sub, cu / sub)
                iy = int(np.argmin(np.abs(lats - blat)))
                ix = int(np.argmin(np.abs(lons - blon)))
                nox_b = sp.nox_base + sp.nox_scale * plume[iy, ix]
                hd = (hod[k - 1] + s * h_s * 1.0)
                sun_b = cloud[day_idx[k - 1]] * float(sun_curve(hd % 24, spec.sunrise, spec.sunset))
                dox_b = dox_base[k - 1] + spec.dox_bloom * max(r - bp.r0, 0.0)
                growth = (bp.K1 * sun_b * nox_b + bp.K2 * dox_b * nox_b) * (1 + growth_eps[k - 1])
                r = max(0.0, r + h_s * (growth - bp.K3 * (r - bp.r0)))
                dlat = wfv[k - 1] * 3600 / mlat
                dlon = wfu[k - 1] * 3600 / mlon
                blat += h_s * bp.Kv * dlat
                blon += h_s * bp.Kv * dlon
            if times[k].time() == datetime.min.time():
                blat, blon = inc.lat, inc.lon
        shape_b = bloom_shape(blat, blon)
        bloom = bp.r0 + (r - bp.r0) * shape_b
        fields["wfv"][k, 0] = wfv[k]
        fields["wfu"][k, 0] = wfu[k]
        fields["tem"][k, 0] = tem[k]
        fields["nox"][k, 0] = sp.nox_base + sp.nox_scale * plume
        fields["bloom"][k, 0] = np.maximum(bloom, 0.0)
        fields["dox"][k, 0] = np.maximum(dox_base[k] + spec.dox_bloom * np.maximum(bloom - bp.r0, 0.0), 0.0)
        track_r[k], track_lat[k], track_lon[k] = r, blat, blon
        plume_mass[k] = float(plume.sum())

    water = WaterDataset(times, [0.0], lats, lons, fields, cell=(g.spacing, g.spacing))
    irr = IrradianceSeries(times, np.clip(sun, 0, 1), float(lats.mean()), float(lons.mean()))
    fc = Forecast(times, rain_rate, wind_v, wind_u, np.clip(sun, 0, 1))
    track = TimeSeries(times, r=track_r, lat=track_lat, lon=track_lon)
    return SyntheticScenario(spec, seed, water, irr, fc, track, plume_mass, tuple(rain))
