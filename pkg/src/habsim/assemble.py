"""Builds the root coupled model from a run configuration and runs it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .cloud import Cloud, CentralLog
from .config import RunConfig
from .devs import Coupled, Injector, SimulationClock, SimulationReport, run_paced, simulate, to_us
from .edge import ScenarioSource, SensorTwin, Usv, UsvState, sun_reader, water_reader
from .environment import Environment, Forecast, IrradianceSeries, WaterDataset, generate_synthetic_scenario
from .events import EventLog, ScenarioCommand, load_scenario, parse_event_line
from .fog import Fog, build_report

log = logging.getLogger(__name__)


def load_environment(cfg: RunConfig) -> Environment:
    if cfg.data_source == "csv":
        return Environment(
            WaterDataset.from_csv(cfg.water_csv) if cfg.water_csv else None,
            IrradianceSeries.from_csv(cfg.irradiance_csv) if cfg.irradiance_csv else None,
            Forecast.from_csv(cfg.forecast_csv) if cfg.forecast_csv else None,
        )
    return generate_synthetic_scenario(cfg.seed, cfg.synthetic).environment


@dataclass
class Assembly:
    root: Coupled
    cfg: RunConfig
    commands: list[ScenarioCommand]
    env: Environment
    fog: Fog
    cloud: Cloud | None
    usv: Usv | None
    sensors: list[SensorTwin] = field(default_factory=list)
    fog_log_path: Path | None = None
    cloud_log_path: Path | None = None

    @property
    def epoch(self) -> datetime:
        return self.commands[0].at

    @property
    def stop(self) -> datetime:
        return self.commands[-1].at

    def clock(self) -> SimulationClock:
        t_end = to_us((self.stop - self.epoch).total_seconds())
        if self.cfg.until is not None:
            t_end = min(t_end, to_us(self.cfg.until))
        return SimulationClock(mode=self.cfg.mode, scale=self.cfg.scale, t_end=t_end, epoch=self.epoch)

    def close(self) -> None:
        self.fog.log.close()
        if self.cloud is not None:
            self.cloud.log.close()


def assemble(cfg: RunConfig, out_dir: Path | None = None, env: Environment | None = None) -> Assembly:
    """Wire scenario source, sensor twins, USV, fog node and cloud into one root model.

    With ``out_dir`` the fog and cloud logs are streamed to files there.
    """
    commands = load_scenario(cfg.scenario)
    env = env if env is not None else load_environment(cfg)
    epoch = commands[0].at
    fog_path = cloud_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fog_path = out_dir / f"{cfg.name}_fog.log"
        cloud_path = out_dir / f"{cfg.name}_cloud.log"
    ref_lat = cfg.synthetic.grid.ref_lat

    root = Coupled("HabSim")
    src = root.add_component(ScenarioSource(commands))
    fog = Fog(cfg.fog_name, epoch, cfg.incubator, cfg.services, cfg.bloom, EventLog(fog_path),
              usv=cfg.usv.name if cfg.usv else "USV", out_dir=out_dir, scenario=cfg.name, ref_lat=ref_lat)
    if "PLAN" in fog.services:
        fog.services["PLAN"].staleness = cfg.staleness
    root.add_component(fog)
    root.add_coupling(src.cmd, fog.port("cmd"))

    sensors = []
    for s in cfg.sensors:
        reader = sun_reader(env) if s.kind == "sun" else water_reader(env, s.kind)
        twin = root.add_component(SensorTwin(s.name, epoch, s.cfg, reader, s.lat, s.lon, s.depth, cfg.seed))
        root.add_coupling(src.cmd, twin.port("cmd"))
        root.add_coupling(twin.port("out"), fog.port("d"))
        root.add_coupling(root.add_in_port(f"d_{s.name}"), twin.port("d"))
        sensors.append(twin)

    usv = None
    if cfg.usv is not None:
        u = cfg.usv
        usv = root.add_component(Usv(u.name, epoch, env, UsvState(u.lat, u.lon, power=u.power), u.params,
                                     u.sensors, cfg.seed, ref_lat, u.sun_override))
        root.add_coupling(src.cmd, usv.port("cmd"))
        root.add_coupling(usv.port("out"), fog.port("d"))
        if "PLAN" in fog.services:
            root.add_coupling(fog.port("track"), usv.port("track"))

    cloud = None
    if cfg.cloud:
        cloud = root.add_component(Cloud("Cloud", epoch, CentralLog(cloud_path), env.forecast, cfg.incubator,
                                         cfg.bloom, cfg.sediment, cfg.k_wind, cfg.lag))
        raw, est = cloud.add_body(cfg.body)
        root.add_coupling(fog.port("d1"), cloud.port(raw))
        root.add_coupling(fog.port("d1hat"), cloud.port(est))
        root.add_coupling(src.cmd, cloud.port("cmd"))
    root.validate()
    return Assembly(root, cfg, commands, env, fog, cloud, usv, sensors, fog_path, cloud_path)


@dataclass
class RunResult:
    assembly: Assembly
    report: SimulationReport
    files: dict[str, Path]


def run(cfg: RunConfig, out_dir: Path | None = None, injector: Injector | None = None,
        env: Environment | None = None) -> RunResult:
    """Assemble and execute; in paced modes ``injector`` feeds root input ports ``d_<source>``."""
    asm = assemble(cfg, out_dir, env)
    clock = asm.clock()
    try:
        if cfg.mode == "virtual":
            report = simulate(asm.root, clock, parallel=cfg.parallel)
        else:
            report = run_paced(asm.root, clock, injector=injector, parallel=cfg.parallel)
        for item, reason in report.rejected:
            log.warning("injection rejected: %s (%r)", reason, item)
    finally:
        asm.close()
    files: dict[str, Path] = {}
    if out_dir is not None:
        if asm.fog_log_path:
            files["fog_log"] = asm.fog_log_path
        if asm.cloud_log_path:
            files["cloud_log"] = asm.cloud_log_path
        bundle = build_report(asm.fog.log.snapshot(), asm.epoch, clock.to_datetime(clock.t_end), out_dir, cfg.name)
        files.update(bundle.files)
        if asm.cloud is not None:
            for k, fc in enumerate(asm.cloud.predictions):
                path = Path(out_dir) / f"{cfg.name}_prediction{k}.csv"
                fc.to_csv(path)
                files[f"prediction{k}"] = path
    return RunResult(asm, report, files)


def make_injector() -> Injector:
    return Injector(parse=parse_event_line)
