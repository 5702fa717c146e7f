"""Parallel DEVS abstract simulator: virtual-time, parallel and paced coordinators."""

from __future__ import annotations

import copy
import heapq
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Callable, Iterable

from .core import (
    INFINITY,
    US_PER_SECOND,
    Atomic,
    Coupled,
    Model,
    Port,
    StructureError,
    add_time,
    to_seconds,
    to_us,
)

log = logging.getLogger(__name__)

VIRTUAL = "virtual"
REALTIME = "realtime"
HYBRID = "hybrid"
MODES = (VIRTUAL, REALTIME, HYBRID)

ZENO_LIMIT = 10_000


class SimulationError(RuntimeError):
    """A model raised inside one of its DEVS functions."""

    def __init__(self, path: str, t: int, cause: BaseException):
        super().__init__(f"{path} failed at t={to_seconds(t):.6f}s: {cause!r}")
        self.path = path
        self.time = t
        self.__cause__ = cause


class ZenoError(RuntimeError):
    """Virtual time stopped advancing for too many consecutive cycles."""


@dataclass
class SimulationClock:
    """Virtual clock settings; times are integer microseconds from ``epoch``."""

    mode: str = VIRTUAL
    scale: float = 1.0
    t_now: int = 0
    t_end: int = INFINITY
    epoch: datetime | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown clock mode {self.mode!r}")
        if self.mode != VIRTUAL and not self.scale > 0:
            raise ValueError("scale must be positive in realtime/hybrid mode")
        if self.t_end < self.t_now:
            raise ValueError("t_end precedes t_now")

    @classmethod
    def from_seconds(cls, t_end: float = float("inf"), t_now: float = 0.0, **kw) -> "SimulationClock":
        return cls(t_now=to_us(t_now), t_end=to_us(t_end), **kw)

    def to_datetime(self, t: int) -> datetime:
        if self.epoch is None:
            raise ValueError("clock has no epoch")
        return self.epoch + timedelta(microseconds=t)

    def to_virtual(self, when: datetime) -> int:
        if self.epoch is None:
            raise ValueError("clock has no epoch")
        delta = when - self.epoch
        return (delta.days * 86400 + delta.seconds) * US_PER_SECOND + delta.microseconds


@dataclass(frozen=True)
class TraceRecord:
    time: int
    source: str
    port: str
    value: Any

    def line(self) -> str:
        return f"{self.time}\t{self.source}\t{self.port}\t{self.value!r}"


@dataclass
class SimulationReport:
    final_time: int
    event_count: int
    transitions: dict[str, dict[str, int]]
    rejected: list[tuple[Any, str]] = field(default_factory=list)

    def total(self, kind: str) -> int:
        return sum(c[kind] for c in self.transitions.values())


class _AtomicSim:
    __slots__ = ("model", "path", "tl", "tn", "counts")

    def __init__(self, model: Atomic):
        self.model = model
        self.path = model.path
        self.tl = 0
        self.tn = INFINITY
        self.counts = {"int": 0, "ext": 0, "con": 0}

    def _ta(self, t: int) -> int:
        return add_time(t, to_us(self.model.ta()))

    def initialize(self, t: int) -> None:
        try:
            self.model.initialize()
            self.tl = t
            self.tn = self._ta(t)
        except Exception as exc:
            raise SimulationError(self.path, t, exc) from exc

    def lambdaf(self, t: int) -> None:
        try:
            self.model.lambdaf()
        except Exception as exc:
            raise SimulationError(self.path, t, exc) from exc

    def deltfcn(self, t: int) -> None:
        m = self.model
        try:
            if m.inputs_empty():
                if t != self.tn:
                    return
                kind = "int"
                m.deltint()
            elif t == self.tn:
                kind = "con"
                m.deltcon()
            else:
                kind = "ext"
                m.deltext(to_seconds(t - self.tl))
            self.tl = t
            self.tn = self._ta(t)
        except Exception as exc:
            raise SimulationError(self.path, t, exc) from exc
        finally:
            m.clear_inputs()
        self.counts[kind] += 1


class _CoupledSim:
    def __init__(self, model: Coupled, executor: ThreadPoolExecutor | None):
        self.model = model
        self.executor = executor
        self.children: list[_AtomicSim | _CoupledSim] = []
        for comp in model.components.values():
            if isinstance(comp, Coupled):
                self.children.append(_CoupledSim(comp, executor))
            elif isinstance(comp, Atomic):
                self.children.append(_AtomicSim(comp))
            else:
                raise StructureError(f"{comp!r} is neither atomic nor coupled")
        self.eic = [c for c in model.couplings if c.kind == "EIC"]
        self.routes = [c for c in model.couplings if c.kind != "EIC"]
        self.tn = INFINITY

    def _run(self, fn: Callable[[Any], None], sims: list) -> None:
        if self.executor is not None and len(sims) > 1:
            # list() re-raises the first worker exception after the barrier
            list(self.executor.map(fn, sims))
        else:
            for s in sims:
                fn(s)

    def walk_atomics(self):
        for ch in self.children:
            if isinstance(ch, _CoupledSim):
                yield from ch.walk_atomics()
            else:
                yield ch

    def initialize(self, t: int) -> None:
        for ch in self.children:
            ch.initialize(t)
        self.tn = min((ch.tn for ch in self.children), default=INFINITY)

    def lambdaf(self, t: int, imminent: list) -> None:
        atoms = []
        for ch in self.children:
            if ch.tn != t:
                continue
            if isinstance(ch, _CoupledSim):
                ch.lambdaf(t, imminent)
            else:
                atoms.append(ch)
        self._run(lambda s: s.lambdaf(t), atoms)
        imminent.extend(atoms)
        for c in self.routes:
            if c.src._bag:
                c.dst._receive(c.src._bag)

    def deltfcn(self, t: int) -> None:
        for c in self.eic:
            if c.src._bag:
                c.dst._receive(c.src._bag)
        atoms = []
        for ch in self.children:
            if ch.tn != t and ch.model.inputs_empty():
                continue
            if isinstance(ch, _CoupledSim):
                ch.deltfcn(t)
            else:
                atoms.append(ch)
        self._run(lambda s: s.deltfcn(t), atoms)
        self.model.clear_inputs()
        self.tn = min((ch.tn for ch in self.children), default=INFINITY)


class _SinkBuffer:
    """Collects the records of one virtual instant (possibly several zero-time
    cycles) and hands them to the sinks sorted by (path, port) once time moves on."""

    def __init__(self, sinks: Iterable):
        self.sinks = list(sinks)
        self.time = None
        self.records: list[TraceRecord] = []

    def add(self, records: list[TraceRecord]) -> None:
        if not records:
            return
        if records[0].time != self.time:
            self.flush()
            self.time = records[0].time
        self.records.extend(records)

    def flush(self) -> None:
        self.records.sort(key=lambda r: (r.source, r.port))
        for rec in self.records:
            for sink in self.sinks:
                sink.append(rec)
        self.records = []


def _all_out_ports(model: Model) -> list[Port]:
    ports = list(model.out_ports.values())
    if isinstance(model, Coupled):
        for comp in model.components.values():
            ports.extend(_all_out_ports(comp))
    return ports


class Coordinator:
    """Root coordinator executing the Parallel DEVS protocol on a coupled model.

    With ``parallel=True`` the output and transition functions of the atomic
    children of each coupled model run on a thread pool, with a barrier before
    routing. Results are identical to the sequential run.
    """

    def __init__(self, root: Coupled, parallel: bool = False, max_workers: int | None = None,
                 zeno_limit: int = ZENO_LIMIT):
        if not isinstance(root, Coupled):
            raise StructureError("the root model must be a coupled model")
        root.validate()
        self.root = root
        self.executor = ThreadPoolExecutor(max_workers=max_workers) if parallel else None
        self.sim = _CoupledSim(root, self.executor)
        self.atomics = list(self.sim.walk_atomics())
        self.out_ports = _all_out_ports(root)
        self.zeno_limit = zeno_limit
        self.t_now = 0
        self.event_count = 0
        self._last = None
        self._stalled = 0

    @property
    def tn(self) -> int:
        return self.sim.tn

    def initialize(self, t: int = 0) -> None:
        self.t_now = t
        self.sim.initialize(t)

    def cycle(self, t: int, injected: dict[str, list] | None = None) -> list[TraceRecord]:
        """Execute one simulation cycle at virtual time ``t``.

        ``injected`` maps root input port names to values delivered at ``t``.
        """
        if t < self.t_now:
            raise ValueError(f"cycle at {t} precedes current time {self.t_now}")
        if t > self.sim.tn and not injected:
            raise ValueError(f"nothing scheduled at {t}")
        if t == self._last:
            self._stalled += 1
            if self._stalled > self.zeno_limit:
                raise ZenoError(
                    f"virtual time stuck at {to_seconds(t)}s for {self._stalled} consecutive cycles"
                )
        else:
            self._stalled = 0
        self._last = t

        imminent: list[_AtomicSim] = []
        if t == self.sim.tn:
            self.sim.lambdaf(t, imminent)
        records = []
        for s in sorted(imminent, key=lambda s: s.path):
            for pname in sorted(s.model.out_ports):
                for v in s.model.out_ports[pname].values:
                    records.append(TraceRecord(t, s.path, pname, v))
        for pname, values in (injected or {}).items():
            self.root.in_ports[pname].extend(values)
        self.sim.deltfcn(t)
        for p in self.out_ports:
            if p._bag:
                p.clear()
        self.t_now = t
        self.event_count += len(records)
        return records

    def run(self, t_end: int = INFINITY, sinks: Iterable = ()) -> None:
        out = _SinkBuffer(sinks)
        while self.sim.tn < INFINITY and self.sim.tn <= t_end:
            out.add(self.cycle(self.sim.tn))
        out.flush()

    def finish(self) -> None:
        for s in self.atomics:
            s.model.exit()
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None

    def report(self, rejected=None) -> SimulationReport:
        return SimulationReport(
            final_time=self.t_now,
            event_count=self.event_count,
            transitions={s.path: dict(s.counts) for s in self.atomics},
            rejected=list(rejected or []),
        )


def simulate(root: Coupled, clock: SimulationClock | None = None, sinks: Iterable = (),
             parallel: bool = False, zeno_limit: int = ZENO_LIMIT) -> SimulationReport:
    """Run ``root`` in virtual time from ``clock.t_now`` until ``clock.t_end`` or quiescence.

    Every output produced by an atomic model is appended to each sink as a
    :class:`TraceRecord`, ordered by (time, component path, port name).
    """
    clock = clock or SimulationClock()
    coord = Coordinator(root, parallel=parallel, zeno_limit=zeno_limit)
    try:
        coord.initialize(clock.t_now)
        coord.run(clock.t_end, sinks)
    finally:
        coord.finish()
    return coord.report()


def _default_route(event) -> str:
    return f"d_{event.source}"


def run_paced(root: Coupled, clock: SimulationClock, injector=None, sinks: Iterable = (),
              parallel: bool = False, route: Callable[[Any], str] = _default_route,
              zeno_limit: int = ZENO_LIMIT) -> SimulationReport:
    """Run ``root`` paced against the wall clock, accepting injected events.

    Virtual time advances ``clock.scale`` times faster than wall time. Items
    taken from ``injector`` must expose ``timestamp`` (datetime) and are
    delivered to the root input port named by ``route(item)`` at their
    timestamp. Items stamped before the last processed instant are rejected.
    """
    if clock.mode == VIRTUAL:
        return simulate(root, clock, sinks, parallel=parallel, zeno_limit=zeno_limit)
    out = _SinkBuffer(sinks)
    coord = Coordinator(root, parallel=parallel, zeno_limit=zeno_limit)
    pending: list[tuple[int, int, str, Any]] = []
    rejected: list[tuple[Any, str]] = []
    seq = 0

    def reject(item, reason):
        log.warning("rejected injection %r: %s", item, reason)
        rejected.append((item, reason))

    try:
        coord.initialize(clock.t_now)
        v0 = clock.t_now
        wall0 = time.perf_counter()
        while True:
            t_next = min(coord.tn, pending[0][0] if pending else INFINITY)
            horizon = min(t_next, clock.t_end)
            if horizon >= INFINITY:
                if injector is None or injector.closed:
                    break
                timeout = None
            else:
                target = wall0 + (horizon - v0) / US_PER_SECOND / clock.scale
                timeout = max(0.0, target - time.perf_counter())

            item = None
            if injector is not None and not injector.closed:
                item = injector.get(timeout)
            elif timeout:
                time.sleep(timeout)

            if item is not None:
                try:
                    tv = clock.to_virtual(item.timestamp)
                except Exception as exc:
                    reject(item, f"bad timestamp: {exc}")
                    continue
                port = route(item)
                if tv < coord.t_now or tv < clock.t_now:
                    reject(item, "causality violation: timestamp before current virtual time")
                elif tv > clock.t_end:
                    reject(item, "timestamp beyond the end of the run")
                elif port not in root.in_ports:
                    reject(item, f"no root input port {port!r}")
                else:
                    heapq.heappush(pending, (tv, seq, port, item))
                    seq += 1
                continue

            if injector is not None and injector.closed and horizon >= INFINITY:
                break
            if t_next > clock.t_end:
                if clock.t_end < INFINITY:
                    coord.t_now = max(coord.t_now, clock.t_end)
                break
            if time.perf_counter() < wall0 + (t_next - v0) / US_PER_SECOND / clock.scale:
                continue  # woke up early (injector closed); wait again
            injected: dict[str, list] = {}
            while pending and pending[0][0] == t_next:
                _, _, port, it = heapq.heappop(pending)
                injected.setdefault(port, []).append(it)
            out.add(coord.cycle(t_next, injected))
        out.flush()
    finally:
        coord.finish()
    return coord.report(rejected)


def flatten(root: Coupled, copy_models: bool = True) -> Coupled:
    """Return an equivalent single-level coupled model.

    Atomic components are renamed after their path relative to ``root``
    (``"fog.gcs"``), so traces of the flat model carry the same source paths
    as the original. Chains of EIC/EOC couplings are collapsed into direct
    couplings; parallel routes are kept as duplicate couplings.
    """
    if copy_models:
        root = copy.deepcopy(root)
    root.validate()
    by_src: dict[int, list] = {}

    def index(c: Coupled):
        for cp in c.couplings:
            by_src.setdefault(id(cp.src), []).append(cp.dst)
        for comp in c.components.values():
            if isinstance(comp, Coupled):
                index(comp)

    index(root)

    def sinks(port: Port) -> list[Port]:
        owner = port.parent
        if port.direction == "in" and isinstance(owner, Atomic):
            return [port]
        if port.direction == "out" and owner is root:
            return [port]
        out = []
        for dst in by_src.get(id(port), []):
            out.extend(sinks(dst))
        return out

    atomics = list(root.atomics())
    flat = Coupled(root.name)
    for name, p in root.in_ports.items():
        flat.in_ports[name] = p
    for name, p in root.out_ports.items():
        flat.out_ports[name] = p
    rel = {}
    for a in atomics:
        rel[id(a)] = a.path[len(root.name) + 1:]
    edges = []
    for p in root.in_ports.values():
        edges.extend((p, d) for d in sinks(p))
    for a in atomics:
        for p in a.out_ports.values():
            edges.extend((p, d) for d in sinks(p))
    for a in atomics:
        a.parent = None
        flat.add_component(a, key=rel[id(a)])
    for p in list(root.in_ports.values()) + list(root.out_ports.values()):
        p.parent = flat
    for src, dst in edges:
        flat.add_coupling(src, dst)
    return flat
