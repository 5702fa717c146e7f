"""Parallel DEVS model building blocks: ports, atomic models and coupled models.

Atomic models keep their state as plain attributes and implement the usual
quintet of functions::

    ta()        -> seconds until the next internal transition (math.inf = passive)
    deltint()   -> internal transition
    deltext(e)  -> external transition, ``e`` seconds after the last transition
    deltcon()   -> confluent transition (internal and external at the same instant)
    lambdaf()   -> output function, called right before deltint/deltcon

Inputs are read from ``port.values`` and outputs are written with
``port.add(value)``. A port holds a bag: several values may arrive at the same
instant on the same port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterator

IN = "in"
OUT = "out"

# Largest signed 64-bit value; exceeds any reachable virtual time.
INFINITY = 2**63 - 1
US_PER_SECOND = 1_000_000


class StructureError(ValueError):
    """Raised when a model hierarchy violates a structural rule."""


def to_us(seconds: float) -> int:
    """Convert a non-negative duration in seconds to integer microseconds."""
    if seconds == math.inf:
        return INFINITY
    if not seconds >= 0:  # also rejects NaN
        raise ValueError(f"time advance must be non-negative, got {seconds!r}")
    us = int(round(seconds * US_PER_SECOND))
    return min(us, INFINITY)


def to_seconds(us: int) -> float:
    return math.inf if us >= INFINITY else us / US_PER_SECOND


def add_time(t: int, dt: int) -> int:
    """Saturating addition so that anything plus infinity stays infinity."""
    if t >= INFINITY or dt >= INFINITY:
        return INFINITY
    return min(t + dt, INFINITY)


class Port:
    """Named input or output port holding a bag of values for the current instant."""

    def __init__(self, name: str, direction: str, parent: "Model | None" = None):
        if direction not in (IN, OUT):
            raise ValueError(f"bad port direction {direction!r}")
        self.name = name
        self.direction = direction
        self.parent = parent
        # (origin key, value) pairs; origin keys give a canonical delivery order
        self._bag: list[tuple[tuple, Any]] = []
        self._sorted: list[Any] | None = None

    def __repr__(self) -> str:
        owner = self.parent.path if self.parent is not None else "?"
        return f"Port({owner}.{self.name}, {self.direction})"

    def add(self, value: Any) -> None:
        owner = self.parent.path if self.parent is not None else ""
        self._bag.append(((owner, self.name, len(self._bag)), value))
        self._sorted = None

    def extend(self, values) -> None:
        for v in values:
            self.add(v)

    def _receive(self, envelopes) -> None:
        self._bag.extend(envelopes)
        self._sorted = None

    @property
    def values(self) -> list[Any]:
        if self._sorted is None:
            self._sorted = [v for _, v in sorted(self._bag, key=lambda kv: kv[0])]
        return self._sorted

    def empty(self) -> bool:
        return not self._bag

    def clear(self) -> None:
        self._bag.clear()
        self._sorted = None

    def __len__(self) -> int:
        return len(self._bag)

    def __iter__(self) -> Iterator[Any]:
        return iter(self.values)


class Model:
    def __init__(self, name: str):
        if not name:
            raise StructureError("model name must be non-empty")
        self.name = name
        self.key = name  # name under the parent; differs from name only in flattened models
        self.parent: Coupled | None = None
        self.in_ports: dict[str, Port] = {}
        self.out_ports: dict[str, Port] = {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.path})"

    @property
    def path(self) -> str:
        if self.parent is None:
            return self.name
        return f"{self.parent.path}.{self.key}"

    def _add_port(self, name: str, direction: str) -> Port:
        if name in self.in_ports or name in self.out_ports:
            raise StructureError(f"duplicate port {name!r} on {self.path}")
        port = Port(name, direction, self)
        (self.in_ports if direction == IN else self.out_ports)[name] = port
        return port

    def add_in_port(self, name: str) -> Port:
        return self._add_port(name, IN)

    def add_out_port(self, name: str) -> Port:
        return self._add_port(name, OUT)

    def port(self, name: str) -> Port:
        if name in self.in_ports:
            return self.in_ports[name]
        if name in self.out_ports:
            return self.out_ports[name]
        raise StructureError(f"{self.path} has no port {name!r}")

    def inputs_empty(self) -> bool:
        return all(p.empty() for p in self.in_ports.values())

    def clear_inputs(self) -> None:
        for p in self.in_ports.values():
            p.clear()

    def clear_outputs(self) -> None:
        for p in self.out_ports.values():
            p.clear()


class Atomic(Model):
    """Base atomic model using the phase/sigma idiom.

    Subclasses override :meth:`deltint`, :meth:`deltext` and :meth:`lambdaf`.
    ``sigma`` is the time (seconds) left in the current phase.
    """

    def __init__(self, name: str):
        super().__init__(name)
        self.phase = "passive"
        self.sigma = math.inf

    def initialize(self) -> None:
        """Hook called once by the simulator before the first cycle."""

    def exit(self) -> None:
        """Hook called once when the simulation ends."""

    def ta(self) -> float:
        return self.sigma

    def hold_in(self, phase: str, sigma: float) -> None:
        self.phase = phase
        self.sigma = sigma

    def activate(self, phase: str = "active") -> None:
        self.hold_in(phase, 0.0)

    def passivate(self, phase: str = "passive") -> None:
        self.hold_in(phase, math.inf)

    def continue_(self, e: float) -> None:
        """Consume elapsed time ``e`` from sigma (keep the current schedule)."""
        if self.sigma != math.inf:
            self.sigma = max(0.0, self.sigma - e)

    def deltint(self) -> None:
        raise NotImplementedError

    def deltext(self, e: float) -> None:
        raise NotImplementedError

    def deltcon(self) -> None:
        self.deltint()
        self.deltext(0.0)

    def lambdaf(self) -> None:
        raise NotImplementedError


@dataclass(frozen=True)
class Coupling:
    src: Port
    dst: Port
    kind: str  # "EIC", "IC" or "EOC"

    def __repr__(self) -> str:
        return f"{self.kind}({self.src!r} -> {self.dst!r})"


class Coupled(Model):
    """Network of components connected by EIC, IC and EOC couplings."""

    def __init__(self, name: str):
        super().__init__(name)
        self.components: dict[str, Model] = {}
        self.couplings: list[Coupling] = []

    def add_component(self, model: Model, key: str | None = None) -> Model:
        key = key or model.name
        if key in self.components:
            raise StructureError(f"duplicate component {key!r} in {self.path}")
        if model.parent is not None:
            raise StructureError(f"{model.path} already belongs to a coupled model")
        model.parent = self
        model.key = key
        self.components[key] = model
        return model

    def _owned(self, port: Port) -> bool:
        owner = port.parent
        return owner is self or (owner is not None and self.components.get(owner.key) is owner)

    def add_coupling(self, src: Port, dst: Port) -> Coupling:
        """Connect two ports.

        The coupling kind is deduced from the port owners: an input port of
        this model feeding a child is an EIC, a child output feeding an output
        port of this model is an EOC, and child-to-child links are ICs.
        Duplicate couplings are kept; each one delivers its own copy.
        """
        if not self._owned(src) or not self._owned(dst):
            raise StructureError(f"coupling {src!r} -> {dst!r} references a port outside {self.path}")
        if src.parent is self and dst.parent is not self:
            kind = "EIC"
            ok = src.direction == IN and dst.direction == IN
        elif src.parent is not self and dst.parent is self:
            kind = "EOC"
            ok = src.direction == OUT and dst.direction == OUT
        elif src.parent is not self and dst.parent is not self:
            kind = "IC"
            ok = src.direction == OUT and dst.direction == IN
            if src.parent is dst.parent:
                raise StructureError(f"self-loop coupling on {src.parent.path}")
        else:
            raise StructureError(f"direct feed-through {src!r} -> {dst!r} is not allowed")
        if not ok:
            raise StructureError(f"port directions do not fit a {kind}: {src!r} -> {dst!r}")
        coupling = Coupling(src, dst, kind)
        self.couplings.append(coupling)
        return coupling

    def connect(self, src: str, dst: str) -> Coupling:
        """Shorthand taking ``"component.port"`` strings; a bare port name refers to self."""
        return self.add_coupling(self._lookup(src), self._lookup(dst))

    def _lookup(self, ref: str) -> Port:
        if "." in ref:
            comp, port = ref.split(".", 1)
            if comp not in self.components:
                raise StructureError(f"{self.path} has no component {comp!r}")
            return self.components[comp].port(port)
        return self.port(ref)

    def validate(self) -> None:
        """Re-check every coupling in the hierarchy; raise StructureError on the first problem."""
        for c in self.couplings:
            if not self._owned(c.src) or not self._owned(c.dst):
                raise StructureError(f"dangling coupling {c!r} in {self.path}")
            owner = c.src.parent
            if owner is not self and c.src.name not in owner.out_ports:
                raise StructureError(f"unknown port in {c!r}")
        for comp in self.components.values():
            if isinstance(comp, Coupled):
                comp.validate()
            elif not isinstance(comp, Atomic):
                raise StructureError(f"{comp!r} is neither atomic nor coupled")

    def atomics(self) -> Iterator[Atomic]:
        for comp in self.components.values():
            if isinstance(comp, Coupled):
                yield from comp.atomics()
            else:
                yield comp
