"""Atomic model base with a calendar clock and an agenda of timed actions."""

from __future__ import annotations

import heapq
import math
from datetime import datetime, timedelta
from typing import Any

from .devs import Atomic, to_us
from .events import START, STOP, Event


class Clocked(Atomic):
    """Atomic model that knows the wall-calendar time of its transitions.

    Work is kept in an agenda of ``(due, seq, port, item)`` entries, with
    ``due`` in integer microseconds from ``epoch``. Entries carrying a port
    name are emitted on that port when due; entries with ``port=None`` are
    timers handed to :meth:`on_timer`.
    """

    def __init__(self, name: str, epoch: datetime):
        super().__init__(name)
        self.epoch = epoch
        self.t = 0  # microseconds since epoch
        self.running = False
        self._agenda: list[tuple[int, int, str | None, Any]] = []
        self._seq = 0

    @property
    def now(self) -> datetime:
        return self.epoch + timedelta(microseconds=self.t)

    def at(self, when: datetime) -> int:
        d = when - self.epoch
        return (d.days * 86400 + d.seconds) * 1_000_000 + d.microseconds

    def schedule(self, delay: float, port: str | None, item: Any = None) -> None:
        self.schedule_at(self.t + to_us(delay), port, item)

    def schedule_at(self, due: int, port: str | None, item: Any = None) -> None:
        if due < self.t:
            raise ValueError(f"{self.path}: cannot schedule in the past")
        heapq.heappush(self._agenda, (due, self._seq, port, item))
        self._seq += 1
        self._resched()

    def emit(self, port: str, item: Any) -> None:
        self.schedule_at(self.t, port, item)

    def clear_agenda(self) -> None:
        self._agenda.clear()
        self._resched()

    def _resched(self) -> None:
        if self._agenda:
            self.hold_in(self.phase if self.phase != "passive" else "active", (self._agenda[0][0] - self.t) / 1e6)
        else:
            self.passivate()

    def _due(self) -> int:
        return self.t + to_us(self.sigma) if self.sigma != math.inf else -1

    def lambdaf(self) -> None:
        due = self._due()
        for when, _, port, item in sorted(self._agenda):
            if when != due:
                break
            if port is not None:
                self.out_ports[port].add(item)

    def deltint(self) -> None:
        self.t = self._due()
        timers = []
        while self._agenda and self._agenda[0][0] == self.t:
            _, _, port, item = heapq.heappop(self._agenda)
            if port is None:
                timers.append(item)
        for item in timers:
            self.on_timer(item)
        self._resched()

    def deltext(self, e: float) -> None:
        self.t += to_us(e)
        for name, port in self.in_ports.items():
            for value in port.values:
                if isinstance(value, Event) and value.id in (START, STOP) and name == "cmd":
                    self.on_command(value)
                else:
                    self.on_input(name, value)
        self._resched()

    # hooks ---------------------------------------------------------------

    def on_command(self, ev: Event) -> None:
        if ev.id == START:
            self.running = True
            self.on_start()
        elif ev.id == STOP:
            self.running = False
            self.clear_agenda()
            self.on_stop()

    def on_start(self) -> None:
        pass

    def on_stop(self) -> None:
        pass

    def on_timer(self, item: Any) -> None:
        pass

    def on_input(self, port: str, value: Any) -> None:
        pass
