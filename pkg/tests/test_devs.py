import math
import threading
import time
from datetime import datetime

import pytest
from hypothesis import given, settings, strategies as st

from habsim.devs import (
    INFINITY,
    Atomic,
    Coupled,
    Injector,
    SimulationClock,
    SimulationError,
    StructureError,
    ZenoError,
    add_time,
    flatten,
    run_paced,
    simulate,
    to_us,
)

from devs_models import Collector, Delay, Generator, Recorder, pipeline, random_hierarchy


def trace_lines(records):
    return [r.line() for r in records]


def test_time_conversion():
    assert to_us(0.5) == 500_000
    assert to_us(math.inf) == INFINITY
    assert add_time(INFINITY, 5) == INFINITY
    assert add_time(10, to_us(math.inf)) == INFINITY
    with pytest.raises(ValueError):
        to_us(-1.0)
    with pytest.raises(ValueError):
        to_us(float("nan"))


def test_pipeline_hand_trace():
    # hand-executed: gen fires at 1,2,3; buffer re-emits 0.5 s later; collector passive
    root, gen, buf, col = pipeline()
    trace = []
    report = simulate(root, sinks=[trace])
    assert [(r.time, r.source, r.port, r.value) for r in trace] == [
        (1_000_000, "root.gen", "out", "gen#1"),
        (1_500_000, "root.buf", "out", "gen#1"),
        (2_000_000, "root.gen", "out", "gen#2"),
        (2_500_000, "root.buf", "out", "gen#2"),
        (3_000_000, "root.gen", "out", "gen#3"),
        (3_500_000, "root.buf", "out", "gen#3"),
    ]
    assert col.received == [(1.5, "gen#1"), (2.5, "gen#2"), (3.5, "gen#3")]
    assert report.final_time == 3_500_000
    assert report.event_count == 6
    assert report.transitions["root.col"] == {"int": 0, "ext": 3, "con": 0}
    assert report.transitions["root.gen"] == {"int": 3, "ext": 0, "con": 0}


def test_all_passive_terminates_immediately():
    root = Coupled("root")
    root.add_component(Collector("a"))
    root.add_component(Collector("b"))
    report = simulate(root, SimulationClock(t_now=7_000_000))
    assert report.final_time == 7_000_000
    assert report.event_count == 0


def test_t_end_stops_run():
    root, *_ = pipeline()
    trace = []
    report = simulate(root, SimulationClock.from_seconds(t_end=2.0), sinks=[trace])
    assert [r.time for r in trace] == [1_000_000, 1_500_000, 2_000_000]
    assert report.final_time == 2_000_000


def test_confluent_fires_alone():
    root = Coupled("root")
    gen = root.add_component(Generator("gen", [5]))
    rec = root.add_component(Recorder("rec", 5))
    root.add_coupling(gen.out, rec.inp)
    report = simulate(root)
    assert rec.calls == ["con"]
    assert report.transitions["root.rec"] == {"int": 0, "ext": 0, "con": 1}


def test_bag_holds_simultaneous_messages():
    root = Coupled("root")
    g1 = root.add_component(Generator("g1", [2]))
    g2 = root.add_component(Generator("g2", [2]))
    col = root.add_component(Collector("col"))
    root.add_coupling(g1.out, col.inp)
    root.add_coupling(g2.out, col.inp)
    simulate(root)
    assert col.received == [(2.0, "g1#1"), (2.0, "g2#1")]


def test_structure_errors():
    root = Coupled("root")
    a = root.add_component(Delay("a", 1))
    b = Delay("b", 1)
    with pytest.raises(StructureError):
        root.add_coupling(a.out, a.inp)  # self-loop
    with pytest.raises(StructureError):
        root.add_coupling(a.out, b.inp)  # b is not a component
    with pytest.raises(StructureError):
        root.add_coupling(a.inp, a.out)  # wrong directions
    with pytest.raises(StructureError):
        root.add_component(Delay("a", 2))
    with pytest.raises(StructureError):
        root.connect("a.out", "nosuch.in")
    with pytest.raises(StructureError):
        simulate(a)  # root must be coupled


class Boom(Atomic):
    def __init__(self):
        super().__init__("boom")
        self.hold_in("armed", 2.0)

    def lambdaf(self):
        pass

    def deltint(self):
        raise RuntimeError("kaput")


def test_transition_failure_reports_path_and_time():
    root = Coupled("root")
    root.add_component(Boom())
    with pytest.raises(SimulationError) as err:
        simulate(root)
    assert err.value.path == "root.boom"
    assert err.value.time == 2_000_000
    assert "2.000000s" in str(err.value)


class Spinner(Atomic):
    def __init__(self):
        super().__init__("spin")
        self.activate()

    def lambdaf(self):
        pass

    def deltint(self):
        self.activate()


def test_zeno_guard():
    root = Coupled("root")
    root.add_component(Spinner())
    with pytest.raises(ZenoError):
        simulate(root, zeno_limit=50)


def nested_three():
    # A sits two levels down, B one level down in a sibling; A -> EOC -> EOC -> IC -> EIC -> B
    root = Coupled("root")
    outer = root.add_component(Coupled("outer"))
    inner = outer.add_component(Coupled("inner"))
    a = inner.add_component(Generator("a", [1, 2]))
    inner.add_out_port("o")
    outer.add_out_port("o")
    inner.add_coupling(a.out, inner.port("o"))
    outer.add_coupling(inner.port("o"), outer.port("o"))
    side = root.add_component(Coupled("side"))
    side.add_in_port("i")
    b = side.add_component(Collector("b"))
    side.add_coupling(side.port("i"), b.inp)
    root.add_coupling(outer.port("o"), side.port("i"))
    return root


def test_flatten_collapses_chain_into_single_ic():
    flat = flatten(nested_three())
    assert sorted(flat.components) == ["outer.inner.a", "side.b"]
    assert [(c.kind, c.src.parent.key, c.src.name, c.dst.parent.key, c.dst.name) for c in flat.couplings] == [
        ("IC", "outer.inner.a", "out", "side.b", "in")
    ]


def test_flatten_does_not_touch_original():
    root = nested_three()
    flatten(root)
    assert list(root.components) == ["outer", "side"]
    assert root.components["outer"].components["inner"].components["a"].path == "root.outer.inner.a"


def test_flatten_of_flat_model_is_identity():
    root, *_ = pipeline()
    flat = flatten(root)
    assert list(flat.components) == ["gen", "buf", "col"]
    assert [(c.kind, c.src.parent.name, c.dst.parent.name) for c in flat.couplings] == [
        (c.kind, c.src.parent.name, c.dst.parent.name) for c in root.couplings
    ]


def test_flatten_trace_equal_nested():
    a, b = [], []
    simulate(nested_three(), sinks=[a])
    simulate(flatten(nested_three()), sinks=[b])
    assert trace_lines(a) == trace_lines(b)
    assert len(a) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_flatten_preserves_trace_random(seed):
    a, b = [], []
    simulate(random_hierarchy(seed), SimulationClock.from_seconds(t_end=20), sinks=[a])
    simulate(flatten(random_hierarchy(seed)), SimulationClock.from_seconds(t_end=20), sinks=[b])
    assert trace_lines(a) == trace_lines(b)


@pytest.mark.parametrize("seed", range(10))
def test_parallel_matches_sequential(seed):
    a, b = [], []
    ra = simulate(random_hierarchy(seed), SimulationClock.from_seconds(t_end=20), sinks=[a])
    rb = simulate(random_hierarchy(seed), SimulationClock.from_seconds(t_end=20), sinks=[b], parallel=True)
    assert trace_lines(a) == trace_lines(b)
    assert ra.transitions == rb.transitions


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_confluence_exclusive_and_causal(seed):
    trace = []
    report = simulate(random_hierarchy(seed), SimulationClock.from_seconds(t_end=20), sinks=[trace])
    times = [r.time for r in trace]
    assert times == sorted(times)
    keys = [(r.time, r.source, r.port) for r in trace]
    assert keys == sorted(keys)
    for counts in report.transitions.values():
        assert all(v >= 0 for v in counts.values())


class Sink(Atomic):
    def __init__(self, name="sink"):
        super().__init__(name)
        self.got = []
        self.now = 0.0
        self.inp = self.add_in_port("in")

    def deltext(self, e):
        self.now += e
        self.got.extend((self.now, v) for v in self.inp.values)
        self.passivate()

    def deltint(self):
        self.passivate()

    def lambdaf(self):
        pass


class Stamped:
    def __init__(self, source, timestamp):
        self.source = source
        self.timestamp = timestamp


def hil_root():
    root = Coupled("root")
    root.add_in_port("d_hw")
    s = root.add_component(Sink())
    root.add_coupling(root.port("d_hw"), s.inp)
    root.add_component(Generator("tick", [600.0 * k for k in range(1, 4)]))
    return root, s


def test_paced_run_wall_duration():
    root, _ = hil_root()
    epoch = datetime(2008, 8, 23)
    clock = SimulationClock(mode="realtime", scale=18000.0, t_end=to_us(1800), epoch=epoch)
    t0 = time.perf_counter()
    report = run_paced(root, clock)
    wall = time.perf_counter() - t0
    assert abs(wall - 0.1) <= 0.01
    assert report.final_time == to_us(1800)


def test_injection_wakes_coordinator():
    root, sink = hil_root()
    epoch = datetime(2008, 8, 23)
    clock = SimulationClock(mode="hybrid", scale=18000.0, t_end=to_us(1800), epoch=epoch)
    inj = Injector()
    late = Stamped("hw", datetime(2008, 8, 23, 0, 15, 0))
    inj.put(late)
    report = run_paced(root, clock, injector=inj)
    assert sink.got == [(900.0, late)]
    assert report.transitions["root.sink"]["ext"] == 1


def test_injection_in_the_past_rejected():
    root, sink = hil_root()
    epoch = datetime(2008, 8, 23)
    clock = SimulationClock(mode="hybrid", scale=18000.0, t_end=to_us(1800), epoch=epoch)
    inj = Injector()

    def later():
        time.sleep(0.06)  # ~18 virtual minutes in; the 10-minute tick has been processed
        inj.put(Stamped("hw", datetime(2008, 8, 23, 0, 5, 0)))
        inj.put(Stamped("nosuch", datetime(2008, 8, 23, 0, 29, 0)))

    threading.Thread(target=later).start()
    report = run_paced(root, clock, injector=inj)
    assert sink.got == []
    reasons = [r for _, r in report.rejected]
    assert any("causality" in r for r in reasons)
    assert any("no root input port" in r for r in reasons)


def test_virtual_mode_paced_equals_simulate():
    a, b = [], []
    root, *_ = pipeline()
    simulate(root, sinks=[a])
    root, *_ = pipeline()
    run_paced(root, SimulationClock(), sinks=[b])
    assert trace_lines(a) == trace_lines(b)


def test_clock_validation():
    with pytest.raises(ValueError):
        SimulationClock(mode="realtime", scale=0)
    with pytest.raises(ValueError):
        SimulationClock(mode="warp")
    with pytest.raises(ValueError):
        SimulationClock(t_now=5, t_end=1)
