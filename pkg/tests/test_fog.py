import math
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from habsim.devs import Coupled, flatten, simulate
from habsim.edge import ScenarioSource
from habsim.events import Event, EventLog, parse_scenario
from habsim.fog import (
    ERR,
    HAB,
    TRK,
    WARN,
    BloomEstimate,
    Fog,
    InferenceFault,
    InferenceInputs,
    PlannerService,
    Request,
    build_report,
    inference_step,
    plan_track,
    repair_outliers,
)
from habsim.params import M_PER_DEG_LAT, BloomParams, m_per_deg_lon

T0 = datetime(2008, 8, 23)
BP = BloomParams()
INC = (47.496, -122.229)


def est(r=BP.r0, lat=47.5, lon=-122.2):
    return BloomEstimate(T0, r, lat, lon)


def test_decay_only_regime():
    e = inference_step(est(r=1.0), InferenceInputs(sun=0.0, nox=0.3, dox=0.0), 2.0)
    assert e.photo == 0 and e.breath == 0
    assert e.r == pytest.approx(BP.r0 + (1.0 - BP.r0) * math.exp(-BP.K3 * 2.0))


def test_initial_slope_matches_direct_evaluation():
    inputs = InferenceInputs(sun=1.0, nox=0.1, dox=10.0)
    dt = 1e-6
    e = inference_step(est(), inputs, dt)
    assert (e.r - BP.r0) / dt == pytest.approx(0.55, rel=1e-5)
    assert e.photo == pytest.approx(0.1) and e.breath == pytest.approx(1.0)


def test_constant_current_displacement():
    inputs = InferenceInputs(wfv=0.1, wfu=-0.05)
    e, n, dt = est(), 10, 0.5
    for _ in range(n):
        e = inference_step(e, inputs, dt, ref_lat=47.5)
    assert e.lat - 47.5 == pytest.approx(n * dt * BP.Kv * 0.1 * 3600 / M_PER_DEG_LAT, abs=1e-12)
    assert e.lon + 122.2 == pytest.approx(n * dt * BP.Kv * -0.05 * 3600 / m_per_deg_lon(47.5), abs=1e-12)


def test_equilibrium_is_fixed_point():
    e = inference_step(est(), InferenceInputs(), 0.5)
    assert e.r == BP.r0


def test_detection_flag_and_faults():
    e = inference_step(est(r=0.3), InferenceInputs(), 1e-3)
    assert e.detected == (e.r >= BP.detect_threshold)
    with pytest.raises(InferenceFault):
        inference_step(est(), InferenceInputs(sun=float("nan")), 0.5)
    with pytest.raises(InferenceFault):
        inference_step(est(), InferenceInputs(nox=-1), 0.5)
    with pytest.raises(ValueError):
        inference_step(est(), InferenceInputs(), 0.0)


finite = st.floats(-1e3, 1e3)
nonneg = st.floats(0, 1e3)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 100), finite, nonneg, nonneg, st.floats(1e-3, 48))
def test_density_never_negative(r, sun, nox, dox, dt):
    e = inference_step(est(r=r), InferenceInputs(sun=sun, nox=nox, dox=dox), dt)
    assert e.r >= 0
    assert e.detected == (e.r >= BP.detect_threshold)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 5), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 15), st.integers(1, 50))
def test_splitting_a_constant_input_step_changes_nothing(r, sun, nox, dox, k):
    inputs = InferenceInputs(sun=sun, nox=nox, dox=dox, wfv=0.1, wfu=0.1)
    whole = inference_step(est(r=r), inputs, 0.5, ref_lat=47.5)
    part = est(r=r)
    for _ in range(k):
        part = inference_step(part, inputs, 0.5 / k, ref_lat=47.5)
    assert part.r == pytest.approx(whole.r, rel=1e-9, abs=1e-12)
    assert part.lat == pytest.approx(whole.lat, abs=1e-12)


def test_plan_track():
    assert plan_track(est(lat=47.5, lon=-122.2), 47.5, -122.2) == plan_track(est(lat=47.5, lon=-122.2), 47.5, -122.2)
    cmd = plan_track(est(lat=47.5, lon=-122.2), 47.5, -122.2)
    assert (cmd.e_lat, cmd.e_lon) == (0.0, 0.0)
    cmd = plan_track(est(lat=47.51, lon=-122.21), 47.50, -122.22)
    assert cmd.e_lat == pytest.approx(0.01) and cmd.e_lon == pytest.approx(0.01)


def planner():
    p = PlannerService("Planner", T0, "USV", staleness=3600)
    p.enabled = True
    return p


def test_planner_missing_fix_warns():
    out = planner().plan(BloomEstimate(T0, 0.5, 47.5, -122.2, True))
    assert [e.id for e in out] == [WARN]


def test_planner_stale_fix_warns_and_fresh_fix_tracks():
    p = planner()
    p.fix = Event("POS", "USV", T0, {"Lat": 47.50, "Lon": -122.22})
    out = p.plan(BloomEstimate(T0 + timedelta(hours=2), 0.5, 47.5, -122.2, True))
    assert [e.id for e in out] == [WARN]
    out = p.plan(BloomEstimate(T0 + timedelta(minutes=30), 0.5, 47.51, -122.21, True))
    assert [e.id for e in out] == [TRK]
    assert out[0]["ELat"] == pytest.approx(0.01) and out[0]["Target"] == "USV"


def test_planner_latches_for_the_day():
    p = planner()
    p.fix = Event("POS", "USV", T0 + timedelta(hours=10), {"Lat": 47.5, "Lon": -122.2})
    assert p.plan(BloomEstimate(T0 + timedelta(hours=10), 0.1, 47.5, -122.2, False)) == []
    assert p.plan(BloomEstimate(T0 + timedelta(hours=10), 0.3, 47.5, -122.2, True))
    assert p.plan(BloomEstimate(T0 + timedelta(hours=10, minutes=30), 0.1, 47.5, -122.2, False))
    p.fix = Event("POS", "USV", T0 + timedelta(days=1), {"Lat": 47.5, "Lon": -122.2})
    assert p.plan(BloomEstimate(T0 + timedelta(days=1), 0.1, 47.5, -122.2, False)) == []


# --- outliers ------------------------------------------------------------------------


def series(values, step=1800):
    return [(T0 + timedelta(seconds=step * k), float(v)) for k, v in enumerate(values)]


def test_clean_linear_series_untouched():
    res = repair_outliers(series(0.5 + 0.01 * np.arange(100)))
    assert res.replacements == []


def test_single_spike_replaced():
    rng = np.random.default_rng(0)
    sigma = 0.2
    y = 8.0 + rng.normal(0, sigma, 200)
    y[100] += 10 * sigma
    res = repair_outliers(series(y), window=25, z=5)
    assert [r.t for r in res.replacements] == [T0 + timedelta(seconds=1800 * 100)]
    assert abs(res.replacements[0].value - 8.0) <= 2 * sigma


def test_missing_sample_filled_exactly():
    pts = series(2.0 + 0.5 * np.arange(40))
    del pts[17]
    res = repair_outliers(pts, window=9)
    assert len(res.replacements) == 1
    rep = res.replacements[0]
    assert rep.kind == "gap" and rep.original is None
    assert rep.t == T0 + timedelta(seconds=1800 * 17)
    assert rep.value == pytest.approx(2.0 + 0.5 * 17)
    assert len(res.series) == 40


def test_short_series_returned_unchanged():
    pts = series([1, 2, 100])
    res = repair_outliers(pts, window=5)
    assert res.series == pts and "too short" in res.notice


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 2.0), st.floats(-1, 1))
def test_repair_only_touches_flagged_points(seed, sigma, slope):
    rng = np.random.default_rng(seed)
    y = slope * np.arange(150) + rng.normal(0, sigma, 150)
    y[rng.choice(150, 5, replace=False)] += 12 * sigma
    res = repair_outliers(series(y), window=25, z=5)
    orig = dict(series(y))
    flagged = {r.t for r in res.replacements}
    assert all(r.kind == "spike" for r in res.replacements)
    assert len(res.series) == len(orig)
    for t, v in res.series:
        if t not in flagged:
            assert v == orig[t]


# --- GCS / fog routing ---------------------------------------------------------------


def fog_root(services=("INFER", "PLAN", "OUTLIERS", "REPORT"), lines=()):
    cmds = parse_scenario(["START,SimFile,2008-08-23 00:00:00,{}", *lines, "STOP,SimFile,2008-08-23 02:00:00,{}"])
    root = Coupled("root")
    src = root.add_component(ScenarioSource(cmds))
    fog = root.add_component(Fog("Fog", T0, INC, services))
    root.add_coupling(src.cmd, fog.port("cmd"))
    root.add_in_port("d")
    root.add_coupling(root.port("d"), fog.port("d"))
    return root, fog


def test_raw_event_goes_to_log_and_d1_only():
    root, fog = fog_root()
    gcs = fog.gcs
    dox = Event("DOX", "SimSenO", T0, {"DOX": 8.1})
    gcs.on_input("d", dox)
    assert fog.log.query(id="DOX") == [dox]
    outs = [(port, item) for _, _, port, item in gcs._agenda]
    assert outs == [("d1", dox)]


def test_estimate_goes_to_d1hat_and_planner_never_d1():
    root, fog = fog_root()
    hab = BloomEstimate(T0, 0.3, 47.5, -122.2, True).to_event("Inference")
    fog.gcs.on_input("res", hab)
    ports = sorted(port for _, _, port, _ in fog.gcs._agenda)
    assert ports == ["d1hat", "est"]


def test_commands_reach_services():
    root, fog = fog_root(lines=["INFER,SimFile,2008-08-23 00:00:30,{'period':1800}"])
    trace = []
    simulate(root, sinks=[trace])
    reqs = [r for r in trace if r.port == "req_INFER"]
    assert len(reqs) == 4 and all(isinstance(r.value, Request) for r in reqs)
    assert len(fog.log.query(id=HAB)) == 4


def test_unknown_service_logs_error():
    root, fog = fog_root(services=("INFER",), lines=["PLAN,SimFile,2008-08-23 00:10:00,{}"])
    simulate(root)
    errs = fog.log.query(id=ERR)
    assert len(errs) == 1 and "PLAN" in errs[0]["Reason"]


def test_fog_rejects_unknown_service_names():
    with pytest.raises(ValueError):
        Fog("Fog", T0, INC, ("INFER", "DANCE"))


def test_fog_flatten_trace_equal():
    # two-level fog inside the root, fed by a periodic scenario
    lines = ["PLAN,SimFile,2008-08-23 00:00:00,{}", "INFER,SimFile,2008-08-23 00:00:30,{'period':600}",
             "REPORT,SimFile,2008-08-23 01:30:00,{}"]
    a, b = [], []
    simulate(fog_root(lines=lines)[0], sinks=[a])
    simulate(flatten(fog_root(lines=lines)[0]), sinks=[b])
    assert [r.line() for r in a] == [r.line() for r in b]
    assert len(a) > 20


# --- report --------------------------------------------------------------------------


def report_log():
    log = EventLog()
    for k in range(4):
        t = T0 + timedelta(minutes=30 * k)
        log.append(Event("DOX", "USV", t, {"Lat": 47.5, "Lon": -122.2, "DOX": 8.0}))
        log.append(Event("POW", "USV", t, {"POW": 0.9}))
        log.append(Event("POS", "USV", t, {"Lat": 47.5, "Lon": -122.2, "SPV": 0, "SPU": 0, "Speed": 0.0}))
        log.append(BloomEstimate(t, 0.1 * k, 47.5, -122.2, k > 2).to_event("Inference"))
    return log


def test_report_counts_and_summary(tmp_path):
    log = report_log()
    bundle = build_report(log.snapshot(), out_dir=tmp_path, name="mon")
    assert len(bundle.files) == 4
    assert len(bundle.rows("signals")) == len(log.query(id="DOX")) + len(log.query(id="POW"))
    assert len(bundle.rows("inference")) == len(log.query(id=HAB))
    assert len(bundle.rows("usv")) == len(log.query(id="POS"))
    summary = {(r[0], r[1]): r for r in bundle.rows("summary")}
    assert summary[("USV", "DOX")][5] == 8.0
    for key, path in bundle.files.items():
        assert path.name.startswith("mon_20080823T000000-20080823T013000_")
        assert len(path.read_text().splitlines()) == len(bundle.rows(key)) + 1


def test_report_empty_window(tmp_path):
    bundle = build_report(report_log().snapshot(), T0 + timedelta(days=3), T0 + timedelta(days=4), tmp_path, "x")
    assert bundle.notice
    for path in bundle.files.values():
        assert len(path.read_text().splitlines()) == 1
