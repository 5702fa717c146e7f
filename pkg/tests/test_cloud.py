from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from habsim.assemble import assemble
from habsim.cloud import (
    ESTIMATED,
    PREDICTED,
    RAW,
    CentralLog,
    Cloud,
    infer_sediment,
    infer_water_speed,
    predict_bloom,
)
from habsim.config import load_config
from habsim.devs import simulate
from habsim.environment import Forecast, SyntheticSpec, generate_synthetic_scenario
from habsim.events import Event
from habsim.params import BloomParams

T0 = datetime(2008, 8, 23)
CONFIGS = Path(__file__).resolve().parents[1] / "configs"
INC = (47.496, -122.229)


def hours(n, step=1.0):
    return [T0 + timedelta(hours=step * k) for k in range(n)]


def test_sediment_pure_decay():
    s = infer_sediment(hours(49), np.zeros(49), tau=24, s0=2.0)
    assert s[24] == pytest.approx(2.0 * np.exp(-1))
    assert s[48] == pytest.approx(2.0 * np.exp(-2))


def test_sediment_impulse_then_decay():
    rain = np.zeros(30)
    rain[0] = 3.0
    s = infer_sediment(hours(30), rain, tau=10, gain=2.0)
    assert s[1] == pytest.approx(6.0)
    assert s[11] == pytest.approx(6.0 * np.exp(-1))


def test_sediment_steady_state():
    s = infer_sediment(hours(2000, 0.5), np.full(2000, 0.4), tau=12, gain=1.5)
    dt = 0.5
    # fixed point of the discrete filter, which tends to gain*R*tau as dt shrinks
    fixed = 1.5 * 0.4 * dt / (1 - np.exp(-dt / 12))
    assert s[-1] == pytest.approx(fixed, rel=1e-9)
    assert fixed == pytest.approx(1.5 * 0.4 * 12, rel=0.03)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=5, max_size=40), st.floats(0.01, 5), st.floats(1, 100))
def test_sediment_is_linear_in_rain(rain, c, tau):
    t = hours(len(rain))
    a = infer_sediment(t, rain, tau)
    b = infer_sediment(t, np.array(rain) * c, tau)
    np.testing.assert_allclose(b, c * a, rtol=1e-9, atol=1e-9)
    assert np.all(a >= 0)


def test_sediment_rejects_bad_input():
    with pytest.raises(ValueError):
        infer_sediment(hours(3), [1, -1, 0])
    with pytest.raises(ValueError):
        infer_sediment(hours(3), [0, 0, 0], tau=0)


def test_water_speed_from_wind():
    v, u = infer_water_speed(hours(3), [0, 0, 0], [0, 0, 0])
    assert np.all(v == 0) and np.all(u == 0)
    v, u = infer_water_speed(hours(3), [2, 2, 2], [0, 0, 0], k_wind=0.03)
    assert v == pytest.approx([0.06] * 3) and np.all(u == 0)


def test_water_speed_lag_converges():
    v, _ = infer_water_speed(hours(100), [0] + [2] * 99, [0] * 100, k_wind=0.03, lag=3.0)
    assert v[1] == pytest.approx(0.06 * (1 - np.exp(-1 / 3)))
    assert v[-1] == pytest.approx(0.06, rel=1e-9)


def flat_forecast(n=96, rain=0.0):
    return Forecast(hours(n, 0.5), [rain] * n, [0.0] * n, [0.0] * n, [0.5] * n)


def test_prediction_without_rain_stays_at_baseline():
    fc = predict_bloom(flat_forecast(), INC, sediment=generate_synthetic_scenario(0, SyntheticSpec(days=1)).spec.sediment)
    # nitrates stay at their base level, so density settles just above r0 and never blooms
    assert np.all(fc.r < BloomParams().detect_threshold)
    assert not any(d for _, d, _, _ in fc.daily())
    assert np.all(fc.lat == INC[0]) and np.all(fc.lon == INC[1])


def test_prediction_all_zero_inputs_is_flat():
    n = 48
    fc = predict_bloom(Forecast(hours(n), [0] * n, [0] * n, [0] * n, [0] * n), INC)
    assert np.all(fc.r == BloomParams().r0)


def test_prediction_deterministic_and_single_rain_single_bloom():
    sc = generate_synthetic_scenario(3, SyntheticSpec(days=4, rain=()))
    base = sc.forecast
    rain = np.array(base.columns["rain"])
    rain[16:22] = 1.0
    fc_in = Forecast(base.times, rain, base.columns["wind_v"], base.columns["wind_u"], base.columns["sun"])
    a = predict_bloom(fc_in, INC)
    b = predict_bloom(fc_in, INC)
    np.testing.assert_array_equal(a.r, b.r)
    above = a.r >= a.threshold
    onsets = np.flatnonzero(above[1:] & ~above[:-1])
    assert len(onsets) == 1
    assert int(np.argmax(a.r)) > int(np.argmax(a.precursor))


def test_prediction_needs_two_records():
    with pytest.raises(ValueError):
        predict_bloom(flat_forecast(1), INC)


def test_central_log_dedupes(tmp_path):
    log = CentralLog(tmp_path / "c.log")
    ev = Event("DOX", "SimSenO", T0, {"DOX": 8.0})
    assert log.ingest(ev, RAW, "LakeA")
    assert not log.ingest(ev, RAW, "LakeA")
    assert log.ingest(ev, RAW, "LakeB")
    assert log.ingest(ev, ESTIMATED, "LakeA")
    log.close()
    assert len(log) == 3
    lines = (tmp_path / "c.log").read_text().splitlines()
    assert len(lines) == 3
    entry = CentralLog.parse_line(lines[0])
    assert (entry.body, entry.channel, entry.event) == ("LakeA", RAW, ev)
    assert log.query(body="LakeB") == [ev]
    assert log.query(channel=ESTIMATED) == [ev]


def test_cloud_predict_without_forecast_logs_error():
    cloud = Cloud("Cloud", T0)
    cloud.add_body("Lake")
    cloud.on_input("cmd", Event("PREDICT", "SimFile", T0, {"horizon": 24}))
    assert [e.id for e in cloud.log.query(channel=PREDICTED)] == ["ERR"]


def test_central_log_holds_everything_the_fog_forwards():
    cfg = load_config(CONFIGS / "monitoring.cfg").with_overrides(until=86400.0)
    asm = assemble(cfg)
    trace = []
    simulate(asm.root, asm.clock(), sinks=[trace])
    forwarded = [r for r in trace if r.source.startswith("HabSim.Fog.") and r.port in ("d1", "d1hat")]
    assert forwarded
    assert len(asm.cloud.log) == len(forwarded)
    assert len(asm.cloud.log.query(channel=ESTIMATED)) == sum(r.port == "d1hat" for r in forwarded)
