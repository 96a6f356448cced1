import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from memg import fixtures
from memg.config import default_config
from memg.environment import RandomPolicy, run_episode
from memg.formats import (
    TRACE_COLUMNS,
    FormatError,
    IndexRow,
    read_bounds,
    read_comparison,
    read_costs,
    read_curve,
    read_edits,
    read_gan_losses,
    read_index_report,
    read_paired,
    read_profile,
    read_scenarios,
    read_series,
    read_trace,
    trace_rows,
    write_bounds,
    write_comparison,
    write_costs,
    write_curve,
    write_edits,
    write_gan_losses,
    write_index_report,
    write_paired,
    write_profile,
    write_scenarios,
    write_series,
    write_trace,
)
from memg.scengen import ScenarioSet, synthetic_family
from memg.td3 import EpisodeRecord

PARAMS = default_config().microgrid
floats = st.floats(-1e6, 1e6, allow_nan=False)


def test_profile_round_trip(tmp_path):
    day = fixtures.seasonal_day("summer")
    write_profile(day, tmp_path / "p.csv")
    assert read_profile(tmp_path / "p.csv") == day
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == (
        "hour,wt_kw,pv_kw,p_load_kw,h_load_kw,q_load_kw,price_e_per_kwh")


def test_profile_errors(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("hour,wt_kw\n0,1\n")
    with pytest.raises(FormatError, match="p.csv"):
        read_profile(p)
    day = fixtures.seasonal_day("summer")
    write_profile(day, p)
    lines = p.read_text().splitlines()
    lines[3] = lines[3].replace(lines[3].split(",")[1], "abc", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError):
        read_profile(p)
    write_profile(day, p)
    lines = p.read_text().splitlines()
    del lines[5]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="gaps"):
        read_profile(p)
    with pytest.raises(FormatError, match="No such file"):
        read_profile(tmp_path / "missing.csv")


def test_trace_and_costs_round_trip(tmp_path):
    trace = run_episode(RandomPolicy(PARAMS, np.random.default_rng(0)), fixtures.seasonal_day("winter"), PARAMS)
    write_trace(trace, tmp_path / "t.csv")
    cols = read_trace(tmp_path / "t.csv")
    assert list(cols) == list(TRACE_COLUMNS)
    rows = np.array(trace_rows(trace), dtype=float)
    for j, c in enumerate(TRACE_COLUMNS):
        assert np.array_equal(cols[c], rows[:, j])
    write_costs(trace, tmp_path / "c.csv", {"extra": 1.5})
    costs = read_costs(tmp_path / "c.csv")
    assert costs["total_cost"] == trace.total_cost and costs["extra"] == 1.5


@given(st.lists(st.tuples(floats, floats, floats, floats), max_size=20))
def test_curve_round_trip(tmp_path_factory, vals):
    curve = [EpisodeRecord(i, *v) for i, v in enumerate(vals)]
    p = tmp_path_factory.mktemp("c") / "curve.csv"
    write_curve(curve, p)
    assert read_curve(p) == curve


def test_gan_losses_round_trip(tmp_path):
    d, g = [0.1, 1 / 3, 2e-17], [0.5, np.pi, 1e300]
    write_gan_losses(d, g, tmp_path / "l.csv")
    assert read_gan_losses(tmp_path / "l.csv") == (d, g)


def test_paired_round_trip(tmp_path):
    data = synthetic_family(5, np.random.default_rng(0), "pv")
    write_paired(data, tmp_path / "p.csv", 500.0)
    back = read_paired(tmp_path / "p.csv", {"wind": 500.0, "pv": 500.0})
    assert len(back) == 5
    for a, b in zip(data, back):
        assert np.array_equal(a.forecast, b.forecast) and np.array_equal(a.actual, b.actual)
        assert (a.kind, a.day) == (b.kind, b.day)


def test_paired_kw_only(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("day,hour,kind,forecast_kw,actual_kw\n0,0,wind,250,100\n0,1,wind,500,0\n")
    (s,) = read_paired(p, 500.0)
    assert s.forecast.tolist() == [0.5, 1.0] and s.actual.tolist() == [0.2, 0.0]
    p.write_text("day,hour,kind,forecast_kw,actual_kw\n0,0,wind,900,100\n")
    with pytest.raises(FormatError):
        read_paired(p, 500.0)


@settings(max_examples=25)
@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(0, 1)), st.booleans())
def test_scenarios_round_trip(tmp_path_factory, m, with_actual):
    T = m.shape[1]
    s = ScenarioSet(m[0], m, "pv", 437.5, {"seed": 3, "method": "x"}, m[-1] if with_actual else None)
    p = tmp_path_factory.mktemp("s") / "s.csv"
    write_scenarios(s, p)
    back = read_scenarios(p)
    assert np.array_equal(back.scenarios, s.scenarios) and np.array_equal(back.forecast, s.forecast)
    assert (back.kind, back.rated_kw, back.metadata) == ("pv", 437.5, s.metadata)
    assert (back.actual is None) == (not with_actual)
    assert back.scenarios.shape == (m.shape[0], T)


def test_scenarios_errors(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("scenario_id,hour,power_kw\n0,0,1\n")
    with pytest.raises(FormatError, match="format"):
        read_scenarios(p)


def test_series_index_edits_comparison_round_trip(tmp_path):
    v = np.array([0.0, 1 / 3, 250.0])
    write_series(v, tmp_path / "f.csv")
    assert np.array_equal(read_series(tmp_path / "f.csv"), v)
    rows = [IndexRow("c-lsgan", 0.875, 0.41), IndexRow("monte-carlo", 1.0, 0.5)]
    write_index_report(rows, tmp_path / "i.csv")
    assert read_index_report(tmp_path / "i.csv") == rows
    edits = [(1, "wt", 0.0), (12, "pv", 500.0)]
    write_edits(edits, tmp_path / "e.csv")
    assert read_edits(tmp_path / "e.csv") == edits
    write_comparison([("total_cost", 3.0, 2.5)], tmp_path / "c.csv")
    assert read_comparison(tmp_path / "c.csv") == {"total_cost": (3.0, 2.5, 0.5)}
    (tmp_path / "bad.csv").write_text("hour,channel,value\n0,wind,1\n")
    with pytest.raises(FormatError):
        read_edits(tmp_path / "bad.csv")


def test_bounds_round_trip(tmp_path):
    from memg.environment import GreedyPolicy, purchase_bounds

    day = fixtures.seasonal_day("spring")
    curves = np.vstack([day.wt, day.wt * 0.5]) / 500.0
    b = purchase_bounds(GreedyPolicy(PARAMS), PARAMS, day, wind=ScenarioSet(curves[0], curves))
    trace = run_episode(GreedyPolicy(PARAMS), day, PARAMS)
    write_bounds(b, trace, tmp_path / "b.csv")
    back = read_bounds(tmp_path / "b.csv")
    assert np.array_equal(back["elec_min_kwh"], b.elec_min)
    assert np.array_equal(back["gas_forecast_kwh"], trace.gas_purchases)
