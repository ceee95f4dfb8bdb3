from datetime import date, datetime, timedelta

import numpy as np
import pytest

from prumidas.config import Covariate, ModelSpec
from prumidas.data import (
    DailyTable,
    DataError,
    HourlyTable,
    align_and_preprocess,
    export_panel,
    ingest_daily,
    ingest_hourly,
    read_panel,
    write_daily_csv,
    write_hourly_csv,
)

HEADER = "timestamp,price,demand_fc,wind_fc,solar_fc\n"


def hourly_rows(day: date, hours, base=0.0):
    out = []
    for h in hours:
        ts = datetime.combine(day, datetime.min.time()) + timedelta(hours=h)
        v = base + h
        out.append(f"{ts.isoformat()},{v},{10 * v},{v + 0.5},{v % 3}\n")
    return out


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_clean_day_unchanged(tmp_path):
    p = write(tmp_path / "a.csv", HEADER + "".join(hourly_rows(date(2021, 5, 3), range(24))))
    tab = ingest_hourly(p, "AT")
    assert tab.T == 24
    np.testing.assert_array_equal(tab.columns["price"], np.arange(24.0))
    np.testing.assert_array_equal(tab.columns["demand_fc"], 10 * np.arange(24.0))
    assert tab.dates == [date(2021, 5, 3)]


def test_autumn_changeover_drops_repeated_hour(tmp_path):
    day = date(2021, 10, 31)
    rows = hourly_rows(day, range(3))
    # the repeated 02:00 hour carries different values
    rows.append(f"{day.isoformat()}T02:00,999,999,999,999\n")
    rows += hourly_rows(day, range(3, 24))
    p = write(tmp_path / "a.csv", HEADER + "".join(rows))
    tab = ingest_hourly(p, "AT")
    assert tab.T == 24
    np.testing.assert_array_equal(tab.columns["price"], np.arange(24.0))
    assert 999.0 not in tab.columns["wind_fc"]


def test_spring_changeover_interpolates_missing_hour(tmp_path):
    day = date(2021, 3, 28)
    rows = hourly_rows(day, [h for h in range(24) if h != 2])
    p = write(tmp_path / "a.csv", HEADER + "".join(rows))
    tab = ingest_hourly(p, "AT")
    assert tab.T == 24
    assert tab.columns["price"][2] == pytest.approx(2.0)
    assert tab.columns["demand_fc"][2] == pytest.approx(20.0)
    assert tab.timestamps[2] == datetime(2021, 3, 28, 2)


def test_bad_row_count_and_malformed_rows(tmp_path):
    rows = hourly_rows(date(2021, 1, 1), range(20)) + hourly_rows(date(2021, 1, 2), range(24))
    with pytest.raises(DataError, match="20 rows"):
        ingest_hourly(write(tmp_path / "a.csv", HEADER + "".join(rows)), "AT")
    rows = hourly_rows(date(2021, 1, 1), range(24))
    rows[5] = "2021-01-01T05:00,abc,1,2,3\n"
    with pytest.raises(DataError, match=r"a\.csv:7"):
        ingest_hourly(write(tmp_path / "a.csv", HEADER + "".join(rows)), "AT")
    rows[5] = "2021-01-01T05:00,1,2\n"
    with pytest.raises(DataError, match=r":7: expected 5 fields"):
        ingest_hourly(write(tmp_path / "a.csv", HEADER + "".join(rows)), "AT")
    with pytest.raises(DataError, match="header"):
        ingest_hourly(write(tmp_path / "b.csv", "time,price\n"), "AT")


def test_daily_weekend_interpolation(tmp_path):
    # Fri 2021-01-08 = 10, Mon 2021-01-11 = 13
    p = write(tmp_path / "d.csv", "date,co2,coal,gas\n2021-01-08,10,1,5\n2021-01-11,13,4,5\n")
    tab = ingest_daily(p)
    assert tab.dates == [date(2021, 1, 8) + timedelta(days=k) for k in range(4)]
    np.testing.assert_allclose(tab.columns["co2"], [10, 11, 12, 13])
    np.testing.assert_allclose(tab.columns["coal"], [1, 2, 3, 4])


def test_daily_no_gaps_identity(tmp_path):
    text = "date,co2,coal,gas\n" + "".join(f"2021-02-0{k},{k}.5,{k},{2 * k}\n" for k in range(1, 6))
    tab = ingest_daily(write(tmp_path / "d.csv", text))
    np.testing.assert_array_equal(tab.columns["co2"], [1.5, 2.5, 3.5, 4.5, 5.5])


def test_daily_leading_missing_value_is_error(tmp_path):
    p = write(tmp_path / "d.csv", "date,co2,coal,gas\n2021-01-08,,1,5\n2021-01-11,13,4,5\n")
    with pytest.raises(DataError, match="start/end"):
        ingest_daily(p)


# ---------------------------------------------------------------------------
# alignment


def small_spec(G=2, ar=(2,)):
    return ModelSpec(n_countries=G, freq_mismatch=2, ar_lags=ar,
                     covariates=(Covariate("demand_fc", "high"), Covariate("gas", "low")))


def make_tables(G, days, H, rng, start=date(2021, 1, 1)):
    tabs = []
    for g in range(G):
        T = days * H
        stamps = [datetime.combine(start, datetime.min.time()) + timedelta(hours=24 // H * k) for k in range(T)]
        tabs.append(HourlyTable(f"C{g}", stamps, {"price": rng.normal(50, 5, T), "demand_fc": rng.normal(10, 2, T)}, H))
    return tabs


def test_fossil_shift_example():
    spec = ModelSpec(n_countries=1, freq_mismatch=2, ar_lags=(2,), covariates=(Covariate("gas", "low"),))
    stamps = [datetime(2021, 1, 1) + timedelta(hours=12 * k) for k in range(6)]
    tab = HourlyTable("C0", stamps, {"price": np.arange(6.0)}, 2)
    g = [1.0, 2.0, 4.0, 8.0]  # settlements on Dec 31, Jan 1, Jan 2, Jan 3
    daily = DailyTable([date(2020, 12, 31) + timedelta(days=k) for k in range(4)], {"gas": np.array(g)})
    data = align_and_preprocess([tab], daily, spec)
    raw = np.array(g[:3])
    expected = (raw - raw.mean()) / raw.std()
    np.testing.assert_allclose(data.x_low[0, :, 0], expected, rtol=0, atol=1e-15)
    # day-2 regressor carries day-1 settlement: g1=2 -> standardized value at index 1 of window
    assert data.x_low[0, 1, 0] == expected[1]


def test_fossil_shift_cross_correlation_peaks_at_one_day(rng):
    spec = small_spec(G=1)
    days = 400
    tabs = make_tables(1, days, 2, rng)
    gas = np.zeros(days + 1)
    for k in range(1, days + 1):
        gas[k] = 0.8 * gas[k - 1] + rng.standard_normal()
    daily = DailyTable([date(2020, 12, 31) + timedelta(days=k) for k in range(days + 1)], {"gas": gas})
    data = align_and_preprocess(tabs, daily, spec)
    reg = data.x_low[0, :, 0]
    raw = gas[1:]  # raw series on the window days

    def corr(lag):
        # correlation of regressor[t] with raw[t + lag]
        a = reg[max(0, -lag) : days - max(0, lag)]
        b = raw[max(0, lag) : days - max(0, -lag)]
        return np.corrcoef(a, b)[0, 1]

    lags = range(-5, 6)
    best = max(lags, key=corr)
    assert best == -1
    assert corr(-1) == pytest.approx(1.0)


def test_standardization_and_levels(rng):
    spec = small_spec(G=3)
    tabs = make_tables(3, 40, 2, rng)
    daily = DailyTable([date(2020, 12, 31) + timedelta(days=k) for k in range(41)], {"gas": rng.normal(30, 4, 41)})
    data = align_and_preprocess(tabs, daily, spec)
    for g in range(3):
        for x in (data.x_high[g, :, 0], data.x_low[g, :, 0]):
            assert abs(x.mean()) < 1e-10
            assert abs(x.std() - 1) < 1e-10
        np.testing.assert_array_equal(data.y[g], tabs[g].columns["price"])
    m, s = data.scaling[("C1", "demand_fc")]
    np.testing.assert_allclose(data.x_high[1, :, 0] * s + m, tabs[1].columns["demand_fc"], rtol=1e-12)
    assert data.T_tilde * spec.H <= data.T
    assert data.n_obs == 3 * (40 - spec.presample_days) * 2


def test_constant_covariate_error(rng):
    spec = small_spec(G=1)
    tabs = make_tables(1, 10, 2, rng)
    tabs[0].columns["demand_fc"][:] = 3.0
    daily = DailyTable([date(2020, 12, 31) + timedelta(days=k) for k in range(11)], {"gas": rng.normal(size=11)})
    with pytest.raises(DataError, match="zero variance, cannot standardize"):
        align_and_preprocess(tabs, daily, spec)


def test_date_filter_restricts_window(rng):
    spec = small_spec(G=2)
    start = date(2021, 12, 1)
    tabs = make_tables(2, 120, 2, rng, start=start)
    daily = DailyTable([start - timedelta(days=1) + timedelta(days=k) for k in range(121)],
                       {"gas": rng.normal(30, 4, 121)})
    data = align_and_preprocess(tabs, daily, spec, ("2022-01-01", "2022-03-15"))
    assert data.dates[0] == date(2022, 1, 1) and data.dates[-1] == date(2022, 3, 15)
    assert data.T == 74 * 2
    # standardized over the filtered window only
    assert abs(data.x_high[0, :, 0].mean()) < 1e-10
    k0 = (date(2022, 1, 1) - start).days * 2
    np.testing.assert_array_equal(data.y[0], tabs[0].columns["price"][k0 : k0 + 148])


def test_alignment_errors(rng):
    spec = small_spec(G=2)
    tabs = make_tables(2, 10, 2, rng)
    daily = DailyTable([date(2020, 12, 31) + timedelta(days=k) for k in range(11)], {"gas": rng.normal(size=11)})
    short = make_tables(1, 8, 2, rng)[0]
    with pytest.raises(DataError, match="country length mismatch|does not cover"):
        align_and_preprocess([tabs[0], short], daily, spec)
    with pytest.raises(DataError, match="insufficient presample history"):
        align_and_preprocess(make_tables(2, 1, 2, rng), daily, spec)
    late = DailyTable(daily.dates[1:], {"gas": daily.columns["gas"][1:]})
    with pytest.raises(DataError, match="leading day"):
        align_and_preprocess(tabs, late, spec)


def test_csv_round_trip_bit_exact(tmp_path, rng):
    tabs = make_tables(1, 5, 24, rng)
    tab = HourlyTable("AT", tabs[0].timestamps, {**tabs[0].columns, "wind_fc": rng.standard_normal(120) * 1e-7}, 24)
    write_hourly_csv(tab, tmp_path / "h.csv")
    back = ingest_hourly(tmp_path / "h.csv", "AT")
    assert back.timestamps == tab.timestamps
    for k, v in tab.columns.items():
        assert np.array_equal(back.columns[k], v)
    daily = DailyTable([date(2021, 1, 1) + timedelta(days=k) for k in range(5)],
                       {"co2": rng.normal(size=5) / 3, "gas": rng.normal(size=5) * 1e9})
    write_daily_csv(daily, tmp_path / "d.csv")
    dback = ingest_daily(tmp_path / "d.csv")
    assert all(np.array_equal(dback.columns[k], v) for k, v in daily.columns.items())


def test_panel_export_round_trip(tmp_path, rng):
    spec = small_spec(G=2)
    tabs = make_tables(2, 12, 2, rng)
    daily = DailyTable([date(2020, 12, 31) + timedelta(days=k) for k in range(13)], {"gas": rng.normal(size=13)})
    data = align_and_preprocess(tabs, daily, spec)
    export_panel(data, tmp_path / "ds")
    back = read_panel(tmp_path / "ds")
    assert back.equals(data)
    assert back.scaling == data.scaling
    assert back.notes["fossil_shift"]
