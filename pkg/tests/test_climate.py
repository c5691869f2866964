from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_series
from yellowrisk.climate import (
    CLIMATE_HEADER,
    DailyWeather,
    GddWindow,
    SyntheticClimateParams,
    daily_gdd,
    daily_gdd_array,
    load_climate,
    parse_ddmm,
    save_climate,
    synthesize_climate,
    synthesize_scenarios,
    synthesize_series,
    window_gdd,
)
from yellowrisk.errors import ClimateFormatError, CoverageError, InputError


def _write_rows(path: Path, rows: list[str], header: bool = True) -> Path:
    lines = ([",".join(CLIMATE_HEADER)] if header else []) + rows
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestDailyGdd:
    @pytest.mark.parametrize(
        "tmin, tmax, base, expected",
        [(2, 8, 0, 5.0), (-6, 2, 0, 0.0), (0, 6, 3, 0.0), (10, 20, 5, 10.0)],
    )
    def test_examples(self, tmin, tmax, base, expected):
        assert daily_gdd(DailyWeather(dt.date(2020, 1, 1), tmin, tmax, 0.0), base) == expected

    @given(
        st.floats(-40, 40),
        st.floats(0, 30),
        st.floats(-5, 10),
    )
    def test_non_negative_and_zero_below_base(self, tmin, spread, base):
        tmax = tmin + spread
        g = daily_gdd(DailyWeather(dt.date(2020, 1, 1), tmin, tmax, 0.0), base)
        assert g >= 0
        if (tmin + tmax) / 2 <= base:
            assert g == 0

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(0)
        tmin = rng.uniform(-10, 15, 50)
        tmax = tmin + rng.uniform(0, 12, 50)
        arr = daily_gdd_array(tmin, tmax, 1.5)
        for a, b, g in zip(tmin, tmax, arr):
            assert g == daily_gdd(DailyWeather(dt.date(2020, 1, 1), a, b, 0.0), 1.5)


class TestDailyWeather:
    def test_tmin_above_tmax_rejected(self):
        with pytest.raises(InputError):
            DailyWeather(dt.date(2020, 1, 1), 5.0, 2.0, 0.0)

    def test_negative_precip_rejected(self):
        with pytest.raises(InputError):
            DailyWeather(dt.date(2020, 1, 1), 1.0, 2.0, -0.1)


class TestWindowGdd:
    def test_three_day_window(self):
        s = make_series(3, tmin=[5, -6, 1], tmax=[5, 2, 5])
        assert window_gdd(s, GddWindow((1, 1), (1, 3)), 2020) == 8.0

    def test_year_crossing_resolution(self):
        w = GddWindow.from_ddmm("03/12", "29/03")
        assert w.crosses_year
        assert w.resolve(2021) == (dt.date(2020, 12, 3), dt.date(2021, 3, 29))

    def test_plain_window_resolution(self):
        w = GddWindow.from_ddmm("01/01", "14/02")
        assert not w.crosses_year
        assert w.resolve(2021) == (dt.date(2021, 1, 1), dt.date(2021, 2, 14))

    def test_leap_day_included(self):
        s = make_series(366, start=dt.date(2020, 1, 1), tmin=1.0, tmax=1.0)
        assert window_gdd(s, GddWindow((2, 28), (3, 1)), 2020) == 3.0

    def test_missing_coverage(self):
        s = make_series(30, start=dt.date(2021, 1, 1))
        with pytest.raises(CoverageError):
            window_gdd(s, GddWindow((12, 3), (1, 10)), 2021)

    def test_empty_series_rejected(self):
        with pytest.raises(InputError):
            make_series(0)

    def test_parse_ddmm_rejects_nonsense(self):
        assert parse_ddmm("03/12") == (12, 3)
        for bad in ("31/02", "1-3", "aa/bb", "03/28/1"):
            with pytest.raises(InputError):
                parse_ddmm(bad)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 58))
    def test_additive_over_partition(self, seed, cut):
        rng = np.random.default_rng(seed)
        tmin = rng.uniform(-10, 10, 120)
        s = make_series(120, start=dt.date(2020, 12, 1), tmin=tmin, tmax=tmin + rng.uniform(0, 10, 120))
        whole = window_gdd(s, GddWindow((12, 3), (1, 30)), 2021)
        end_first = dt.date(2020, 12, 3) + dt.timedelta(days=cut - 1)
        after = end_first + dt.timedelta(days=1)
        first = window_gdd(s, GddWindow((12, 3), (end_first.month, end_first.day)), 2021 if end_first.year == 2021 else 2020)
        second = window_gdd(s, GddWindow((after.month, after.day), (1, 30)), 2021)
        assert first + second == pytest.approx(whole, rel=1e-12, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 5))
    def test_monotone_under_warming(self, seed, delta):
        rng = np.random.default_rng(seed)
        tmin = rng.uniform(-10, 10, 150)
        s = make_series(150, start=dt.date(2020, 11, 1), tmin=tmin, tmax=tmin + 4)
        w = GddWindow((12, 3), (3, 29))
        assert window_gdd(s.shifted(delta), w, 2021) >= window_gdd(s, w, 2021)


class TestLoadClimate:
    def test_three_rows(self, tmp_path):
        p = _write_rows(
            tmp_path / "c.csv",
            [
                "M,rcp85,R1,2020-01-01,1,5,0",
                "M,rcp85,R1,2020-01-02,2,6,1.5",
                "M,rcp85,R1,2020-01-03,0,4,0",
            ],
        )
        clim = load_climate(p)
        s = clim["R1"][("M", "rcp85")]
        assert len(s) == 3
        assert s.precip.tolist() == [0.0, 1.5, 0.0]

    def test_tmin_above_tmax_names_row(self, tmp_path):
        p = _write_rows(tmp_path / "c.csv", ["M,rcp85,R1,2020-01-01,1,5,0", "M,rcp85,R1,2020-01-02,5,2,0"])
        with pytest.raises(ClimateFormatError, match=r":3"):
            load_climate(p)

    def test_gap_between_files(self, tmp_path):
        a = _write_rows(tmp_path / "a.csv", ["M,rcp85,R1,2020-01-01,1,5,0"])
        b = _write_rows(tmp_path / "b.csv", ["M,rcp85,R1,2020-01-03,1,5,0"])
        with pytest.raises(ClimateFormatError, match="gap"):
            load_climate(a, b)

    def test_two_files_concatenate(self, tmp_path):
        a = _write_rows(tmp_path / "a.csv", ["M,rcp85,R1,2020-01-01,1,5,0"])
        b = _write_rows(tmp_path / "b.csv", ["M,rcp85,R1,2020-01-02,1,5,0"])
        assert len(load_climate(a, b)["R1"][("M", "rcp85")]) == 2

    def test_duplicate_rejected(self, tmp_path):
        p = _write_rows(tmp_path / "c.csv", ["M,rcp85,R1,2020-01-01,1,5,0", "M,rcp85,R1,2020-01-01,1,5,0"])
        with pytest.raises(ClimateFormatError, match="duplicate"):
            load_climate(p)

    @pytest.mark.parametrize(
        "row",
        ["M,rcp85,R1,2020-01-01,x,5,0", "M,rcp85,R1,2020-13-01,1,5,0", "M,rcp85,R1,2020-01-01,1,5", "M,rcp85,R1,2020-01-01,1,5,-1"],
    )
    def test_malformed_rows(self, tmp_path, row):
        with pytest.raises(ClimateFormatError):
            load_climate(_write_rows(tmp_path / "c.csv", [row]))

    def test_bad_header(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ClimateFormatError):
            load_climate(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_climate(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        clim = synthesize_climate(3, range(2000, 2002), 3, 1.0, model="M", scenario="S")
        path = tmp_path / "c.csv"
        save_climate(clim, path)
        back = load_climate(path)
        assert sorted(back) == sorted(clim)
        for r in clim:
            assert back[r][("M", "S")].equals(clim[r][("M", "S")])


class TestSynthetic:
    def test_same_seed_bit_identical(self):
        a = synthesize_series(42, range(2000, 2003), 1, 2.0)
        b = synthesize_series(42, range(2000, 2003), 1, 2.0)
        assert a.equals(b)
        assert not a.equals(synthesize_series(43, range(2000, 2003), 1, 2.0))

    def test_tmin_le_tmax(self):
        s = synthesize_series(1, range(1990, 2000), 0, 4.0)
        assert np.all(s.tmin <= s.tmax)
        assert np.all(s.precip >= 0)

    def test_degenerate_generator_repeats_every_year(self):
        params = SyntheticClimateParams(noise_sd_c=0.0, wet_prob=0.0)
        s = synthesize_series(5, range(2001, 2004), 0, 0.0, params)
        years = np.split(s.tmax, [365, 730])
        assert np.array_equal(years[0], years[1]) and np.array_equal(years[1], years[2])
        assert not s.precip.any()

    def test_warming_rate(self):
        diffs = []
        for r in range(30):
            s = synthesize_series(11, range(2000, 2101), r, 2.0)
            mean = lambda y: float(np.mean((s.tmin + s.tmax)[s.span(dt.date(y, 1, 1), dt.date(y, 12, 31))] / 2))  # noqa: E731
            diffs.append(mean(2100) - mean(2000))
        assert np.mean(diffs) == pytest.approx(2.0, abs=0.3)

    def test_scenarios_share_noise(self):
        both = synthesize_scenarios(9, range(2030, 2032), 2, {"a": 0.0, "b": 4.0})
        d = (both["b"].tmin - both["a"].tmin)
        assert np.all(d > 0) and np.array_equal(both["a"].precip, both["b"].precip)
        single = synthesize_series(9, range(2030, 2032), 2, 4.0)
        assert single.equals(both["b"])

    def test_row_count_is_leap_aware(self):
        clim = synthesize_climate(1, range(1950, 2101), 2)
        n = (dt.date(2101, 1, 1) - dt.date(1950, 1, 1)).days
        assert all(len(by[("synthetic", "synthetic")]) == n for by in clim.values())
        assert n == 151 * 365 + 37

    def test_invalid_params(self):
        with pytest.raises(InputError):
            synthesize_series(1, range(2000, 2000), 0)
        with pytest.raises(InputError):
            synthesize_series(1, range(2000, 2001), 0, params=SyntheticClimateParams(noise_ar1=1.0))
