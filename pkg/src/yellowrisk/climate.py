"""Daily climate series: ingestion, validation, degree-day sums and a seeded generator.

A climate is held as a nested mapping::

    {region_id: {(model, scenario): DailyWeatherSeries}}

Series store their values as read-only numpy arrays. Sums over days are always
accumulated sequentially in date order (``np.add.accumulate``) so that every
code path that sums the same days produces the same float.
"""

from __future__ import annotations

import csv
import datetime as dt
import functools
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numba
import numpy as np

from .errors import ClimateFormatError, CoverageError, InputError

CLIMATE_HEADER = ("model", "scenario", "region_id", "date", "tmin_c", "tmax_c", "precip_mm")

Climate = dict[str, dict[tuple[str, str], "DailyWeatherSeries"]]


def parse_ddmm(text: str) -> tuple[int, int]:
    """Parse a ``dd/mm`` string into a ``(month, day)`` tuple."""
    try:
        day_s, month_s = text.strip().split("/")
        day, month = int(day_s), int(month_s)
        # leap year so that 29/02 is accepted
        dt.date(2000, month, day)
    except ValueError as exc:
        raise InputError(f"invalid dd/mm date {text!r}") from exc
    return month, day


def format_ddmm(md: tuple[int, int]) -> str:
    return f"{md[1]:02d}/{md[0]:02d}"


def doy_to_date(year: int, doy: int) -> dt.date:
    return dt.date(year, 1, 1) + dt.timedelta(days=int(doy) - 1)


def seq_sum(values: np.ndarray) -> float:
    """Left-to-right float sum (not numpy's pairwise summation)."""
    if len(values) == 0:
        return 0.0
    return float(np.add.accumulate(values)[-1])


@dataclass(frozen=True)
class DailyWeather:
    date: dt.date
    tmin: float
    tmax: float
    precip: float

    def __post_init__(self):
        if not (math.isfinite(self.tmin) and math.isfinite(self.tmax) and math.isfinite(self.precip)):
            raise InputError(f"{self.date}: non-finite weather value")
        if self.tmin > self.tmax:
            raise InputError(f"{self.date}: tmin {self.tmin} > tmax {self.tmax}")
        if self.precip < 0:
            raise InputError(f"{self.date}: negative precipitation {self.precip}")


class DailyWeatherSeries:
    """Gap-free daily weather for one region, stored column-wise.

    Parameters
    ----------
    region_id : str
    start : datetime.date
        Date of the first record; record ``i`` is ``start + i`` days.
    tmin, tmax, precip : array_like
        Daily minimum and maximum temperature (degC) and precipitation (mm).
    """

    __slots__ = ("region_id", "start", "tmin", "tmax", "precip")

    def __init__(self, region_id: str, start: dt.date, tmin, tmax, precip):
        tmin = np.array(tmin, dtype=np.float64)
        tmax = np.array(tmax, dtype=np.float64)
        precip = np.array(precip, dtype=np.float64)
        if not (tmin.shape == tmax.shape == precip.shape) or tmin.ndim != 1:
            raise InputError("tmin, tmax and precip must be 1-d arrays of equal length")
        if len(tmin) == 0:
            raise InputError(f"region {region_id}: empty series")
        if not (np.isfinite(tmin).all() and np.isfinite(tmax).all() and np.isfinite(precip).all()):
            raise InputError(f"region {region_id}: non-finite weather value")
        bad = np.flatnonzero(tmin > tmax)
        if len(bad):
            day = start + dt.timedelta(days=int(bad[0]))
            raise InputError(f"region {region_id} {day}: tmin > tmax")
        bad = np.flatnonzero(precip < 0)
        if len(bad):
            day = start + dt.timedelta(days=int(bad[0]))
            raise InputError(f"region {region_id} {day}: negative precipitation")
        for arr in (tmin, tmax, precip):
            arr.flags.writeable = False
        self.region_id = region_id
        self.start = start
        self.tmin = tmin
        self.tmax = tmax
        self.precip = precip

    @classmethod
    def from_records(cls, region_id: str, records: Iterable[DailyWeather]) -> DailyWeatherSeries:
        records = list(records)
        if not records:
            raise InputError(f"region {region_id}: empty series")
        for prev, cur in zip(records, records[1:]):
            if (cur.date - prev.date).days != 1:
                raise InputError(f"region {region_id}: dates not consecutive at {cur.date}")
        return cls(
            region_id,
            records[0].date,
            [r.tmin for r in records],
            [r.tmax for r in records],
            [r.precip for r in records],
        )

    def __len__(self) -> int:
        return len(self.tmin)

    def __iter__(self) -> Iterator[DailyWeather]:
        return iter(self.records)

    def __repr__(self) -> str:
        return f"DailyWeatherSeries({self.region_id!r}, {self.start} .. {self.end}, n={len(self)})"

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)

    @property
    def dates(self) -> np.ndarray:
        return np.datetime64(self.start, "D") + np.arange(len(self))

    @property
    def records(self) -> list[DailyWeather]:
        return [
            DailyWeather(self.start + dt.timedelta(days=i), float(a), float(b), float(c))
            for i, (a, b, c) in enumerate(zip(self.tmin, self.tmax, self.precip))
        ]

    def __getitem__(self, day: dt.date) -> DailyWeather:
        i = self.index(day)
        return DailyWeather(day, float(self.tmin[i]), float(self.tmax[i]), float(self.precip[i]))

    def index(self, day: dt.date) -> int:
        i = (day - self.start).days
        if i < 0 or i >= len(self):
            raise CoverageError(f"region {self.region_id}: {day} outside series {self.start}..{self.end}")
        return i

    def span(self, first: dt.date, last: dt.date) -> slice:
        """Index slice for the inclusive date range, raising if not fully covered."""
        if last < first:
            raise CoverageError(f"empty date range {first}..{last}")
        return slice(self.index(first), self.index(last) + 1)

    def shifted(self, delta_c: float) -> DailyWeatherSeries:
        """Copy with both temperatures moved by ``delta_c`` degrees."""
        return DailyWeatherSeries(
            self.region_id, self.start, self.tmin + delta_c, self.tmax + delta_c, self.precip
        )

    def equals(self, other: DailyWeatherSeries) -> bool:
        return (
            self.region_id == other.region_id
            and self.start == other.start
            and np.array_equal(self.tmin, other.tmin)
            and np.array_equal(self.tmax, other.tmax)
            and np.array_equal(self.precip, other.precip)
        )


@dataclass(frozen=True)
class GddWindow:
    """Inclusive ``(month, day)`` window over which degree-days are summed.

    A window whose start falls later in the calendar than its end crosses the
    new year: the end is anchored to the harvest year and the start belongs to
    the previous one.
    """

    start: tuple[int, int]
    end: tuple[int, int]
    base: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.base):
            raise InputError("GDD base must be finite")
        for md in (self.start, self.end):
            try:
                dt.date(2000, *md)
            except (TypeError, ValueError) as exc:
                raise InputError(f"invalid (month, day) {md!r}") from exc

    @classmethod
    def from_ddmm(cls, start: str, end: str, base: float = 0.0) -> GddWindow:
        return cls(parse_ddmm(start), parse_ddmm(end), float(base))

    @property
    def crosses_year(self) -> bool:
        return self.start > self.end

    def resolve(self, harvest_year: int) -> tuple[dt.date, dt.date]:
        first_year = harvest_year - 1 if self.crosses_year else harvest_year
        try:
            return dt.date(first_year, *self.start), dt.date(harvest_year, *self.end)
        except ValueError as exc:
            raise InputError(f"window {self} does not exist for harvest year {harvest_year}") from exc


def daily_gdd(w: DailyWeather, base: float = 0.0) -> float:
    return max(0.0, (w.tmin + w.tmax) / 2 - base)


def daily_gdd_array(tmin: np.ndarray, tmax: np.ndarray, base: float = 0.0) -> np.ndarray:
    return np.maximum(0.0, (tmin + tmax) / 2 - base)


def window_gdd(series: DailyWeatherSeries, window: GddWindow, harvest_year: int) -> float:
    first, last = window.resolve(harvest_year)
    sl = series.span(first, last)
    return seq_sum(daily_gdd_array(series.tmin[sl], series.tmax[sl], window.base))


# --- CSV ingestion -----------------------------------------------------------


def load_climate(*paths: str | Path) -> Climate:
    """Read one or more climate CSV files into a validated climate mapping.

    Rows from all files are pooled, so a series may be split across files.
    Rows are sorted by date, then each series is checked for duplicates and
    gaps.
    """
    if not paths:
        raise InputError("no climate file given")
    rows: dict[tuple[str, str, str], list[tuple[dt.date, float, float, float, str, int]]] = defaultdict(list)
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"climate file not found: {path}")
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != CLIMATE_HEADER:
                raise ClimateFormatError(f"header must be {','.join(CLIMATE_HEADER)}", str(path), 1)
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(CLIMATE_HEADER):
                    raise ClimateFormatError(f"expected {len(CLIMATE_HEADER)} fields, got {len(row)}", str(path), line)
                model, scenario, region, date_s, tmin_s, tmax_s, precip_s = (f.strip() for f in row)
                try:
                    day = dt.date.fromisoformat(date_s)
                    tmin, tmax, precip = float(tmin_s), float(tmax_s), float(precip_s)
                except ValueError as exc:
                    raise ClimateFormatError(f"malformed row: {exc}", str(path), line) from None
                if not (model and scenario and region):
                    raise ClimateFormatError("empty model, scenario or region_id", str(path), line)
                if not (math.isfinite(tmin) and math.isfinite(tmax) and math.isfinite(precip)):
                    raise ClimateFormatError("non-finite value", str(path), line)
                if tmin > tmax:
                    raise ClimateFormatError(f"tmin {tmin} > tmax {tmax}", str(path), line)
                if precip < 0:
                    raise ClimateFormatError(f"negative precipitation {precip}", str(path), line)
                rows[(region, model, scenario)].append((day, tmin, tmax, precip, str(path), line))

    climate: Climate = {}
    for (region, model, scenario) in sorted(rows):
        recs = sorted(rows[(region, model, scenario)], key=lambda r: r[0])
        for prev, cur in zip(recs, recs[1:]):
            gap = (cur[0] - prev[0]).days
            if gap == 0:
                raise ClimateFormatError(
                    f"duplicate row for {model}/{scenario}/{region} {cur[0]} (first at {prev[4]}:{prev[5]})",
                    cur[4],
                    cur[5],
                )
            if gap > 1:
                raise ClimateFormatError(
                    f"gap in {model}/{scenario}/{region}: no data between {prev[0]} and {cur[0]}", cur[4], cur[5]
                )
        series = DailyWeatherSeries(
            region, recs[0][0], [r[1] for r in recs], [r[2] for r in recs], [r[3] for r in recs]
        )
        climate.setdefault(region, {})[(model, scenario)] = series
    return climate


def save_climate(climate: Mapping[str, Mapping[tuple[str, str], DailyWeatherSeries]], path: str | Path) -> None:
    """Write a climate mapping as CSV; floats use the shortest round-trip repr."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CLIMATE_HEADER)
        keys = sorted((model, scenario, region) for region, by in climate.items() for model, scenario in by)
        for model, scenario, region in keys:
            s = climate[region][(model, scenario)]
            dates = s.dates.astype(str)
            for d, a, b, c in zip(dates, s.tmin.tolist(), s.tmax.tolist(), s.precip.tolist()):
                writer.writerow((model, scenario, region, d, repr(a), repr(b), repr(c)))


# --- synthetic generator -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticClimateParams:
    """Knobs of the synthetic daily-weather generator.

    Daily mean temperature is a cosine annual cycle (minimum on
    ``coldest_doy``) plus a per-region and per-model offset, a warming trend
    that starts at ``trend_base_year`` and AR(1) noise. Precipitation occurs
    with probability ``wet_prob`` and wet-day amounts are exponential.
    """

    mean_c: float = 11.0
    amplitude_c: float = 7.5
    coldest_doy: float = 15.0
    diurnal_range_c: float = 8.0
    diurnal_seasonal_c: float = 2.0
    noise_sd_c: float = 2.5
    noise_ar1: float = 0.7
    wet_prob: float = 0.45
    wet_mean_mm: float = 4.0
    region_spread_c: float = 1.5
    model_spread_c: float = 0.5
    trend_base_year: int = 2000


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def region_ids(count: int) -> list[str]:
    width = max(3, len(str(count)))
    return [f"R{i + 1:0{width}d}" for i in range(count)]


@functools.lru_cache(maxsize=8)
def _calendar(first_year: int, last_year: int, coldest_doy: float, base_year: int) -> tuple[np.ndarray, np.ndarray]:
    """Seasonal phase and years elapsed since ``base_year`` (floored at 0) for each day."""
    dates = np.arange(np.datetime64(f"{first_year}-01-01"), np.datetime64(f"{last_year + 1}-01-01"))
    year_start = dates.astype("datetime64[Y]")
    doy = (dates - year_start).astype(np.int64) + 1
    phase = np.cos(2 * np.pi * (doy - coldest_doy) / 365.25)
    frac_year = year_start.astype(np.int64) + 1970 + (doy - 0.5) / 365.25
    since = np.maximum(0.0, frac_year - base_year)
    phase.flags.writeable = False
    since.flags.writeable = False
    return phase, since


@numba.njit(cache=True)
def _synth_fill(eps, u, phase, since, level, amplitude, warming, dtr_mean, dtr_seasonal, sd, phi, wet_prob, wet_mean):
    n = eps.shape[0]
    tmin = np.empty(n)
    tmax = np.empty(n)
    precip = np.zeros(n)
    gain = sd * math.sqrt(1.0 - phi * phi)
    noise = 0.0
    for k in range(n):
        # stationary AR(1): the first draw is scaled to the marginal variance
        e = eps[k] / math.sqrt(1.0 - phi * phi) if k == 0 else eps[k]
        noise = gain * e + phi * noise
        tmean = level - amplitude * phase[k] + warming / 100.0 * since[k] + noise
        half = max(0.5, dtr_mean - dtr_seasonal * phase[k]) / 2.0
        tmin[k] = tmean - half
        tmax[k] = tmean + half
        if u[k] < wet_prob:
            precip[k] = -wet_mean * math.log(u[k] / wet_prob)
    return tmin, tmax, precip


def synthesize_scenarios(
    seed: int,
    years: range,
    region_index: int,
    warmings: Mapping[str, float],
    params: SyntheticClimateParams = SyntheticClimateParams(),
    model: str = "synthetic",
    region_id: str | None = None,
) -> dict[str, DailyWeatherSeries]:
    """Generate one region's series for several scenarios of the same model.

    Randomness comes from numpy's PCG64 bit generator. The noise stream is
    seeded with ``SeedSequence([seed, crc32(model), region_index])``, so the
    scenarios share weather noise and differ only by their warming trend
    (degC per century after ``trend_base_year``).
    """
    if len(years) == 0:
        raise InputError("synthetic climate needs at least one year")
    if not 0 <= params.noise_ar1 < 1:
        raise InputError("noise_ar1 must be in [0, 1)")
    if not 0 <= params.wet_prob <= 1:
        raise InputError("wet_prob must be in [0, 1]")
    start = dt.date(years[0], 1, 1)
    phase, since = _calendar(years[0], years[-1], params.coldest_doy, params.trend_base_year)
    n = len(phase)

    model_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _name_key(model)])))
    model_offset = params.model_spread_c * model_rng.uniform(-1.0, 1.0)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _name_key(model), region_index])))
    region_offset = params.region_spread_c * rng.uniform(-1.0, 1.0)
    eps = rng.standard_normal(n)
    u = 1.0 - rng.random(n)

    rid = region_id or f"R{region_index + 1:03d}"
    out = {}
    for scenario, warming in warmings.items():
        tmin, tmax, precip = _synth_fill(
            eps, u, phase, since,
            params.mean_c + model_offset + region_offset, params.amplitude_c, float(warming),
            params.diurnal_range_c, params.diurnal_seasonal_c,
            params.noise_sd_c, params.noise_ar1, params.wet_prob, params.wet_mean_mm,
        )  # fmt: skip
        out[scenario] = DailyWeatherSeries(rid, start, tmin, tmax, precip)
    return out


def synthesize_series(
    seed: int,
    years: range,
    region_index: int,
    warming: float = 0.0,
    params: SyntheticClimateParams = SyntheticClimateParams(),
    model: str = "synthetic",
    region_id: str | None = None,
) -> DailyWeatherSeries:
    """Single-scenario form of :func:`synthesize_scenarios`."""
    return synthesize_scenarios(seed, years, region_index, {"": warming}, params, model, region_id)[""]


def synthesize_climate(
    seed: int,
    years: range,
    regions: int,
    warming: float = 0.0,
    params: SyntheticClimateParams = SyntheticClimateParams(),
    model: str = "synthetic",
    scenario: str = "synthetic",
) -> Climate:
    """Seeded synthetic climate for ``regions`` regions over whole calendar ``years``."""
    if regions < 1:
        raise InputError("need at least one region")
    ids = region_ids(regions)
    return {
        rid: {(model, scenario): synthesize_series(seed, years, i, warming, params, model, rid)}
        for i, rid in enumerate(ids)
    }
