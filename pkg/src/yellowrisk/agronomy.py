"""Sowing feasibility, sowing cohorts and degree-day phenology of sugar beet."""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field

import numpy as np

from .climate import DailyWeatherSeries, daily_gdd_array, seq_sum
from .errors import InputError

# slack on rain sums so that e.g. 1.1 + 1.5 + 1.4 still counts as 4.0 mm
RAIN_TOLERANCE_MM = 1e-9


@dataclass(frozen=True)
class SowingRules:
    window_start: tuple[int, int] = (3, 10)
    window_end: tuple[int, int] = (5, 10)
    tmin_floor: float = -3.0
    tmin_span: tuple[int, int] = (-1, 3)
    past_rain_days: int = 5
    past_rain_max: float = 4.0
    fwd_rain_days: int = 3
    fwd_rain_max: float = 5.0
    days_to_full: int = 7

    def __post_init__(self):
        if not self.window_start < self.window_end:
            raise InputError("sowing window must start before it ends within one year")
        if min(self.past_rain_days, self.fwd_rain_days, self.days_to_full) < 1:
            raise InputError("sowing rule day counts must be >= 1")
        if self.tmin_span[0] > self.tmin_span[1]:
            raise InputError("tmin_span must be (low, high) with low <= high")

    @property
    def lookback(self) -> int:
        """Days needed before a candidate day."""
        return max(self.past_rain_days, -self.tmin_span[0], 0)

    @property
    def lookahead(self) -> int:
        """Days needed after a candidate day."""
        return max(self.tmin_span[1], self.fwd_rain_days - 1, 0)


@dataclass(frozen=True)
class SowingPlan:
    """Area fractions sown on each date. ``forced`` marks the no-feasible-day fallback."""

    cohorts: tuple[tuple[dt.date, float], ...]
    forced: bool = False

    def __post_init__(self):
        if not self.cohorts:
            raise InputError("a sowing plan needs at least one cohort")
        fractions = [f for _, f in self.cohorts]
        if any(f <= 0 for f in fractions):
            raise InputError("cohort fractions must be positive")
        if abs(sum(fractions) - 1.0) > 1e-12:
            raise InputError(f"cohort fractions sum to {sum(fractions)!r}, not 1")
        dates = [d for d, _ in self.cohorts]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise InputError("cohort dates must be strictly increasing")

    @property
    def dates(self) -> list[dt.date]:
        return [d for d, _ in self.cohorts]

    @property
    def fractions(self) -> list[float]:
        return [f for _, f in self.cohorts]


class Stage(enum.IntEnum):
    PreEmergence = 0
    Emergence = 1
    FourToSixLeaves = 2
    TwelveLeaves = 3
    EighteenLeaves = 4
    Maturity = 5


DEFAULT_STAGE_GDD = {
    Stage.Emergence: 180.0,
    Stage.FourToSixLeaves: 400.0,
    Stage.TwelveLeaves: 765.0,
    Stage.EighteenLeaves: 1070.0,
    Stage.Maturity: 1200.0,
}


@dataclass(frozen=True)
class PhenologyParams:
    leaf_intercept: float = -3.0834
    leaf_slope: float = 0.019734
    gdd_base: float = 0.0
    stage_gdd: dict[Stage, float] = field(default_factory=lambda: dict(DEFAULT_STAGE_GDD))

    def __post_init__(self):
        if set(self.stage_gdd) != set(DEFAULT_STAGE_GDD):
            raise InputError("stage_gdd needs a threshold for every stage from Emergence to Maturity")
        thresholds = [self.stage_gdd[s] for s in sorted(self.stage_gdd)]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise InputError("stage GDD thresholds must be strictly increasing")

    @property
    def emergence_gdd(self) -> float:
        return self.stage_gdd[Stage.Emergence]


def _check_feasible(tmin: np.ndarray, precip: np.ndarray, i: int, rules: SowingRules) -> bool:
    lo, hi = rules.tmin_span
    for k in range(i + lo, i + hi + 1):
        if not tmin[k] > rules.tmin_floor:
            return False
    past = seq_sum(precip[i - rules.past_rain_days : i])
    if past > rules.past_rain_max + RAIN_TOLERANCE_MM:
        return False
    fwd = seq_sum(precip[i : i + rules.fwd_rain_days])
    return fwd <= rules.fwd_rain_max + RAIN_TOLERANCE_MM


def is_feasible_sowing_day(series: DailyWeatherSeries, day: dt.date, rules: SowingRules = SowingRules()) -> bool:
    """Whether sowing can happen on ``day``.

    All three conditions must hold: tmin strictly above the floor on every day
    of ``tmin_span`` around ``day``; rain over the ``past_rain_days`` before
    ``day`` (excluding it) at most ``past_rain_max``; rain over ``day`` and the
    following days (``fwd_rain_days`` in total) at most ``fwd_rain_max``.
    """
    series.span(day - dt.timedelta(days=rules.lookback), day + dt.timedelta(days=rules.lookahead))
    return _check_feasible(series.tmin, series.precip, series.index(day), rules)


def build_sowing_plan(series: DailyWeatherSeries, year: int, rules: SowingRules = SowingRules()) -> SowingPlan:
    first = dt.date(year, *rules.window_start)
    last = dt.date(year, *rules.window_end)
    series.span(first - dt.timedelta(days=rules.lookback), last + dt.timedelta(days=rules.lookahead))
    i0 = series.index(first)
    n_days = (last - first).days + 1

    feasible = [
        first + dt.timedelta(days=k)
        for k in range(n_days)
        if _check_feasible(series.tmin, series.precip, i0 + k, rules)
    ]
    full = rules.days_to_full
    if not feasible:
        return SowingPlan(((last, 1.0),), forced=True)
    chosen = feasible[:full]
    fractions = [1.0 / full] * len(chosen)
    if len(chosen) < full:
        fractions[-1] = 1.0 / full + (full - len(chosen)) / full
    return SowingPlan(tuple(zip(chosen, fractions)))


def gdd_timeline(series: DailyWeatherSeries, sowing_date: dt.date, until: dt.date, params: PhenologyParams) -> np.ndarray:
    """Degree-days since sowing for every day from ``sowing_date`` (0) to ``until``."""
    sl = series.span(sowing_date, until)
    daily = daily_gdd_array(series.tmin[sl], series.tmax[sl], params.gdd_base)
    daily[0] = 0.0
    return np.add.accumulate(daily)


def gdd_since_sowing(
    series: DailyWeatherSeries, sowing_date: dt.date, at: dt.date, params: PhenologyParams = PhenologyParams()
) -> float:
    if at < sowing_date:
        raise InputError(f"{at} is before sowing date {sowing_date}")
    return float(gdd_timeline(series, sowing_date, at, params)[-1])


def leaf_count(gdd: float, params: PhenologyParams = PhenologyParams()) -> float:
    return max(0.0, params.leaf_intercept + params.leaf_slope * gdd)


def stage_at(gdd: float, params: PhenologyParams = PhenologyParams()) -> Stage:
    stage = Stage.PreEmergence
    for s in sorted(params.stage_gdd):
        if gdd >= params.stage_gdd[s]:
            stage = s
    return stage
