"""Yield-loss rates from incidence curves and stage-dependent loss tables.

Each day's newly infected fraction of a cohort is charged the loss rate of the
cohort's development stage on that day; stages are measured in degree-days
since sowing and the rate between table knots comes from a monotone cubic.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field

import numpy as np

from .agronomy import PhenologyParams, gdd_timeline
from .climate import DailyWeatherSeries, doy_to_date
from .epidemiology import IncidenceTrace
from .errors import CoverageError, InputError, InvariantError
from .interpolate import MonotoneCubic

INVARIANT_SLACK = 1e-12


class VirusKind(str, enum.Enum):
    Polerovirus = "Polerovirus"
    BYV = "BYV"


DEFAULT_KNOTS = {
    VirusKind.Polerovirus: ((400.0, 0.30), (765.0, 0.19), (1070.0, 0.11), (1200.0, 0.03)),
    VirusKind.BYV: ((400.0, 0.50), (765.0, 0.29), (1070.0, 0.31), (1200.0, 0.23)),
}


@dataclass(frozen=True)
class LossTable:
    """Loss rate per GDD-since-sowing at inoculation for one virus.

    ``prevalence`` multiplies every cohort loss; it defaults to 1 (no effect).
    """

    virus: VirusKind
    knots: tuple[tuple[float, float], ...]
    prevalence: float = 1.0
    interpolator: MonotoneCubic = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        gdd = [k[0] for k in self.knots]
        rates = [k[1] for k in self.knots]
        if len(self.knots) < 2:
            raise InputError(f"{self.virus.value}: loss table needs at least two knots")
        if any(b <= a for a, b in zip(gdd, gdd[1:])):
            raise InputError(f"{self.virus.value}: knot GDDs must be strictly increasing")
        if any(not 0 <= r <= 1 for r in rates):
            raise InputError(f"{self.virus.value}: loss rates must lie in [0, 1]")
        if not 0 <= self.prevalence <= 1:
            raise InputError("prevalence factor must lie in [0, 1]")
        object.__setattr__(self, "interpolator", MonotoneCubic(gdd, rates))

    @classmethod
    def default(cls, virus: VirusKind | str) -> LossTable:
        virus = VirusKind(virus)
        return cls(virus, DEFAULT_KNOTS[virus])

    @property
    def max_rate(self) -> float:
        return max(k[1] for k in self.knots)


@dataclass(frozen=True)
class CohortLoss:
    sowing_date: dt.date
    area_fraction: float
    loss_rate: float
    final_incidence: float


def loss_rate_at(gdd, table: LossTable):
    """Interpolated loss rate; held at the end knot values outside the table."""
    if np.any(np.asarray(gdd) < 0):
        raise InputError("GDD must be >= 0")
    return table.interpolator(gdd)


def accumulate_loss(y: np.ndarray, rates: np.ndarray) -> float:
    """Sum of daily incidence increments weighted by that day's loss rate.

    ``y[0]`` is the incidence on the first day of the window and ``rates[k]``
    the loss rate on day ``k``; the increment on day ``k >= 1`` is
    ``y[k] - y[k-1]``.
    """
    y = np.asarray(y, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    if len(y) != len(rates):
        raise InputError("incidence and rate sequences must have equal length")
    if len(y) < 2:
        return 0.0
    return float(np.sum(np.diff(y) * rates[1:]))


def cohort_loss(
    sowing_date: dt.date,
    series: DailyWeatherSeries,
    trace: IncidenceTrace,
    table: LossTable,
    phen: PhenologyParams,
    harvest: dt.date,
    *,
    area_fraction: float = 1.0,
    rebase: bool = True,
) -> CohortLoss:
    """Annual loss rate of one sowing cohort.

    The cohort's epidemic starts at ``max(first flight, emergence)``. With
    ``rebase`` the incidence clock restarts at 0 on that day; without it the
    cohort follows the regional curve and the incidence already reached when
    it emerges is charged at the emergence-day rate.

    ``trace`` must hold daily incidence with ``trace.y[0]`` at the flight day
    ``trace.t0`` (day of year in ``harvest.year``).
    """
    if harvest <= sowing_date:
        raise InputError("harvest must come after sowing")
    if trace.step != 1.0:
        raise InputError("cohort_loss needs a daily incidence trace")
    flight = doy_to_date(harvest.year, trace.t0)
    gdd = gdd_timeline(series, sowing_date, harvest, phen)
    emerged = np.flatnonzero(gdd >= phen.emergence_gdd)
    if len(emerged) == 0:
        return CohortLoss(sowing_date, area_fraction, 0.0, 0.0)
    start = max(flight, sowing_date + dt.timedelta(days=int(emerged[0])))
    if start > harvest:
        return CohortLoss(sowing_date, area_fraction, 0.0, 0.0)

    n = (harvest - start).days
    offset = 0 if rebase else (start - flight).days
    if len(trace.y) < offset + n + 1:
        raise CoverageError(f"incidence trace too short: need {offset + n + 1} days, have {len(trace.y)}")
    y = np.asarray(trace.y[offset : offset + n + 1], dtype=np.float64)
    first = (start - sowing_date).days
    rates = loss_rate_at(gdd[first : first + n + 1], table)

    loss = accumulate_loss(y, rates) + y[0] * float(rates[0])
    loss *= table.prevalence
    final = float(y[-1])
    if not (-INVARIANT_SLACK <= loss <= min(1.0, final * table.max_rate) + INVARIANT_SLACK):
        raise InvariantError(f"cohort loss {loss} outside [0, {min(1.0, final * table.max_rate)}]")
    return CohortLoss(sowing_date, area_fraction, min(max(loss, 0.0), 1.0), final)


def coinfection_loss(losses: list[CohortLoss]) -> CohortLoss:
    """Co-infected cohorts suffer the most severe single-virus loss, not the sum."""
    if not losses:
        raise InputError("need at least one cohort loss")
    ref = losses[0]
    for other in losses[1:]:
        if other.sowing_date != ref.sowing_date or other.area_fraction != ref.area_fraction:
            raise InputError("co-infection losses must come from the same cohort")
    return CohortLoss(
        ref.sowing_date,
        ref.area_fraction,
        max(c.loss_rate for c in losses),
        max(c.final_incidence for c in losses),
    )
