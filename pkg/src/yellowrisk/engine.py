"""Batch evaluation of the whole loss chain for one regional series.

``simulate_series`` runs sowing, phenology, flight, incidence and loss for
every harvest year of a series in one compiled pass. It reproduces the
per-operation functions in :mod:`yellowrisk.agronomy`,
:mod:`yellowrisk.epidemiology` and :mod:`yellowrisk.damage` (the test suite
checks this) but avoids per-day Python overhead, which matters for sweeps of
several million region-years.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

from .agronomy import RAIN_TOLERANCE_MM, PhenologyParams, SowingRules
from .climate import DailyWeatherSeries
from .damage import LossTable, VirusKind
from .epidemiology import DEFAULT_FLIGHT_MODELS, INCIDENCE_SETS, AbundanceModel, FlightModel, IncidenceParams
from .errors import CoverageError, InputError

DEFAULT_HARVEST = (9, 30)


@dataclass(frozen=True)
class SimulationModel:
    """Every parameter of the loss chain except the factor choices of a run."""

    sowing: SowingRules = SowingRules()
    phenology: PhenologyParams = PhenologyParams()
    flight_models: Mapping[str, FlightModel] = field(default_factory=lambda: dict(DEFAULT_FLIGHT_MODELS))
    abundance: AbundanceModel = AbundanceModel()
    incidence_sets: Mapping[str, IncidenceParams] = field(default_factory=lambda: dict(INCIDENCE_SETS))
    loss_tables: Mapping[VirusKind, LossTable] = field(
        default_factory=lambda: {v: LossTable.default(v) for v in VirusKind}
    )
    harvest: tuple[int, int] = DEFAULT_HARVEST
    rebase_at_emergence: bool = True

    def harvest_date(self, year: int) -> dt.date:
        return dt.date(year, *self.harvest)


@dataclass(frozen=True)
class YearLayout:
    """Series indices of every window each harvest year needs."""

    years: np.ndarray
    jan1: np.ndarray
    sow_first: np.ndarray
    sow_last: np.ndarray
    harvest: np.ndarray
    flight_first: np.ndarray
    flight_last: np.ndarray
    abundance_first: np.ndarray
    abundance_last: np.ndarray


def required_span(year: int, model: SimulationModel, flights: Sequence[str]) -> tuple[dt.date, dt.date]:
    """First and last day a harvest year reads from the series."""
    rules = model.sowing
    firsts = [dt.date(year, *rules.window_start) - dt.timedelta(days=rules.lookback)]
    lasts = [dt.date(year, *rules.window_end) + dt.timedelta(days=rules.lookahead), model.harvest_date(year)]
    for w in [model.flight_models[f].window for f in flights] + [model.abundance.window]:
        a, b = w.resolve(year)
        firsts.append(a)
        lasts.append(b)
    return min(firsts), max(lasts)


def covered_years(start: dt.date, end: dt.date, model: SimulationModel, flights: Sequence[str]) -> list[int]:
    """Harvest years whose every window lies inside ``[start, end]``."""
    out = []
    for year in range(start.year, end.year + 1):
        a, b = required_span(year, model, flights)
        if a >= start and b <= end:
            out.append(year)
    return out


def year_layout(
    start: dt.date, length: int, years: Sequence[int], model: SimulationModel, flights: Sequence[str], region: str = "?"
) -> YearLayout:
    end = start + dt.timedelta(days=length - 1)

    def idx(day: dt.date, year: int) -> int:
        if day < start or day > end:
            raise CoverageError(f"region {region}, year {year}: needs {day}, series covers {start}..{end}")
        return (day - start).days

    rules = model.sowing
    n = len(years)
    lay = {k: np.empty(n, dtype=np.int64) for k in ("jan1", "sow_first", "sow_last", "harvest", "ab_first", "ab_last")}
    fl_first = np.empty((len(flights), n), dtype=np.int64)
    fl_last = np.empty((len(flights), n), dtype=np.int64)
    for j, year in enumerate(years):
        a, b = required_span(year, model, flights)
        idx(a, year)
        idx(b, year)
        lay["jan1"][j] = (dt.date(year, 1, 1) - start).days
        lay["sow_first"][j] = idx(dt.date(year, *rules.window_start), year)
        lay["sow_last"][j] = idx(dt.date(year, *rules.window_end), year)
        lay["harvest"][j] = idx(model.harvest_date(year), year)
        a, b = model.abundance.window.resolve(year)
        lay["ab_first"][j], lay["ab_last"][j] = idx(a, year), idx(b, year)
        for f, name in enumerate(flights):
            a, b = model.flight_models[name].window.resolve(year)
            fl_first[f, j], fl_last[f, j] = idx(a, year), idx(b, year)
    return YearLayout(
        np.asarray(years, dtype=np.int64),
        lay["jan1"],
        lay["sow_first"],
        lay["sow_last"],
        lay["harvest"],
        fl_first,
        fl_last,
        lay["ab_first"],
        lay["ab_last"],
    )


@numba.njit(cache=True)
def _round_half_away(x):
    r = math.floor(abs(x) + 0.5)
    return r if x >= 0 else -r


@numba.njit(cache=True)
def _window_gdd(tmin, tmax, first, last, base):
    acc = 0.0
    for d in range(first, last + 1):
        acc += max(0.0, (tmin[d] + tmax[d]) / 2 - base)
    return acc


@numba.njit(cache=True)
def _seq_sum(x, first, last):
    acc = 0.0
    for d in range(first, last + 1):
        acc += x[d]
    return acc


@numba.njit(cache=True)
def _kernel(
    tmin, tmax, precip,
    jan1, sow_first, sow_last, harvest,
    fl_first, fl_last, fl_icpt, fl_coef, fl_base,
    ab_first, ab_last, ab_icpt, ab_coef, ab_base, ab_lnbase,
    inc_p, inc_rp, inc_rs,
    tmin_floor, span_lo, span_hi, past_days, past_max, fwd_days, fwd_max, days_to_full, rain_tol,
    phen_base, emergence_gdd,
    kx, ky, kc1, kc2, kc3, knum, prevalence,
    combo_f, combo_i, rebase,
):  # fmt: skip
    n_years = harvest.shape[0]
    n_f = fl_icpt.shape[0]
    n_i = inc_p.shape[0]
    n_v = knum.shape[0]
    n_m = combo_f.shape[0]
    D = days_to_full

    t0 = np.empty((n_years, n_f), dtype=np.int64)
    abundance = np.empty(n_years)
    n_coh = np.zeros(n_years, dtype=np.int64)
    coh_idx = np.full((n_years, D), -1, dtype=np.int64)
    coh_frac = np.zeros((n_years, D))
    forced = np.zeros(n_years, dtype=np.bool_)
    emergence = np.full((n_years, D), -1, dtype=np.int64)
    loss = np.zeros((n_years, n_m, D, n_v))
    final = np.zeros((n_years, n_m, D))

    width = 1
    for y in range(n_years):
        width = max(width, harvest[y] - min(sow_first[y], jan1[y]) + 1)
    gbuf = np.empty(width)
    lbuf = np.empty((n_v, width))
    dcurve = np.empty((n_i, width))
    ycurve = np.empty((n_i, width))
    m_ts = np.empty(n_m, dtype=np.int64)
    m_off = np.empty(n_m, dtype=np.int64)

    for y in range(n_years):
        hv = harvest[y]
        for f in range(n_f):
            g = _window_gdd(tmin, tmax, fl_first[f, y], fl_last[f, y], fl_base[f])
            doy = _round_half_away(fl_icpt[f] + fl_coef[f] * g)
            t0[y, f] = int(min(366.0, max(1.0, doy)))
        g = _window_gdd(tmin, tmax, ab_first[y], ab_last[y], ab_base)
        abundance[y] = math.exp((ab_icpt + ab_coef * g) * ab_lnbase)

        # sowing cohorts
        k = 0
        for d in range(sow_first[y], sow_last[y] + 1):
            if k >= D:
                break
            ok = True
            for j in range(d + span_lo, d + span_hi + 1):
                if not tmin[j] > tmin_floor:
                    ok = False
                    break
            if not ok:
                continue
            if _seq_sum(precip, d - past_days, d - 1) > past_max + rain_tol:
                continue
            if _seq_sum(precip, d, d + fwd_days - 1) > fwd_max + rain_tol:
                continue
            coh_idx[y, k] = d
            coh_frac[y, k] = 1.0 / D
            k += 1
        if k == 0:
            forced[y] = True
            coh_idx[y, 0] = sow_last[y]
            coh_frac[y, 0] = 1.0
            k = 1
        elif k < D:
            coh_frac[y, k - 1] = 1.0 / D + (D - k) / D
        n_coh[y] = k

        # incidence curves from the earliest flight day, per incidence set
        first_flight = hv + 1
        for f in range(n_f):
            first_flight = min(first_flight, jan1[y] + t0[y, f] - 1)
        n_curve = hv - first_flight + 1
        for i in range(n_i):
            if n_curve <= 0:
                break
            P = -math.expm1(-inc_p[i] * abundance[y])
            a = inc_rp[i] * P
            rate = a + inc_rs[i]
            prev = 0.0
            ycurve[i, 0] = 0.0
            dcurve[i, 0] = 0.0
            for t in range(1, n_curve):
                if a > 0.0:
                    em = math.expm1(-rate * t)
                    val = a * -em / (a + inc_rs[i] * (1.0 + em))
                else:
                    val = 0.0
                if val < prev:
                    val = prev
                ycurve[i, t] = val
                dcurve[i, t] = val - prev
                prev = val

        for c in range(n_coh[y]):
            s = coh_idx[y, c]
            g = 0.0
            gbuf[0] = 0.0
            em = s if emergence_gdd <= 0.0 else -1
            for d in range(s + 1, hv + 1):
                g += max(0.0, (tmin[d] + tmax[d]) / 2 - phen_base)
                gbuf[d - s] = g
                if em < 0 and g >= emergence_gdd:
                    em = d
            emergence[y, c] = em
            if em < 0:
                continue
            for v in range(n_v):
                # GDD never decreases, so the knot interval only moves forward
                nk = knum[v]
                kk = 0
                for d in range(em, hv + 1):
                    gd = gbuf[d - s]
                    if gd <= kx[v, 0]:
                        lbuf[v, d - s] = ky[v, 0]
                    elif gd >= kx[v, nk - 1]:
                        lbuf[v, d - s] = ky[v, nk - 1]
                    else:
                        while kk < nk - 2 and gd >= kx[v, kk + 1]:
                            kk += 1
                        h = gd - kx[v, kk]
                        lbuf[v, d - s] = ky[v, kk] + h * (kc1[v, kk] + h * (kc2[v, kk] + h * kc3[v, kk]))
            for m in range(n_m):
                fday = jan1[y] + t0[y, combo_f[m]] - 1
                i = combo_i[m]
                ts = max(fday, em)
                m_ts[m] = -1
                if ts > hv:
                    continue
                n = hv - ts
                off = 0 if rebase else ts - fday
                final[y, m, c] = ycurve[i, off + n]
                # combos sharing curve, start and offset give identical sums
                shared = -1
                for m2 in range(m):
                    if combo_i[m2] == i and m_ts[m2] == ts and m_off[m2] == off:
                        shared = m2
                        break
                m_ts[m] = ts
                m_off[m] = off
                if shared >= 0:
                    for v in range(n_v):
                        loss[y, m, c, v] = loss[y, shared, c, v]
                    continue
                b = ts - s
                for v in range(n_v):
                    acc = ycurve[i, off] * lbuf[v, b]
                    for kk in range(1, n + 1):
                        acc += dcurve[i, off + kk] * lbuf[v, b + kk]
                    loss[y, m, c, v] = min(1.0, max(0.0, acc * prevalence[v]))
    return t0, abundance, n_coh, coh_idx, coh_frac, forced, emergence, loss, final


@dataclass
class SeriesResult:
    """Raw per-year output of :func:`simulate_series`.

    Arrays are indexed ``[year, ...]``; ``combos`` lists the
    ``(flight_model, incidence_set)`` pairs along the combo axis and
    ``viruses`` the loss tables along the virus axis.
    """

    region_id: str
    years: np.ndarray
    combos: list[tuple[str, str]]
    viruses: list[VirusKind]
    t0: np.ndarray
    abundance: np.ndarray
    n_cohorts: np.ndarray
    sowing_index: np.ndarray
    fractions: np.ndarray
    forced: np.ndarray
    emergence_index: np.ndarray
    cohort_loss: np.ndarray
    final_incidence: np.ndarray
    flights: list[str]

    def region_loss_rate(self, combo: tuple[str, str], viruses: Sequence[VirusKind]) -> np.ndarray:
        """Area-weighted loss rate per year; co-infection keeps the worst virus."""
        m = self.combos.index(combo)
        vs = [self.viruses.index(VirusKind(v)) for v in viruses]
        per_cohort = self.cohort_loss[:, m][..., vs].max(axis=-1)
        rate = np.zeros(len(self.years))
        for c in range(per_cohort.shape[1]):
            rate = rate + self.fractions[:, c] * per_cohort[:, c]
        return np.clip(rate, 0.0, 1.0)


def _spline_arrays(tables: Sequence[LossTable]):
    nk = max(len(t.knots) for t in tables)
    shape = (len(tables), nk)
    kx, ky = np.zeros(shape), np.zeros(shape)
    c1, c2, c3 = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for v, t in enumerate(tables):
        ip = t.interpolator
        n = len(ip.x)
        kx[v, :n], ky[v, :n] = ip.x, ip.y
        c1[v, : n - 1], c2[v, : n - 1], c3[v, : n - 1] = ip.c1, ip.c2, ip.c3
    return kx, ky, c1, c2, c3, np.array([len(t.knots) for t in tables], dtype=np.int64)


def simulate_series(
    series: DailyWeatherSeries,
    years: Sequence[int],
    model: SimulationModel,
    combos: Sequence[tuple[str, str]],
    viruses: Sequence[VirusKind] = tuple(VirusKind),
    layout: YearLayout | None = None,
) -> SeriesResult:
    """Evaluate every harvest year in ``years`` for the given combos and viruses."""
    combos = list(combos)
    viruses = [VirusKind(v) for v in viruses]
    if not combos or not viruses or len(years) == 0:
        raise InputError("need at least one year, one combo and one virus")
    flights = sorted({f for f, _ in combos})
    incs = sorted({i for _, i in combos})
    for f in flights:
        if f not in model.flight_models:
            raise InputError(f"unknown flight model {f!r}")
    for i in incs:
        if i not in model.incidence_sets:
            raise InputError(f"unknown incidence set {i!r}")
    if layout is None:
        layout = year_layout(series.start, len(series), years, model, flights, series.region_id)
    elif not np.array_equal(layout.years, np.asarray(years)):
        raise InputError("layout years do not match")

    fms = [model.flight_models[f] for f in flights]
    ims = [model.incidence_sets[i] for i in incs]
    tables = [model.loss_tables[v] for v in viruses]
    rules, phen, ab = model.sowing, model.phenology, model.abundance
    kx, ky, c1, c2, c3, knum = _spline_arrays(tables)
    out = _kernel(
        series.tmin, series.tmax, series.precip,
        layout.jan1, layout.sow_first, layout.sow_last, layout.harvest,
        layout.flight_first, layout.flight_last,
        np.array([m.intercept for m in fms]), np.array([m.temp_coef for m in fms]),
        np.array([m.window.base for m in fms]),
        layout.abundance_first, layout.abundance_last,
        float(ab.intercept), float(ab.temp_coef), float(ab.window.base), math.log(ab.log_base),
        np.array([p.p for p in ims]), np.array([p.r_p for p in ims]), np.array([p.r_s for p in ims]),
        float(rules.tmin_floor), int(rules.tmin_span[0]), int(rules.tmin_span[1]),
        int(rules.past_rain_days), float(rules.past_rain_max),
        int(rules.fwd_rain_days), float(rules.fwd_rain_max),
        int(rules.days_to_full), RAIN_TOLERANCE_MM,
        float(phen.gdd_base), float(phen.emergence_gdd),
        kx, ky, c1, c2, c3, knum, np.array([t.prevalence for t in tables]),
        np.array([flights.index(f) for f, _ in combos], dtype=np.int64),
        np.array([incs.index(i) for _, i in combos], dtype=np.int64),
        bool(model.rebase_at_emergence),
    )  # fmt: skip
    t0, abundance, n_coh, coh_idx, coh_frac, forced, emergence, loss, final = out
    return SeriesResult(
        series.region_id,
        layout.years,
        combos,
        viruses,
        t0,
        abundance,
        n_coh,
        coh_idx,
        coh_frac,
        forced,
        emergence,
        loss,
        final,
        flights,
    )
