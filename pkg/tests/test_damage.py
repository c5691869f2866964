from __future__ import annotations

import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import PchipInterpolator

from conftest import make_series
from yellowrisk.agronomy import PhenologyParams, gdd_timeline
from yellowrisk.climate import doy_to_date
from yellowrisk.damage import (
    DEFAULT_KNOTS,
    CohortLoss,
    LossTable,
    VirusKind,
    accumulate_loss,
    cohort_loss,
    coinfection_loss,
    loss_rate_at,
)
from yellowrisk.epidemiology import INCIDENCE_SETS, IncidenceTrace, incidence_closed_form, incidence_trace
from yellowrisk.errors import CoverageError, InputError

BYV = LossTable.default("BYV")
POLERO = LossTable.default("Polerovirus")
PHEN = PhenologyParams()
SOW = dt.date(2021, 3, 20)
HARVEST = dt.date(2021, 10, 1)
# 10 degree-days per day: emergence (180) on day 18, i.e. 7 April
SERIES = make_series(400, dt.date(2021, 1, 1), tmin=10.0, tmax=10.0)
EMERGENCE = SOW + dt.timedelta(days=18)


def _trace(flight: dt.date, P: float = 0.8, name: str = "QiN") -> IncidenceTrace:
    t0 = flight.timetuple().tm_yday
    return incidence_trace(t0, P, INCIDENCE_SETS[name], (HARVEST - flight).days)


class TestLossRate:
    def test_plateau_before_first_knot(self):
        assert loss_rate_at(400.0, BYV) == 0.50
        assert loss_rate_at(200.0, BYV) == 0.50

    def test_between_knots(self):
        v = loss_rate_at(582.5, BYV)
        assert 0.29 < v < 0.50
        x, y = zip(*DEFAULT_KNOTS[VirusKind.BYV])
        assert v == pytest.approx(float(PchipInterpolator(x, y)(582.5)), abs=1e-12)
        assert v == pytest.approx(0.35282, abs=1e-5)

    def test_byv_dominates_polerovirus(self):
        g = np.linspace(0, 2000, 4001)
        assert np.all(loss_rate_at(g, BYV) >= loss_rate_at(g, POLERO))

    def test_negative_gdd_rejected(self):
        with pytest.raises(InputError):
            loss_rate_at(-1.0, BYV)

    @pytest.mark.parametrize(
        "knots, prevalence",
        [(((400.0, 0.3),), 1.0), (((400.0, 0.3), (300.0, 0.2)), 1.0), (((400.0, 1.3), (500.0, 0.2)), 1.0),
         (((400.0, 0.3), (500.0, 0.2)), 1.5)],
    )  # fmt: skip
    def test_table_validation(self, knots, prevalence):
        with pytest.raises(InputError):
            LossTable(VirusKind.BYV, knots, prevalence)


class TestAccumulate:
    def test_two_day_toy(self):
        assert accumulate_loss(np.array([0.0, 0.1, 0.3]), np.array([0.9, 0.5, 0.3])) == pytest.approx(0.11, abs=1e-15)

    def test_short_and_mismatched(self):
        assert accumulate_loss(np.array([0.2]), np.array([0.5])) == 0.0
        with pytest.raises(InputError):
            accumulate_loss(np.zeros(3), np.zeros(2))


class TestCohortLoss:
    def test_flight_after_harvest_gives_zero(self):
        trace = IncidenceTrace(HARVEST.timetuple().tm_yday + 5, np.zeros(10))
        c = cohort_loss(SOW, SERIES, trace, BYV, PHEN, HARVEST)
        assert c.loss_rate == 0.0 and c.final_incidence == 0.0

    def test_never_emerges_gives_zero(self):
        cold = make_series(400, dt.date(2021, 1, 1), tmin=-5.0, tmax=-1.0)
        c = cohort_loss(SOW, cold, _trace(dt.date(2021, 4, 1)), BYV, PHEN, HARVEST)
        assert c.loss_rate == 0.0

    def test_matches_hand_computation(self):
        flight = dt.date(2021, 5, 1)
        trace = _trace(flight)
        c = cohort_loss(SOW, SERIES, trace, BYV, PHEN, HARVEST, area_fraction=0.25)
        n = (HARVEST - flight).days
        gdd = 10.0 * ((flight - SOW).days + np.arange(n + 1))
        expected = float(np.sum(np.diff(trace.y[: n + 1]) * loss_rate_at(gdd[1:], BYV)))
        assert c.loss_rate == pytest.approx(expected, rel=1e-13)
        assert c.final_incidence == trace.y[n]
        assert c.area_fraction == 0.25

    def test_rebase_restarts_clock_at_emergence(self):
        flight = dt.date(2021, 3, 25)
        trace = _trace(flight)
        on = cohort_loss(SOW, SERIES, trace, POLERO, PHEN, HARVEST)
        n = (HARVEST - EMERGENCE).days
        rates = loss_rate_at(180.0 + 10.0 * np.arange(n + 1), POLERO)
        assert on.loss_rate == pytest.approx(accumulate_loss(trace.y[: n + 1], rates), rel=1e-13)

    def test_rebase_off_charges_lump_at_emergence(self):
        flight = dt.date(2021, 3, 25)
        trace = _trace(flight)
        off = cohort_loss(SOW, SERIES, trace, POLERO, PHEN, HARVEST, rebase=False)
        k = (EMERGENCE - flight).days
        n = (HARVEST - EMERGENCE).days
        y = trace.y[k : k + n + 1]
        rates = loss_rate_at(180.0 + 10.0 * np.arange(n + 1), POLERO)
        assert y[0] > 0
        assert off.loss_rate == pytest.approx(y[0] * rates[0] + accumulate_loss(y, rates), rel=1e-13)
        assert off.final_incidence == y[-1]

    def test_short_trace_is_coverage_error(self):
        trace = IncidenceTrace(dt.date(2021, 5, 1).timetuple().tm_yday, np.zeros(20))
        with pytest.raises(CoverageError):
            cohort_loss(SOW, SERIES, trace, BYV, PHEN, HARVEST)

    def test_harvest_before_sowing_rejected(self):
        with pytest.raises(InputError):
            cohort_loss(SOW, SERIES, _trace(dt.date(2021, 5, 1)), BYV, PHEN, SOW)

    def test_prevalence_scales_loss(self):
        trace = _trace(dt.date(2021, 5, 1))
        full = cohort_loss(SOW, SERIES, trace, BYV, PHEN, HARVEST).loss_rate
        half = cohort_loss(SOW, SERIES, trace, LossTable(VirusKind.BYV, BYV.knots, 0.5), PHEN, HARVEST).loss_rate
        assert half == pytest.approx(0.5 * full, rel=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(60, 250),
        st.floats(0.0, 1.0),
        st.sampled_from(sorted(INCIDENCE_SETS)),
        st.sampled_from(list(VirusKind)),
        st.booleans(),
    )
    def test_bounded_by_final_incidence(self, doy, P, name, virus, rebase):
        table = LossTable.default(virus)
        flight = doy_to_date(2021, doy)
        c = cohort_loss(SOW, SERIES, _trace(flight, P, name), table, PHEN, HARVEST, rebase=rebase)
        assert 0.0 <= c.loss_rate <= c.final_incidence * table.max_rate + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 0.9), st.floats(0.0, 0.1), st.integers(90, 200))
    def test_monotone_in_incidence_curve(self, P, dP, doy):
        # Polerovirus rates never increase with GDD, so a pointwise larger curve costs more
        flight = doy_to_date(2021, doy)
        low = cohort_loss(SOW, SERIES, _trace(flight, P), POLERO, PHEN, HARVEST)
        high = cohort_loss(SOW, SERIES, _trace(flight, min(P + dP, 1.0)), POLERO, PHEN, HARVEST)
        assert high.loss_rate >= low.loss_rate - 1e-15

    @pytest.mark.parametrize("scale", [0.5, 0.9])
    def test_scaled_curve_scales_loss(self, scale):
        trace = _trace(dt.date(2021, 5, 1))
        base = cohort_loss(SOW, SERIES, trace, BYV, PHEN, HARVEST).loss_rate
        scaled = cohort_loss(SOW, SERIES, IncidenceTrace(trace.t0, trace.y * scale), BYV, PHEN, HARVEST).loss_rate
        assert scaled == pytest.approx(scale * base, rel=1e-13)
        assert scaled <= base


@pytest.mark.parametrize("name", sorted(INCIDENCE_SETS))
def test_halving_step_with_daily_stages(name):
    """Half-day incidence steps charged at the stage of the day they fall in."""
    params = INCIDENCE_SETS[name]
    flight = dt.date(2021, 5, 1)
    t0 = flight.timetuple().tm_yday
    n = (HARVEST - flight).days
    gdd = gdd_timeline(SERIES, SOW, HARVEST, PHEN)[(flight - SOW).days :]
    rates = loss_rate_at(gdd, BYV)
    daily = accumulate_loss(incidence_closed_form(t0 + np.arange(n + 1.0), t0, 0.7, params), rates)
    half_t = t0 + 0.5 * np.arange(2 * n + 1)
    y_half = incidence_closed_form(half_t, t0, 0.7, params)
    day_of_step = np.ceil(0.5 * np.arange(1, 2 * n + 1)).astype(int)
    halved = float(np.sum(np.diff(y_half) * rates[day_of_step]))
    assert abs(halved - daily) < 1e-4


class TestCoinfection:
    def test_takes_maximum(self):
        a = CohortLoss(SOW, 0.5, 0.12, 0.4)
        b = CohortLoss(SOW, 0.5, 0.31, 0.3)
        c = coinfection_loss([a, b])
        assert c.loss_rate == 0.31 and c.final_incidence == 0.4

    def test_single_and_zero(self):
        a = CohortLoss(SOW, 1.0, 0.2, 0.5)
        assert coinfection_loss([a]) == a
        z = CohortLoss(SOW, 1.0, 0.0, 0.0)
        assert coinfection_loss([z, z]).loss_rate == 0.0

    def test_never_exceeds_sum(self):
        trace = _trace(dt.date(2021, 5, 1))
        parts = [cohort_loss(SOW, SERIES, trace, t, PHEN, HARVEST) for t in (BYV, POLERO)]
        both = coinfection_loss(parts).loss_rate
        assert max(p.loss_rate for p in parts) == both <= sum(p.loss_rate for p in parts)

    def test_mismatched_cohorts_rejected(self):
        with pytest.raises(InputError):
            coinfection_loss([CohortLoss(SOW, 1.0, 0.1, 0.1), CohortLoss(HARVEST, 1.0, 0.1, 0.1)])
        with pytest.raises(InputError):
            coinfection_loss([])
