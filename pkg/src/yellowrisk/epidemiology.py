"""Aphid first flight and abundance, primary inoculum and incidence curves.

The incidence model couples primary infection by immigrant aphids and
secondary plant-to-plant spread::

    dY_p/dt = r_p * P * (1 - Y)
    dY_s/dt = r_s * Y * (1 - Y)          Y = Y_p + Y_s,  Y(t0) = 0

``incidence_closed_form`` evaluates the analytic solution for ``Y``;
``incidence_ode_oracle`` integrates the two components with classical RK4 and
is kept as an independent check.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .climate import DailyWeatherSeries, GddWindow, window_gdd
from .errors import InputError


@dataclass(frozen=True)
class FlightModel:
    """First-flight regression: day-of-year = intercept + temp_coef * GDD(window)."""

    name: str
    intercept: float
    temp_coef: float
    window: GddWindow


@dataclass(frozen=True)
class AbundanceModel:
    """Spring migrant count: log_base ** (intercept + temp_coef * GDD(window))."""

    intercept: float = -2.263
    temp_coef: float = 0.0423
    window: GddWindow = GddWindow((12, 3), (3, 29))
    log_base: float = math.e

    def __post_init__(self):
        if not self.log_base > 1:
            raise InputError("abundance log base must be > 1")


@dataclass(frozen=True)
class IncidenceParams:
    name: str
    p: float
    r_p: float
    r_s: float

    def __post_init__(self):
        if not (self.p > 0 and self.r_p > 0 and self.r_s > 0):
            raise InputError(f"incidence set {self.name}: p, r_p and r_s must be positive")


M1_D1C = FlightModel("M1-D1c", 155.91, -0.1511, GddWindow((1, 1), (2, 14)))
M2A_D1C = FlightModel("M2a-D1c", 195.6, -0.156, GddWindow((1, 4), (3, 28)))
DEFAULT_FLIGHT_MODELS = {m.name: m for m in (M1_D1C, M2A_D1C)}

INCIDENCE_SETS = {
    s.name: s
    for s in (
        IncidenceParams("Werker98", 0.0562, 0.0001, 0.0409),
        IncidenceParams("QiE", 0.01095, 0.00205, 0.06920),
        IncidenceParams("QiN", 0.01276, 0.00250, 0.08440),
        IncidenceParams("QiW", 0.007514, 0.00112, 0.04),
    )
}


@dataclass(frozen=True)
class FlightPrediction:
    t0: int
    abundance_n: float

    def __post_init__(self):
        if not 1 <= self.t0 <= 366:
            raise InputError(f"first flight day {self.t0} outside 1..366")
        if not self.abundance_n >= 0:
            raise InputError("abundance must be >= 0")


@dataclass(frozen=True)
class IncidenceTrace:
    """Incidence sampled every ``step`` days from ``t0`` (index 0, where Y = 0).

    ``y_p`` and ``y_s`` are only filled by the ODE oracle.
    """

    t0: int
    y: np.ndarray
    y_p: np.ndarray | None = None
    y_s: np.ndarray | None = None
    step: float = 1.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(len(self.y))


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def first_flight_doy(intercept: float, temp_coef: float, gdd: float) -> int:
    return min(366, max(1, round_half_away(intercept + temp_coef * gdd)))


def predict_first_flight(series: DailyWeatherSeries, year: int, model: FlightModel) -> int:
    return first_flight_doy(model.intercept, model.temp_coef, window_gdd(series, model.window, year))


def abundance_from_gdd(gdd: float, model: AbundanceModel) -> float:
    exponent = model.intercept + model.temp_coef * gdd
    try:
        return math.exp(exponent * math.log(model.log_base))
    except OverflowError:
        return math.inf


def predict_abundance(series: DailyWeatherSeries, year: int, model: AbundanceModel = AbundanceModel()) -> float:
    return abundance_from_gdd(window_gdd(series, model.window, year), model)


def predict_flight(
    series: DailyWeatherSeries, year: int, flight: FlightModel, abundance: AbundanceModel = AbundanceModel()
) -> FlightPrediction:
    return FlightPrediction(predict_first_flight(series, year, flight), predict_abundance(series, year, abundance))


def primary_inoculum(n: float, params: IncidenceParams) -> float:
    """Multiple-infection transformation of the migrant count into inoculum."""
    if n < 0:
        raise InputError("aphid count must be >= 0")
    return -math.expm1(-params.p * n)


def incidence_closed_form(t, t0: float, P: float, params: IncidenceParams):
    """Total incidence at time(s) ``t`` for an epidemic started at ``t0``.

    Evaluated as ``r_p P (1 - E) / (r_p P + r_s E)`` with
    ``E = exp(-(r_p P + r_s)(t - t0))``, which is the analytic solution with
    the ``1 / P`` factor cleared so that small ``P`` cannot overflow. ``1 - E``
    comes from ``expm1`` to keep precision near ``t0``.
    Returns 0 for ``P == 0``.
    """
    tau = np.asarray(t, dtype=np.float64) - t0
    if np.any(tau < 0):
        raise InputError("incidence is only defined for t >= t0")
    # P == 1.0 is reachable in floating point for very large migrant counts
    if not 0 <= P <= 1:
        raise InputError(f"inoculum {P} outside [0, 1)")
    if P == 0:
        return np.zeros_like(tau) if tau.ndim else 0.0
    a = params.r_p * P
    rate = a + params.r_s
    em = np.expm1(-rate * tau)
    y = a * -em / (a + params.r_s * (1.0 + em))
    return y if y.ndim else float(y)


def incidence_trace(t0: int, P: float, params: IncidenceParams, days: int) -> IncidenceTrace:
    """Daily closed-form incidence for ``days`` days after ``t0`` (``days + 1`` samples)."""
    y = incidence_closed_form(t0 + np.arange(days + 1, dtype=np.float64), t0, P, params)
    # the exact curve is non-decreasing; remove last-ulp wobble near saturation
    return IncidenceTrace(t0, np.maximum.accumulate(y))


def incidence_ode_oracle(
    t0: float, P: float, params: IncidenceParams, horizon: float = 200.0, step: float = 0.1
) -> IncidenceTrace:
    """Classical fixed-step RK4 on the (Y_p, Y_s) system from (0, 0)."""
    if step > 0.25:
        raise InputError("oracle step must be <= 0.25 day")
    n = int(round(horizon / step))
    rp_P, rs = params.r_p * P, params.r_s

    def rhs(yp: float, ys: float) -> tuple[float, float]:
        y = yp + ys
        return rp_P * (1.0 - y), rs * y * (1.0 - y)

    yp_out = np.empty(n + 1)
    ys_out = np.empty(n + 1)
    yp = ys = 0.0
    yp_out[0] = ys_out[0] = 0.0
    h = step
    for k in range(1, n + 1):
        k1p, k1s = rhs(yp, ys)
        k2p, k2s = rhs(yp + 0.5 * h * k1p, ys + 0.5 * h * k1s)
        k3p, k3s = rhs(yp + 0.5 * h * k2p, ys + 0.5 * h * k2s)
        k4p, k4s = rhs(yp + h * k3p, ys + h * k3s)
        yp += h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        ys += h / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
        yp_out[k] = yp
        ys_out[k] = ys
    return IncidenceTrace(int(t0) if float(t0).is_integer() else t0, yp_out + ys_out, yp_out, ys_out, step)


def flight_date(year: int, t0: int) -> dt.date:
    return dt.date(year, 1, 1) + dt.timedelta(days=t0 - 1)
