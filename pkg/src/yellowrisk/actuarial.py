"""Exposure, annual losses in euros, pure premiums and the sensitivity regression."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .agronomy import SowingPlan
from .damage import CohortLoss
from .errors import InputError, InvariantError, RankDeficientError

DEFAULT_PRICE_EUR_T = 45.0
QUANTILE_LEVELS = (5, 25, 50, 75, 95)


@dataclass(frozen=True)
class RegionExposure:
    region_id: str
    area: float
    expected_yield: float
    price: float = DEFAULT_PRICE_EUR_T

    def __post_init__(self):
        for name in ("area", "expected_yield", "price"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InputError(f"region {self.region_id}: {name} must be finite and >= 0, got {value}")

    @property
    def value(self) -> float:
        """Insured production value in euros."""
        return self.area * self.expected_yield * self.price


@dataclass(frozen=True)
class AnnualRegionResult:
    config_id: str
    region_id: str
    year: int
    loss_rate: float
    loss_value: float
    exposure_value: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Period:
    """Inclusive year range; ``None`` leaves a side open."""

    label: str
    first: int | None = None
    last: int | None = None

    @classmethod
    def parse(cls, label: str, text: str) -> Period:
        """Parse ``A:B``, ``A:``, ``:B`` or ``:``."""
        try:
            a, b = text.split(":")
            first = int(a) if a.strip() else None
            last = int(b) if b.strip() else None
        except ValueError as exc:
            raise InputError(f"period {label}: expected 'first:last', got {text!r}") from exc
        if first is not None and last is not None and last < first:
            raise InputError(f"period {label}: last year before first year")
        return cls(label, first, last)

    def contains(self, year: int) -> bool:
        return (self.first is None or year >= self.first) and (self.last is None or year <= self.last)

    def mask(self, years: np.ndarray) -> np.ndarray:
        m = np.ones(len(years), dtype=bool)
        if self.first is not None:
            m &= years >= self.first
        if self.last is not None:
            m &= years <= self.last
        return m


DEFAULT_PERIODS = (
    Period("all", None, None),
    Period("current", None, 2024),
    Period("future", 2025, None),
    Period("far", 2050, None),
)


@dataclass(frozen=True)
class PremiumSummary:
    config_id: str
    period: str
    first_year: int
    last_year: int
    n_years: int
    mean_loss_rate: float
    mean_loss_value: float
    quantiles: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        q = [self.quantiles[k] for k in sorted(self.quantiles)]
        if any(b < a for a, b in zip(q, q[1:])):
            raise InvariantError("premium quantiles must be non-decreasing")

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "period": self.period,
            "first_year": self.first_year,
            "last_year": self.last_year,
            "n_years": self.n_years,
            "mean_loss_rate": self.mean_loss_rate,
            "mean_loss_value": self.mean_loss_value,
            "quantiles": {f"q{k:02d}": v for k, v in sorted(self.quantiles.items())},
        }


def olympic_mean(values: Sequence[float], window: int = 5) -> float:
    """Mean of ``window`` values after dropping one minimum and one maximum."""
    if window < 3:
        raise InputError("olympic mean needs a window of at least 3")
    if len(values) != window:
        raise InputError(f"olympic mean needs exactly {window} values, got {len(values)}")
    ordered = sorted(float(v) for v in values)
    return math.fsum(ordered[1:-1]) / (window - 2)


def region_annual_loss(
    plan: SowingPlan,
    cohort_losses: Sequence[CohortLoss],
    exposure: RegionExposure,
    *,
    config_id: str = "",
    year: int = 0,
) -> AnnualRegionResult:
    if len(cohort_losses) != len(plan.cohorts):
        raise InputError(f"{len(cohort_losses)} cohort losses for {len(plan.cohorts)} cohorts")
    for (day, fraction), loss in zip(plan.cohorts, cohort_losses):
        if loss.sowing_date != day or abs(loss.area_fraction - fraction) > 1e-15:
            raise InputError(f"cohort loss for {loss.sowing_date} does not match plan cohort {day}")
    rate = math.fsum(f * c.loss_rate for f, c in zip(plan.fractions, cohort_losses))
    if not -1e-12 <= rate <= 1 + 1e-12:
        raise InvariantError(f"region loss rate {rate} outside [0, 1]")
    rate = min(max(rate, 0.0), 1.0)
    flags = ("forced_sowing",) if plan.forced else ()
    return AnnualRegionResult(config_id, exposure.region_id, year, rate, rate * exposure.value, exposure.value, flags)


def national_totals(results: Iterable[AnnualRegionResult]) -> dict[int, tuple[float, float]]:
    """Per year ``(sum of loss values, sum of exposure values)`` in sorted-region order."""
    by_year: dict[int, list[AnnualRegionResult]] = defaultdict(list)
    for r in results:
        by_year[r.year].append(r)
    out = {}
    for year in sorted(by_year):
        rows = sorted(by_year[year], key=lambda r: r.region_id)
        out[year] = (math.fsum(r.loss_value for r in rows), math.fsum(r.exposure_value for r in rows))
    return out


def summarize_period(
    config_id: str, period: Period, years: np.ndarray, loss_totals: np.ndarray, exposure_totals: np.ndarray
) -> PremiumSummary:
    """Premium summary from annual national loss and exposure totals."""
    m = period.mask(np.asarray(years))
    if not m.any():
        raise InputError(f"period {period.label} contains no simulated year")
    yrs = np.asarray(years)[m]
    losses = np.asarray(loss_totals, dtype=np.float64)[m]
    exposure = np.asarray(exposure_totals, dtype=np.float64)[m]
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(exposure > 0, losses / exposure, 0.0)
    q = np.percentile(losses, QUANTILE_LEVELS)
    q = np.maximum.accumulate(q)
    return PremiumSummary(
        config_id,
        period.label,
        int(yrs.min()),
        int(yrs.max()),
        int(m.sum()),
        math.fsum(rates) / len(rates),
        math.fsum(losses) / len(losses),
        {k: float(v) for k, v in zip(QUANTILE_LEVELS, q)},
    )


def pure_premium(results: Sequence[AnnualRegionResult], period: Period) -> PremiumSummary:
    """Average annual national loss over ``period`` for a single configuration."""
    ids = {r.config_id for r in results}
    if len(ids) > 1:
        raise InputError(f"pure_premium expects one configuration, got {sorted(ids)}")
    selected = [r for r in results if period.contains(r.year)]
    if not selected:
        raise InputError(f"period {period.label} contains no result")
    totals = national_totals(selected)
    years = np.array(sorted(totals))
    return summarize_period(
        ids.pop(),
        period,
        years,
        np.array([totals[y][0] for y in years]),
        np.array([totals[y][1] for y in years]),
    )


# --- sensitivity regression ---------------------------------------------------

FACTORS = ("institution", "scenario", "virus", "flight_model", "incidence_set")
DEFAULT_REFERENCE = {
    "scenario": "rcp85",
    "virus": "Polerovirus",
    "flight_model": "M1-D1c",
    "incidence_set": "QiN",
}


@dataclass(frozen=True)
class SensitivityFit:
    intercept: float
    coefficients: dict[str, float]
    r_squared: float
    n_obs: int
    reference: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.r_squared <= 1:
            raise InvariantError(f"R^2 {self.r_squared} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": dict(self.coefficients),
            "r_squared": self.r_squared,
            "n_obs": self.n_obs,
            "reference": dict(self.reference),
        }


def dummy_design(
    levels: Sequence[Mapping[str, str]], reference: Mapping[str, str] | None = None
) -> tuple[np.ndarray, list[str], dict[str, str]]:
    """Treatment-coded design matrix with an intercept column.

    Factors with a single observed level are dropped. The reference level of a
    factor is taken from ``reference`` when it occurs in the data, else the
    first level in sorted order.
    """
    reference = {**DEFAULT_REFERENCE, **(reference or {})}
    factors = [f for f in levels[0]] if levels else []
    columns: list[str] = []
    cols: list[np.ndarray] = [np.ones(len(levels))]
    used_ref: dict[str, str] = {}
    for factor in factors:
        observed = sorted({row[factor] for row in levels})
        if len(observed) < 2:
            continue
        ref = reference.get(factor)
        if ref not in observed:
            ref = observed[0]
        used_ref[factor] = ref
        for level in observed:
            if level == ref:
                continue
            columns.append(f"{factor}={level}")
            cols.append(np.array([1.0 if row[factor] == level else 0.0 for row in levels]))
    return np.column_stack(cols), columns, used_ref


def fit_sensitivity(
    levels: Sequence[Mapping[str, str]], y: Sequence[float], reference: Mapping[str, str] | None = None
) -> SensitivityFit:
    """OLS of ``y`` on dummy-coded factor levels via the normal equations."""
    y = np.asarray(y, dtype=np.float64)
    if len(levels) != len(y) or len(y) == 0:
        raise InputError("need one factor-level row per observation")
    X, names, used_ref = dummy_design(levels, reference)
    n, p = X.shape
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise RankDeficientError(f"design matrix has rank {rank} < {p} columns")
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    resid = y - X @ beta
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    r2 = 0.0 if p == 1 or ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return SensitivityFit(float(beta[0]), dict(zip(names, map(float, beta[1:]))), r2, n, used_ref)


# --- portfolio files ----------------------------------------------------------


def _read_csv(path: Path, required: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        return [(reader.line_num, {k: (v or "").strip() for k, v in row.items()}) for row in reader]


def load_yield_history(path: str | Path) -> dict[str, dict[int, float]]:
    """``region_id,year,yield_t_ha`` rows as ``{region: {year: yield}}``."""
    path = Path(path)
    out: dict[str, dict[int, float]] = defaultdict(dict)
    for line, row in _read_csv(path, ("region_id", "year", "yield_t_ha")):
        try:
            year, value = int(row["year"]), float(row["yield_t_ha"])
        except ValueError:
            raise InputError(f"{path}:{line}: malformed row") from None
        if not (math.isfinite(value) and value >= 0):
            raise InputError(f"{path}:{line}: yield must be finite and >= 0")
        if year in out[row["region_id"]]:
            raise InputError(f"{path}:{line}: duplicate year {year} for region {row['region_id']}")
        out[row["region_id"]][year] = value
    return dict(out)


def expected_yields_from_history(history: Mapping[str, Mapping[int, float]], window: int = 5) -> dict[str, float]:
    """Olympic mean of the latest ``window`` years of each region."""
    out = {}
    for region, by_year in history.items():
        years = sorted(by_year)[-window:]
        if len(years) < window:
            raise InputError(f"region {region}: {len(years)} yield years, need {window}")
        out[region] = olympic_mean([by_year[y] for y in years], window)
    return out


def load_portfolio(
    path: str | Path,
    yield_history: str | Path | None = None,
    *,
    olympic_window: int = 5,
    default_price: float = DEFAULT_PRICE_EUR_T,
) -> dict[str, RegionExposure]:
    """Read ``region_id,area_ha,expected_yield_t_ha[,price_eur_t]``.

    When a yield history is given, its Olympic means replace the portfolio's
    expected yields for every region it covers; the yield column may then be
    left blank for those regions.
    """
    path = Path(path)
    from_history = (
        expected_yields_from_history(load_yield_history(yield_history), olympic_window) if yield_history else {}
    )
    out: dict[str, RegionExposure] = {}
    for line, row in _read_csv(path, ("region_id", "area_ha", "expected_yield_t_ha")):
        region = row["region_id"]
        if not region:
            raise InputError(f"{path}:{line}: empty region_id")
        if region in out:
            raise InputError(f"{path}:{line}: duplicate region {region}")
        if region not in from_history and not row["expected_yield_t_ha"]:
            raise InputError(f"{path}:{line}: no expected yield for region {region}")
        try:
            area = float(row["area_ha"])
            yld = from_history[region] if region in from_history else float(row["expected_yield_t_ha"])
            price = float(row["price_eur_t"]) if row.get("price_eur_t") else default_price
        except ValueError:
            raise InputError(f"{path}:{line}: malformed row") from None
        out[region] = RegionExposure(region, area, yld, price)
    return out
