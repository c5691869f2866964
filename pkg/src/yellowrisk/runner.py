"""End-to-end batch runs and single-key diagnostic traces.

The unit of work is one (institution, region) pair: every scenario of that
institution shares the same weather noise, so all of its configurations are
evaluated in one pass. Units are independent, so they can be spread over a process
pool; results land in preallocated arrays by index and are written in sorted
key order, so the output bytes do not depend on the worker count.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import multiprocessing
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import polars as pl

from . import agronomy, damage, epidemiology
from .actuarial import (
    QUANTILE_LEVELS,
    PremiumSummary,
    RegionExposure,
    SensitivityFit,
    expected_yields_from_history,
    fit_sensitivity,
    load_portfolio,
    load_yield_history,
    summarize_period,
)
from .climate import Climate, load_climate, region_ids, synthesize_scenarios
from .config import ConfigKey, RunConfig
from .engine import covered_years, simulate_series, year_layout
from .errors import CoverageError, InputError, InvariantError, RankDeficientError, YellowRiskError

log = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_CSV = "summary.csv"
SUMMARY_JSON = "summary.json"
SENSITIVITY_CSV = "sensitivity.csv"
FORCED_FLAG = "forced_sowing"


@dataclass
class RunOutput:
    """In-memory result of a run; arrays are indexed ``[config, region, year]``."""

    keys: list[ConfigKey]
    regions: list[str]
    years: np.ndarray
    loss_rate: np.ndarray
    forced: np.ndarray
    exposure: np.ndarray
    summaries: list[PremiumSummary]
    sensitivity: dict[str, SensitivityFit | str]

    @property
    def config_ids(self) -> list[str]:
        return [k.id for k in self.keys]

    @property
    def loss_eur(self) -> np.ndarray:
        return self.loss_rate * self.exposure[None, :, None]

    def national_loss_rate(self) -> np.ndarray:
        """Value-weighted national loss rate per ``[config, year]``."""
        total = float(self.exposure.sum())
        return np.add.reduce(self.loss_eur, axis=1) / total if total > 0 else np.zeros(self.loss_rate[:, 0].shape)


# --- unit evaluation (also runs inside worker processes) ----------------------

_STATE: dict = {}


@dataclass(frozen=True)
class _Plan:
    cfg: RunConfig
    keys: list[ConfigKey]
    climate_sets: list[tuple[str, str]]
    set_configs: list[list[int]]
    institutions: list[str]
    institution_sets: list[list[int]]
    regions: list[str]
    region_index: dict[str, int]
    years: list[int]


def _climate_for(plan: _Plan, climate: Climate | None, inst: str, scenarios: Sequence[str], region: str):
    """Series per scenario for one institution and region."""
    cfg = plan.cfg
    if cfg.synthetic is not None:
        syn = cfg.synthetic
        warmings = {scen: syn.warming_for(scen) for scen in scenarios}
        return synthesize_scenarios(
            syn.seed, syn.years, plan.region_index[region], warmings, syn.params, model=inst, region_id=region
        )
    try:
        return {scen: climate[region][(inst, scen)] for scen in scenarios}
    except (KeyError, TypeError):
        raise InputError(f"no climate series for model {inst}, region {region}, scenarios {list(scenarios)}") from None


def _evaluate_unit(plan: _Plan, climate: Climate | None, inst_idx: int, region: str, layouts: dict):
    """Loss rates for every configuration of one institution in one region.

    Returns ``(set_index, rates[config, year], forced[year])`` per climate set.
    """
    inst = plan.institutions[inst_idx]
    sets = plan.institution_sets[inst_idx]
    scenarios = [plan.climate_sets[s][1] for s in sets]
    try:
        by_scenario = _climate_for(plan, climate, inst, scenarios, region)
    except YellowRiskError as exc:
        raise type(exc)(f"configs {inst}/*, region {region}: {exc}") from exc
    out = []
    for s, scen in zip(sets, scenarios):
        keys = [plan.keys[i] for i in plan.set_configs[s]]
        combos = sorted({(k.flight_model, k.incidence_set) for k in keys})
        viruses = sorted({v for k in keys for v in k.viruses}, key=lambda v: v.value)
        series = by_scenario[scen]
        try:
            flights = sorted({f for f, _ in combos})
            lk = (series.start, len(series), tuple(flights))
            if lk not in layouts:
                layouts[lk] = year_layout(series.start, len(series), plan.years, plan.cfg.model, flights, region)
            res = simulate_series(series, plan.years, plan.cfg.model, combos, viruses, layouts[lk])
            rates = np.stack([res.region_loss_rate((k.flight_model, k.incidence_set), k.viruses) for k in keys])
        except YellowRiskError as exc:
            raise type(exc)(f"configs {inst}/{scen}/*, region {region}: {exc}") from exc
        if not (np.all(rates >= 0) and np.all(rates <= 1)):
            raise InvariantError(f"configs {inst}/{scen}/*, region {region}: loss rate outside [0, 1]")
        out.append((s, rates, res.forced.copy()))
    return out


def _worker_init(plan: _Plan, climate: Climate | None) -> None:
    _STATE["plan"] = plan
    _STATE["climate"] = climate
    _STATE["layouts"] = {}


def _worker_batch(units: list[tuple[int, str]]):
    plan, climate, layouts = _STATE["plan"], _STATE["climate"], _STATE["layouts"]
    return [_evaluate_unit(plan, climate, s, r, layouts) for s, r in units]


# --- planning -------------------------------------------------------------------


def _exposures(cfg: RunConfig, climate_regions: list[str]) -> dict[str, RegionExposure]:
    if cfg.portfolio_path is not None:
        return load_portfolio(
            cfg.portfolio_path, cfg.yield_history_path, olympic_window=cfg.olympic_window, default_price=cfg.price_eur_t
        )
    yields = {}
    if cfg.yield_history_path is not None:
        yields = expected_yields_from_history(load_yield_history(cfg.yield_history_path), cfg.olympic_window)
    return {
        r: RegionExposure(r, cfg.synthetic_area_ha, yields.get(r, cfg.synthetic_yield_t_ha), cfg.price_eur_t)
        for r in climate_regions
    }


def _plan(cfg: RunConfig) -> tuple[_Plan, Climate | None, dict[str, RegionExposure]]:
    keys = cfg.config_keys()
    climate_sets = sorted({(k.institution, k.scenario) for k in keys})
    set_configs = [[i for i, k in enumerate(keys) if (k.institution, k.scenario) == cs] for cs in climate_sets]
    institutions = sorted({inst for inst, _ in climate_sets})
    institution_sets = [[s for s, (i, _) in enumerate(climate_sets) if i == inst] for inst in institutions]
    flights = sorted({k.flight_model for k in keys})

    climate = None
    if cfg.synthetic is not None:
        for _, scen in climate_sets:
            cfg.synthetic.warming_for(scen)
        climate_regions = region_ids(cfg.synthetic.regions)
        start = dt.date(cfg.synthetic.years[0], 1, 1)
        end = dt.date(cfg.synthetic.years[-1], 12, 31)
        spans = [(start, end)]
    else:
        climate = load_climate(*cfg.climate_files)
        climate_regions = sorted(climate)
        spans = []

    exposures = _exposures(cfg, climate_regions)
    regions = sorted(exposures)
    if not regions:
        raise InputError("portfolio has no region")
    missing = [r for r in regions if r not in climate_regions]
    if missing:
        raise InputError(f"no climate data for portfolio region(s): {', '.join(missing[:5])}")

    if climate is not None:
        for r in regions:
            for inst, scen in climate_sets:
                if (inst, scen) not in climate[r]:
                    raise InputError(f"no climate series for model {inst}, scenario {scen}, region {r}")
                s = climate[r][(inst, scen)]
                spans.append((s.start, s.end))

    if cfg.harvest_years is not None:
        years = list(cfg.harvest_years)
    else:
        start = max(a for a, _ in spans)
        end = min(b for _, b in spans)
        years = covered_years(start, end, cfg.model, flights) if start <= end else []
        if not years:
            raise CoverageError("climate data cover no complete harvest year")
    plan = _Plan(cfg, keys, climate_sets, set_configs, institutions, institution_sets, regions, {r: climate_regions.index(r) for r in regions}, years)
    return plan, climate, exposures


# --- run --------------------------------------------------------------------------


def simulate(cfg: RunConfig) -> RunOutput:
    """Evaluate every (configuration, region, year) and summarize; writes nothing."""
    plan, climate, exposures = _plan(cfg)
    n_c, n_r, n_y = len(plan.keys), len(plan.regions), len(plan.years)
    log.info("%d configurations x %d regions x %d years", n_c, n_r, n_y)
    loss_rate = np.zeros((n_c, n_r, n_y))
    forced = np.zeros((n_c, n_r, n_y), dtype=bool)
    units = [(i, r) for i in range(len(plan.institutions)) for r in plan.regions]

    region_pos = {r: i for i, r in enumerate(plan.regions)}

    def store(unit, out):
        ri = region_pos[unit[1]]
        for s, rates, frc in out:
            for row, ci in enumerate(plan.set_configs[s]):
                loss_rate[ci, ri] = rates[row]
                forced[ci, ri] = frc

    if cfg.workers == 1:
        layouts: dict = {}
        for unit in units:
            store(unit, _evaluate_unit(plan, climate, unit[0], unit[1], layouts))
    else:
        chunk = max(1, min(64, len(units) // (cfg.workers * 4) or 1))
        batches = [units[i : i + chunk] for i in range(0, len(units), chunk)]
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(cfg.workers, mp_context=ctx, initializer=_worker_init, initargs=(plan, climate)) as ex:
            for batch, outs in zip(batches, ex.map(_worker_batch, batches)):
                for unit, out in zip(batch, outs):
                    store(unit, out)

    exposure = np.array([exposures[r].value for r in plan.regions])
    years = np.array(plan.years)
    loss_eur = loss_rate * exposure[None, :, None]
    national = np.add.reduce(loss_eur, axis=1)
    total_exposure = np.full(n_y, float(np.add.reduce(exposure)))

    periods = [p for p in cfg.periods if p.mask(years).any()]
    for p in cfg.periods:
        if p not in periods:
            log.warning("period %s has no simulated year; skipped", p.label)
    summaries = [
        summarize_period(key.id, p, years, national[ci], total_exposure)
        for ci, key in enumerate(plan.keys)
        for p in periods
    ]

    sensitivity: dict[str, SensitivityFit | str] = {}
    levels = [k.levels() for k in plan.keys]
    for period in periods:
        ys = [s.mean_loss_rate for s in summaries if s.period == period.label]
        if len(ys) != n_c:
            continue
        try:
            sensitivity[period.label] = fit_sensitivity(levels, ys, cfg.reference)
        except RankDeficientError as exc:
            log.warning("sensitivity fit for period %s skipped: %s", period.label, exc)
            sensitivity[period.label] = str(exc)
    return RunOutput(plan.keys, plan.regions, years, loss_rate, forced, exposure, summaries, sensitivity)


def write_outputs(output: RunOutput, out_dir: Path) -> list[Path]:
    """Write all result files into ``out_dir`` atomically (all or nothing)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    try:
        _write_results(output, tmp / RESULTS_FILE)
        _write_summary_csv(output, tmp / SUMMARY_CSV)
        _write_sensitivity_csv(output, tmp / SENSITIVITY_CSV)
        (tmp / SUMMARY_JSON).write_text(json.dumps(_summary_doc(output), indent=2) + "\n", encoding="utf-8")
        written = []
        for name in (RESULTS_FILE, SUMMARY_CSV, SENSITIVITY_CSV, SUMMARY_JSON):
            (tmp / name).replace(out_dir / name)
            written.append(out_dir / name)
        return written
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def run(cfg: RunConfig) -> RunOutput:
    """Simulate and write outputs to ``cfg.output_dir``; nothing is left behind on failure."""
    output = simulate(cfg)
    write_outputs(output, cfg.output_dir)
    return output


def _write_results(output: RunOutput, path: Path) -> None:
    n_c, n_r, n_y = output.loss_rate.shape
    ids = output.config_ids
    frame = pl.DataFrame(
        {
            "config_id": pl.Series(ids, dtype=pl.Enum(ids)).gather(np.repeat(np.arange(n_c), n_r * n_y)),
            "region_id": pl.Series(output.regions, dtype=pl.Enum(output.regions)).gather(
                np.tile(np.repeat(np.arange(n_r), n_y), n_c)
            ),
            "year": np.tile(output.years, n_c * n_r),
            "loss_rate": output.loss_rate.ravel(),
            "loss_eur": output.loss_eur.ravel(),
            "flags": pl.Series(["", FORCED_FLAG], dtype=pl.Enum(["", FORCED_FLAG])).gather(
                output.forced.ravel().astype(np.uint32)
            ),
        }
    )
    frame.write_csv(path, quote_style="necessary")


def _write_summary_csv(output: RunOutput, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["config_id", "period", "first_year", "last_year", "n_years", "mean_loss_rate", "mean_loss_eur"]
            + [f"q{q:02d}_loss_eur" for q in QUANTILE_LEVELS]
        )
        for s in output.summaries:
            w.writerow(
                [s.config_id, s.period, s.first_year, s.last_year, s.n_years, repr(s.mean_loss_rate), repr(s.mean_loss_value)]
                + [repr(s.quantiles[q]) for q in QUANTILE_LEVELS]
            )


def _write_sensitivity_csv(output: RunOutput, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "term", "value"])
        for label, fit in output.sensitivity.items():
            if isinstance(fit, str):
                continue
            w.writerow([label, "(intercept)", repr(fit.intercept)])
            for name, value in fit.coefficients.items():
                w.writerow([label, name, repr(value)])
            w.writerow([label, "r_squared", repr(fit.r_squared)])
            w.writerow([label, "n_obs", fit.n_obs])


def _summary_doc(output: RunOutput) -> dict:
    return {
        "n_configurations": len(output.keys),
        "configurations": output.config_ids,
        "n_regions": len(output.regions),
        "years": [int(output.years[0]), int(output.years[-1])],
        "exposure_eur": float(np.add.reduce(output.exposure)),
        "premiums": [s.to_dict() for s in output.summaries],
        "sensitivity": {
            label: ({"error": fit} if isinstance(fit, str) else fit.to_dict())
            for label, fit in output.sensitivity.items()
        },
    }


# --- inspect -----------------------------------------------------------------------


def inspect(cfg: RunConfig, config_id: str, region: str, year: int, out_path: Path | None = None) -> dict:
    """Per-day trace of one (configuration, region, year) via the per-operation path.

    Writes a CSV with one row per cohort and day from sowing to harvest and
    returns a small summary dictionary.
    """
    key = ConfigKey.parse(config_id)
    if key not in cfg.config_keys():
        raise InputError(f"unknown configuration {config_id!r}")
    plan, climate, exposures = _plan(cfg)
    if region not in plan.region_index:
        raise InputError(f"unknown region {region!r}")
    if year not in plan.years:
        raise InputError(f"year {year} not simulated (available {plan.years[0]}..{plan.years[-1]})")
    model = cfg.model
    series = _climate_for(plan, climate, key.institution, [key.scenario], region)[key.scenario]
    flight = model.flight_models[key.flight_model]
    inc = model.incidence_sets[key.incidence_set]
    tables = [model.loss_tables[v] for v in key.viruses]
    harvest = model.harvest_date(year)

    sowing = agronomy.build_sowing_plan(series, year, model.sowing)
    t0 = epidemiology.predict_first_flight(series, year, flight)
    n = epidemiology.predict_abundance(series, year, model.abundance)
    P = epidemiology.primary_inoculum(n, inc)
    flight_day = epidemiology.flight_date(year, t0)
    trace = epidemiology.incidence_trace(t0, P, inc, max(0, (harvest - flight_day).days))

    loss_cols = ["marginal_loss"] if len(tables) == 1 else [f"marginal_loss_{t.virus.value}" for t in tables]
    rows = []
    cohorts = []
    for sow_day, fraction in sowing.cohorts:
        gdd = agronomy.gdd_timeline(series, sow_day, harvest, model.phenology)
        emerged = np.flatnonzero(gdd >= model.phenology.emergence_gdd)
        start = max(flight_day, sow_day + dt.timedelta(days=int(emerged[0]))) if len(emerged) else None
        y = np.zeros(len(gdd))
        if start is not None and start <= harvest:
            first = (start - sow_day).days
            offset = 0 if model.rebase_at_emergence else (start - flight_day).days
            y[first:] = trace.y[offset : offset + len(gdd) - first]
        dy = np.diff(y, prepend=0.0)
        rates = [damage.loss_rate_at(gdd, t) * t.prevalence for t in tables]
        losses = [
            damage.cohort_loss(sow_day, series, trace, t, model.phenology, harvest, area_fraction=fraction,
                               rebase=model.rebase_at_emergence)  # fmt: skip
            for t in tables
        ]
        combined = damage.coinfection_loss(losses)
        cohorts.append({"sowing_date": sow_day.isoformat(), "area_fraction": fraction,
                        "loss_rate": combined.loss_rate, "final_incidence": combined.final_incidence})  # fmt: skip
        for k in range(len(gdd)):
            day = sow_day + dt.timedelta(days=k)
            rows.append(
                [sow_day.isoformat(), repr(fraction), day.isoformat(), repr(float(gdd[k])),
                 agronomy.stage_at(float(gdd[k]), model.phenology).name, repr(float(y[k])), repr(float(dy[k]))]
                + [repr(float(dy[k] * r[k])) for r in rates]
            )  # fmt: skip

    if out_path is None:
        out_path = cfg.output_dir / f"inspect_{config_id.replace('/', '_')}_{region}_{year}.csv"
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sowing_date", "area_fraction", "date", "gdd", "stage", "Y", "dY"] + loss_cols)
        w.writerows(rows)
    region_rate = sum(c["area_fraction"] * c["loss_rate"] for c in cohorts)
    return {
        "config_id": config_id,
        "region_id": region,
        "year": year,
        "first_flight_doy": t0,
        "abundance": n,
        "primary_inoculum": P,
        "forced_sowing": sowing.forced,
        "cohorts": cohorts,
        "loss_rate": region_rate,
        "loss_eur": region_rate * exposures[region].value,
        "trace_file": str(out_path),
    }


def check_outputs_consistent(out_dir: Path, exposure_total: float, tol: float = 1e-9) -> None:
    """Recompute premium means from ``results.csv`` and compare with ``summary.csv``."""
    rows = pl.read_csv(Path(out_dir) / RESULTS_FILE, schema_overrides={"flags": pl.Utf8})
    summary = pl.read_csv(Path(out_dir) / SUMMARY_CSV)
    national = rows.group_by(["config_id", "year"]).agg(pl.col("loss_eur").sum())
    for s in summary.iter_rows(named=True):
        sub = national.filter(
            (pl.col("config_id") == s["config_id"]) & pl.col("year").is_between(s["first_year"], s["last_year"])
        )
        if sub.height != s["n_years"]:
            raise InvariantError(f"{s['config_id']} {s['period']}: {sub.height} years in results, summary says {s['n_years']}")
        mean_value = float(sub["loss_eur"].mean())
        if abs(mean_value - s["mean_loss_eur"]) > tol * max(1.0, abs(mean_value)):
            raise InvariantError(f"{s['config_id']} {s['period']}: mean loss {mean_value} != {s['mean_loss_eur']}")
        if exposure_total > 0:
            rate = mean_value / exposure_total
            if abs(rate - s["mean_loss_rate"]) > tol * max(1.0, rate):
                raise InvariantError(f"{s['config_id']} {s['period']}: mean rate {rate} != {s['mean_loss_rate']}")
