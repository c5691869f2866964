"""Run configuration: INI parsing and enumeration of factor combinations."""

from __future__ import annotations

import configparser
import fnmatch
import itertools
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from .actuarial import Period
from .agronomy import PhenologyParams, SowingRules, Stage
from .climate import GddWindow, SyntheticClimateParams, parse_ddmm
from .damage import LossTable, VirusKind
from .engine import SimulationModel
from .epidemiology import AbundanceModel, FlightModel, IncidenceParams
from .errors import InputError

SEPARATOR = "/"
PLAIN_SECTIONS = frozenset(
    ("run", "climate", "warming_c_per_century", "portfolio", "factors", "sensitivity", "periods", "sowing",
     "phenology", "abundance")
)  # fmt: skip


class ConfigKey(NamedTuple):
    institution: str
    scenario: str
    virus: str
    flight_model: str
    incidence_set: str

    @property
    def id(self) -> str:
        return SEPARATOR.join(self)

    @classmethod
    def parse(cls, config_id: str) -> ConfigKey:
        parts = config_id.split(SEPARATOR)
        if len(parts) != 5 or not all(parts):
            raise InputError(f"config id must be institution/scenario/virus/flightmodel/incidenceset: {config_id!r}")
        return cls(*parts)

    @property
    def viruses(self) -> tuple[VirusKind, ...]:
        return virus_set(self.virus)

    def levels(self) -> dict[str, str]:
        return self._asdict()


def virus_set(level: str) -> tuple[VirusKind, ...]:
    try:
        kinds = tuple(VirusKind(v.strip()) for v in level.split("+"))
    except ValueError:
        raise InputError(f"unknown virus in {level!r}; known: {[v.value for v in VirusKind]}") from None
    if len(set(kinds)) != len(kinds):
        raise InputError(f"virus repeated in {level!r}")
    return kinds


@dataclass(frozen=True)
class SyntheticSource:
    seed: int
    years: range
    regions: int
    params: SyntheticClimateParams
    warming: dict[str, float]

    def warming_for(self, scenario: str) -> float:
        if scenario not in self.warming:
            raise InputError(f"no warming rate configured for scenario {scenario!r}")
        return self.warming[scenario]


@dataclass(frozen=True)
class RunConfig:
    model: SimulationModel
    institutions: tuple[str, ...]
    scenarios: tuple[str, ...]
    viruses: tuple[str, ...]
    flight_models: tuple[str, ...]
    incidence_sets: tuple[str, ...]
    exclude: tuple[str, ...] = ()
    climate_files: tuple[Path, ...] = ()
    synthetic: SyntheticSource | None = None
    portfolio_path: Path | None = None
    yield_history_path: Path | None = None
    olympic_window: int = 5
    price_eur_t: float = 45.0
    synthetic_area_ha: float = 978.0
    synthetic_yield_t_ha: float = 80.0
    harvest_years: tuple[int, ...] | None = None
    periods: tuple[Period, ...] = ()
    reference: dict[str, str] = field(default_factory=dict)
    output_dir: Path = Path("yellowrisk-out")
    workers: int = 1

    def __post_init__(self):
        for name in ("institutions", "scenarios", "viruses", "flight_models", "incidence_sets"):
            values = getattr(self, name)
            if not values:
                raise InputError(f"factor list {name} is empty")
            if len(set(values)) != len(values):
                raise InputError(f"factor list {name} has duplicates")
            for v in values:
                if not v or SEPARATOR in v:
                    raise InputError(f"invalid {name} level {v!r}")
        for v in self.viruses:
            virus_set(v)
            for kind in virus_set(v):
                if kind not in self.model.loss_tables:
                    raise InputError(f"no loss table for virus {kind.value}")
        for f in self.flight_models:
            if f not in self.model.flight_models:
                raise InputError(f"unknown flight model {f!r}")
        for i in self.incidence_sets:
            if i not in self.model.incidence_sets:
                raise InputError(f"unknown incidence set {i!r}")
        if (self.synthetic is None) == (not self.climate_files):
            raise InputError("configure exactly one climate source: synthetic or files")
        if self.workers < 1:
            raise InputError("workers must be >= 1")

    def cross_product_size(self) -> int:
        return (
            len(self.institutions)
            * len(self.scenarios)
            * len(self.viruses)
            * len(self.flight_models)
            * len(self.incidence_sets)
        )

    def config_keys(self) -> list[ConfigKey]:
        """Cross-product of the factor lists minus exclusions, sorted by id."""
        keys = [
            ConfigKey(*combo)
            for combo in itertools.product(
                self.institutions, self.scenarios, self.viruses, self.flight_models, self.incidence_sets
            )
        ]
        keys = [k for k in keys if not any(fnmatch.fnmatchcase(k.id, pat) for pat in self.exclude)]
        if not keys:
            raise InputError("every configuration is excluded")
        return sorted(keys, key=lambda k: k.id)


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in _list(text)]
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def parse_year_range(text: str, what: str) -> range:
    try:
        a, b = text.split(":")
        first, last = int(a), int(b)
    except ValueError:
        raise InputError(f"{what}: expected 'first:last' years, got {text!r}") from None
    if last < first:
        raise InputError(f"{what}: last year before first year")
    return range(first, last + 1)


class _Section:
    """Typed accessors that name the offending key on error."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        if not parser.has_section(name):
            raise InputError(f"missing config section [{name}]")
        self.name = name
        self.sec = parser[name]

    def str(self, key: str) -> str:
        if key not in self.sec:
            raise InputError(f"[{self.name}] missing key {key}")
        return self.sec[key].strip()

    def float(self, key: str) -> float:
        try:
            value = float(self.str(key))
        except ValueError:
            raise InputError(f"[{self.name}] {key}: not a number: {self.sec[key]!r}") from None
        if not math.isfinite(value):
            raise InputError(f"[{self.name}] {key}: must be finite")
        return value

    def int(self, key: str) -> int:
        try:
            return int(self.str(key))
        except ValueError:
            raise InputError(f"[{self.name}] {key}: not an integer: {self.sec[key]!r}") from None

    def bool(self, key: str) -> bool:
        try:
            return self.sec.getboolean(key)
        except ValueError:
            raise InputError(f"[{self.name}] {key}: not a boolean: {self.sec[key]!r}") from None

    def ddmm(self, key: str) -> tuple[int, int]:
        return parse_ddmm(self.str(key))


def read_parser(path: str | Path | None = None) -> tuple[configparser.ConfigParser, Path]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    parser.read_string(resources.files("yellowrisk").joinpath("data/defaults.ini").read_text(encoding="utf-8"))
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise InputError(f"{path}: {exc}") from None
        base = path.resolve().parent
    return parser, base


def _model(parser: configparser.ConfigParser) -> SimulationModel:
    s = _Section(parser, "sowing")
    span = [int(v) for v in _floats(s.str("tmin_span_days"), "tmin_span_days")]
    if len(span) != 2:
        raise InputError("[sowing] tmin_span_days needs two offsets")
    sowing = SowingRules(
        window_start=s.ddmm("window_start"),
        window_end=s.ddmm("window_end"),
        tmin_floor=s.float("tmin_floor_c"),
        tmin_span=(span[0], span[1]),
        past_rain_days=s.int("past_rain_days"),
        past_rain_max=s.float("past_rain_max_mm"),
        fwd_rain_days=s.int("fwd_rain_days"),
        fwd_rain_max=s.float("fwd_rain_max_mm"),
        days_to_full=s.int("days_to_full"),
    )
    p = _Section(parser, "phenology")
    phenology = PhenologyParams(
        leaf_intercept=p.float("leaf_intercept"),
        leaf_slope=p.float("leaf_slope_per_gdd"),
        gdd_base=p.float("gdd_base_c"),
        stage_gdd={
            Stage.Emergence: p.float("emergence_gdd"),
            Stage.FourToSixLeaves: p.float("four_to_six_leaves_gdd"),
            Stage.TwelveLeaves: p.float("twelve_leaves_gdd"),
            Stage.EighteenLeaves: p.float("eighteen_leaves_gdd"),
            Stage.Maturity: p.float("maturity_gdd"),
        },
    )
    flights = {}
    incidence = {}
    tables = {}
    for name in parser.sections():
        kind, _, label = name.partition(":")
        if not label:
            if name not in PLAIN_SECTIONS:
                raise InputError(f"unknown section [{name}]")
            continue
        sec = _Section(parser, name)
        if kind == "flight":
            flights[label] = FlightModel(
                label,
                sec.float("intercept_doy"),
                sec.float("temp_coef_doy_per_gdd"),
                GddWindow(sec.ddmm("window_start"), sec.ddmm("window_end"), sec.float("gdd_base_c")),
            )
        elif kind == "incidence":
            incidence[label] = IncidenceParams(
                label, sec.float("p_per_aphid"), sec.float("r_p_per_day"), sec.float("r_s_per_day")
            )
        elif kind == "loss":
            try:
                virus = VirusKind(label)
            except ValueError:
                raise InputError(f"[{name}]: unknown virus {label!r}") from None
            gdd = _floats(sec.str("knot_gdd"), f"[{name}] knot_gdd")
            rates = _floats(sec.str("loss_rate"), f"[{name}] loss_rate")
            if len(gdd) != len(rates):
                raise InputError(f"[{name}]: knot_gdd and loss_rate lengths differ")
            tables[virus] = LossTable(virus, tuple(zip(gdd, rates)), sec.float("prevalence"))
        else:
            raise InputError(f"unknown section [{name}]")
    a = _Section(parser, "abundance")
    base_text = a.str("log_base")
    log_base = math.e if base_text.lower() == "e" else a.float("log_base")
    abundance = AbundanceModel(
        a.float("intercept_log"),
        a.float("temp_coef_log_per_gdd"),
        GddWindow(a.ddmm("window_start"), a.ddmm("window_end"), a.float("gdd_base_c")),
        log_base,
    )
    r = _Section(parser, "run")
    return SimulationModel(
        sowing=sowing,
        phenology=phenology,
        flight_models=flights,
        abundance=abundance,
        incidence_sets=incidence,
        loss_tables=tables,
        harvest=r.ddmm("harvest_date"),
        rebase_at_emergence=r.bool("rebase_at_emergence"),
    )


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from the bundled defaults plus an optional INI file.

    Relative paths in the file are resolved against the file's directory.
    Keyword ``overrides`` replace fields of the result (e.g. ``workers``).
    """
    parser, base = read_parser(path)
    model = _model(parser)

    def resolve(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base / q

    run = _Section(parser, "run")
    clim = _Section(parser, "climate")
    source = clim.str("source")
    synthetic = None
    files: tuple[Path, ...] = ()
    if source == "synthetic":
        params = SyntheticClimateParams(
            mean_c=clim.float("mean_c"),
            amplitude_c=clim.float("amplitude_c"),
            coldest_doy=clim.float("coldest_doy"),
            diurnal_range_c=clim.float("diurnal_range_c"),
            diurnal_seasonal_c=clim.float("diurnal_seasonal_c"),
            noise_sd_c=clim.float("noise_sd_c"),
            noise_ar1=clim.float("noise_ar1"),
            wet_prob=clim.float("wet_prob"),
            wet_mean_mm=clim.float("wet_mean_mm"),
            region_spread_c=clim.float("region_spread_c"),
            model_spread_c=clim.float("model_spread_c"),
            trend_base_year=clim.int("trend_base_year"),
        )
        warming_sec = _Section(parser, "warming_c_per_century")
        synthetic = SyntheticSource(
            clim.int("seed"),
            parse_year_range(clim.str("years"), "[climate] years"),
            clim.int("regions"),
            params,
            {k: warming_sec.float(k) for k in warming_sec.sec},
        )
    elif source == "files":
        files = tuple(resolve(p) for p in _list(clim.str("files")))
        if not files:
            raise InputError("[climate] source = files but no files listed")
    else:
        raise InputError(f"[climate] source must be 'synthetic' or 'files', got {source!r}")

    port = _Section(parser, "portfolio")
    fac = _Section(parser, "factors")
    per = _Section(parser, "periods")
    periods = tuple(Period.parse(label, per.sec[label]) for label in per.sec)
    if not periods:
        raise InputError("no period defined")
    years_text = run.str("harvest_years")
    ref = _Section(parser, "sensitivity")

    cfg = RunConfig(
        model=model,
        institutions=tuple(_list(fac.str("institutions"))),
        scenarios=tuple(_list(fac.str("scenarios"))),
        viruses=tuple(_list(fac.str("viruses"))),
        flight_models=tuple(_list(fac.str("flight_models"))),
        incidence_sets=tuple(_list(fac.str("incidence_sets"))),
        exclude=tuple(_list(fac.str("exclude"))),
        climate_files=files,
        synthetic=synthetic,
        portfolio_path=resolve(port.str("path")) if port.str("path") else None,
        yield_history_path=resolve(port.str("yield_history")) if port.str("yield_history") else None,
        olympic_window=port.int("olympic_window"),
        price_eur_t=port.float("price_eur_t"),
        synthetic_area_ha=port.float("synthetic_area_ha"),
        synthetic_yield_t_ha=port.float("synthetic_yield_t_ha"),
        harvest_years=tuple(parse_year_range(years_text, "[run] harvest_years")) if years_text else None,
        periods=periods,
        reference={k: ref.sec[k].strip() for k in ref.sec},
        output_dir=resolve(run.str("output_dir")),
        workers=run.int("workers"),
    )
    return replace(cfg, **overrides) if overrides else cfg
