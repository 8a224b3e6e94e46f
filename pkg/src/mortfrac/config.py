"""Run configuration: TOML file plus command-line overrides."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .calibrate import MarketQuote
from .model import ModelParams, RiskPremiums
from .pricing import INDEX_RULES

COMMANDS = ("ingest", "estimate", "price-zcb", "price-mls", "calibrate-p", "calibrate-q", "sensitivity", "simulate")
SCENARIO_IDS = (1, 2, 3, 4, 5, 6)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BondConfig:
    face: float = 100.0
    coupon_rate: float = math.nan  # NaN means "use the fair coupon"
    pay_freq: int = 1
    term: float = 5.0
    attachment: float = math.nan  # NaN means "calibrate from the quote"
    exhaustion: float = math.nan
    index_rule: str = "annual_average"
    disable_prf: bool = False


@dataclass(frozen=True)
class CalibrationConfig:
    attachment_rule: str = "path_max"
    index_measure: str = "physical"
    calibrate_gamma1: bool = True
    gamma2_step: float = 0.001
    gamma2_max: float = 2.0


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 10_000
    seed: int = 0
    steps_per_year: int = 52


@dataclass(frozen=True)
class EstimateConfig:
    long_term_mean_rate: float = 4.18
    hurst_source: str = "levels"
    vol_method: str = "moments"
    rho_normalization: str = "horizon"
    reference_years: tuple = (2015, 2016, 2017, 2018, 2019)


@dataclass(frozen=True)
class IOConfig:
    stmf: str = ""
    fred: str = ""
    aligned: str = ""
    out: str = "out"


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    premiums: RiskPremiums = field(default_factory=lambda: RiskPremiums(gamma1=3.8701, gamma2=1.0620))
    bond: BondConfig = field(default_factory=BondConfig)
    quote: MarketQuote = field(default_factory=MarketQuote)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)
    io: IOConfig = field(default_factory=IOConfig)
    scenario: str = "all"

    def validate(self, command: str) -> None:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        if self.bond.index_rule not in INDEX_RULES:
            raise ConfigError(f"bond.index_rule must be one of {INDEX_RULES}")
        if self.calibration.attachment_rule not in ("pooled", "path_max"):
            raise ConfigError("calibration.attachment_rule must be 'pooled' or 'path_max'")
        if self.calibration.index_measure not in ("pricing", "physical"):
            raise ConfigError("calibration.index_measure must be 'pricing' or 'physical'")
        if self.simulation.n_paths < 1:
            raise ConfigError("simulation.n_paths must be positive")
        if not 0 <= self.simulation.seed < 2**64:
            raise ConfigError("simulation.seed must be a 64-bit unsigned integer")
        if self.simulation.steps_per_year != 52:
            raise ConfigError("simulation.steps_per_year must be 52 (weekly bond index)")
        self.scenario_ids()
        if command == "ingest" and not (self.io.stmf and self.io.fred):
            raise ConfigError("ingest needs both --stmf and --fred")
        if command in ("estimate", "calibrate-p") and not (self.io.aligned or (self.io.stmf and self.io.fred)):
            raise ConfigError(f"{command} needs --aligned or both --stmf and --fred")

    def scenario_ids(self) -> tuple:
        if str(self.scenario) == "all":
            return SCENARIO_IDS
        try:
            ids = tuple(sorted({int(s) for s in str(self.scenario).split(",")}))
        except ValueError:
            raise ConfigError(f"scenario must be 1..6 or 'all', got {self.scenario!r}") from None
        if not set(ids) <= set(SCENARIO_IDS):
            raise ConfigError(f"scenario must be 1..6 or 'all', got {self.scenario!r}")
        return ids


SECTIONS = {
    "model": ModelParams,
    "premiums": RiskPremiums,
    "bond": BondConfig,
    "quote": MarketQuote,
    "calibration": CalibrationConfig,
    "simulation": SimulationConfig,
    "estimate": EstimateConfig,
    "io": IOConfig,
}


def _coerce(cls, name: str, value):
    default = {f.name: f for f in fields(cls)}[name].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name} must be an integer")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, str) and value.lower() == "nan":
            return None if default is None else math.nan
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{cls.__name__}.{name} must be a number")
        return float(value)
    if isinstance(default, tuple):
        return tuple(value)
    if isinstance(default, str):
        return str(value)
    return value


def _build(cls, table: dict, base=None):
    names = {f.name for f in fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{cls.__name__}]: {sorted(unknown)}")
    values = {k: _coerce(cls, k, v) for k, v in table.items()}
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    changes = {}
    for key, value in data.items():
        if key == "scenario":
            changes["scenario"] = str(value)
        elif key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            changes[key] = _build(SECTIONS[key], value, getattr(cfg, key))
        else:
            raise ConfigError(f"unknown section {key!r}")
    return replace(cfg, **changes)


def load(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def _toml_value(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, tuple):
        return list(v)
    return v


def to_dict(cfg: RunConfig) -> dict:
    out = {"scenario": cfg.scenario}
    for key in SECTIONS:
        out[key] = {k: _toml_value(v) for k, v in asdict(getattr(cfg, key)).items()}
    return out


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def parse_assignment(text: str) -> dict:
    """``section.key=value`` with a TOML value, as a nested dict."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    lhs, rhs = text.split("=", 1)
    parts = lhs.strip().split(".")
    try:
        value = tomllib.loads(f"v = {rhs.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) != 2:
        raise ConfigError(f"override key {lhs!r} must be section.key")
    return {parts[0]: {parts[1]: value}}
