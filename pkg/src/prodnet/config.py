"""Run configuration: one YAML file drives the whole pipeline.

Unknown keys are rejected so a typo never silently falls back to a default,
and a loaded config round-trips through to_dict/from_dict unchanged.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import DataError

VALID_SCENARIO_KINDS = ("foreign_price", "severe_tfp", "business_cycle")
VALID_CALIBRATIONS = ("main", "uniform", "cobb_douglas")
VALID_MODES = ("sector_specific", "uniform", "biased_closed")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    magnitude: float | None = None
    n_draws: int = 1000
    top_k: int = 5

    def __post_init__(self):
        if self.kind not in VALID_SCENARIO_KINDS:
            raise DataError(f"unknown scenario kind {self.kind!r} "
                            f"(expected one of {VALID_SCENARIO_KINDS})")
        if self.n_draws < 1:
            raise DataError("n_draws must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "magnitude": self.magnitude,
                "n_draws": self.n_draws, "top_k": self.top_k}


def _default_scenarios() -> tuple:
    return (ScenarioConfig(kind="foreign_price", magnitude=0.25),
            ScenarioConfig(kind="severe_tfp", magnitude=-0.25),
            ScenarioConfig(kind="business_cycle", n_draws=1000))


@dataclass(frozen=True)
class RunConfig:
    source: str = "fixtures"
    fixtures: str | None = None
    cache_dir: str | None = None
    bea_years: tuple = ()
    bea_table_ids: dict = field(default_factory=dict)
    base_year: int | None = None
    tradeable_threshold: float = 0.25
    min_avg_share: float = 0.01
    tfp_horizon_years: int = 4
    modes: tuple = tuple(VALID_MODES)
    sigma: float = 0.6
    nu: float | None = None
    xi: float | None = None
    theta_uniform: float | None = None
    seed: int = 0
    out_dir: str = "out"
    open_economy: bool = True
    calibrations: tuple = tuple(VALID_CALIBRATIONS)
    scenarios: tuple = field(default_factory=_default_scenarios)
    n_workers: int = 1

    def __post_init__(self):
        if self.source not in ("fixtures", "api"):
            raise DataError(f"source must be 'fixtures' or 'api', "
                            f"got {self.source!r}")
        for mode in self.modes:
            if mode not in VALID_MODES:
                raise DataError(f"unknown estimation mode {mode!r}")
        for name in self.calibrations:
            if name not in VALID_CALIBRATIONS:
                raise DataError(f"unknown calibration {name!r}")
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "calibrations", tuple(self.calibrations))
        object.__setattr__(self, "bea_years", tuple(self.bea_years))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["modes"] = list(self.modes)
        out["calibrations"] = list(self.calibrations)
        out["bea_years"] = list(self.bea_years)
        out["scenarios"] = [s.to_dict() for s in self.scenarios]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise DataError("config root must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise DataError(f"unknown config keys: {unknown}")
        values = dict(raw)
        if "scenarios" in values and values["scenarios"] is not None:
            scenario_fields = {f.name for f in
                               dataclasses.fields(ScenarioConfig)}
            parsed = []
            for entry in values["scenarios"]:
                if not isinstance(entry, dict):
                    raise DataError("each scenario must be a mapping")
                bad = sorted(set(entry) - scenario_fields)
                if bad:
                    raise DataError(f"unknown scenario keys: {bad}")
                parsed.append(ScenarioConfig(**entry))
            values["scenarios"] = tuple(parsed)
        return cls(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise DataError(f"config file {path} is not valid YAML: {exc}")
    return RunConfig.from_dict(raw or {})


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
