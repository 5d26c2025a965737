"""Pipeline configuration: one JSON file, strict schema.

Every tunable that the procedure fixes numerically (dangle threshold 200 m,
end extension 20 m, buffer half-widths 2-30 m, neighborhood radius 500 m,
noise exponent range, score threshold, area budgets) is surfaced here with
that value as the default. Unknown keys anywhere in the file are errors so
a typoed threshold name cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


DEFAULT_CLASS_WIDTHS = {
    "motorway": 30.0,
    "trunk": 25.0,
    "primary": 20.0,
    "secondary": 15.0,
    "tertiary": 10.0,
    "residential": 6.0,
    "service": 3.0,
    "unclassified": 6.0,
    "default": 6.0,
}


@dataclass
class PathsConfig:
    roads: str = "roads.geojson"
    pois: str = "pois.geojson"
    admin_units: str = "admin_units.geojson"
    constraints: str = "constraints.geojson"
    extent: str = "extent.geojson"
    census_dir: str = "census"
    income: str | None = None  # survey income table; default <census_dir>/income.csv
    urban_truth: str | None = None  # observed urban polygons for calibration
    model: str | None = None  # pre-supplied model file skips fitting


@dataclass
class ParcelizeConfig:
    trim_threshold: float = 200.0
    extension: float = 20.0
    min_area: float = 1000.0
    class_width_map: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_WIDTHS))


@dataclass
class FeaturesConfig:
    exclude_outside_pois: bool = False


@dataclass
class ModelConfig:
    features: list = field(default_factory=lambda: [
        "ln_area", "center_distance_km", "poi_density_norm"])
    max_iter: int = 100
    tol: float = 1e-8
    label_overlap_fraction: float = 0.5  # parcel labeled urban at this truth overlap


@dataclass
class CAConfig:
    p_thd: float = 0.5
    beta: float = 1.0
    neighborhood_radius: float = 500.0
    max_iterations: int = 100
    omega_floor: float = 0.05
    fill_fraction: float = 0.95
    overlap_threshold: float = 0.5  # constraint coverage above this masks the parcel
    seed_fraction: float = 0.1
    urban_area_budget: float | None = None  # m^2; required to run the CA
    snapshots: bool = False


@dataclass
class AllocationConfig:
    weight_mode: str = "density_area"  # or "density"
    residential_area_budget: float | None = None  # m^2; falls back to unit budgets


@dataclass
class SynthesisConfig:
    working_age: int = 16
    apply_working_age_rule: bool = True
    age_cap: int = 100
    income_cap: int = 50_000
    jitter_points: bool = True


@dataclass
class MetricsConfig:
    age_tolerance: float = 0.0
    income_tolerance: float = 0.0
    tam_tolerance: float = 0.0


@dataclass
class PipelineConfig:
    city_center: list = field(default_factory=lambda: [0.0, 0.0])
    crs_note: str = ""
    seed: int = 0
    threads: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    parcelize: ParcelizeConfig = field(default_factory=ParcelizeConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ca: CAConfig = field(default_factory=CAConfig)
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


_SECTION_TYPES = {
    "paths": PathsConfig,
    "parcelize": ParcelizeConfig,
    "features": FeaturesConfig,
    "model": ModelConfig,
    "ca": CAConfig,
    "allocation": AllocationConfig,
    "synthesis": SynthesisConfig,
    "metrics": MetricsConfig,
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        # nested sections only exist at the top level (paths.model is a string)
        sub = _SECTION_TYPES.get(f.name) if cls is PipelineConfig else None
        kwargs[f.name] = _build(sub, val, f"{path}.{f.name}") if sub else val
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "config")
    if cfg.allocation.weight_mode not in ("density_area", "density"):
        raise ConfigError(
            f"config.allocation.weight_mode: unknown mode '{cfg.allocation.weight_mode}'"
        )
    if cfg.threads < 1:
        raise ConfigError("config.threads must be >= 1")
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
