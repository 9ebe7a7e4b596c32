"""Declarative scenario configuration: defaults, strict parsing, validation.

A scenario file is YAML with one section per subsystem (world, fleet, sensing,
network, fusion, control, monte_carlo) plus optional ``table`` and ``sweep``
sections consumed by the comparison harness. Every key has a default, so an
empty file is a valid scenario; unknown keys are hard errors so typos cannot
silently fall back to defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, fields

import yaml

from .sensing import SensingMode, SensorParams
from .world import ConfigurationError, KinematicConstraints

__all__ = [
    "ScenarioConfig",
    "SweepSpec",
    "TableCell",
    "parse_config",
    "parse_config_text",
    "load_run_file",
    "config_hash",
    "MODES",
    "SWEEP_AXES",
]

# Sensing-mode labels accepted in config files and table cells.
MODES = {
    "ranging": dict(range=True, bearing=False, doppler=False),
    "ranging+doppler": dict(range=True, bearing=False, doppler=True),
    "bearing": dict(range=False, bearing=True, doppler=False),
    "bearing+doppler": dict(range=False, bearing=True, doppler=True),
    "full": dict(range=True, bearing=True, doppler=True),
}

SWEEP_AXES = ("N", "rcs", "sigma0r", "sigma_bearing")

# Fig. 3-style surveillance area: three building blocks reaching above the
# target's cruise altitude, and six ground radars on the area perimeter.
DEFAULT_OBSTACLES = [
    [[-70.0, -20.0, 0.0], [-30.0, 20.0, 45.0]],
    [[10.0, -60.0, 0.0], [50.0, -20.0, 45.0]],
    [[0.0, 30.0, 0.0], [40.0, 70.0, 45.0]],
]
DEFAULT_FIXED_POSITIONS = [
    [-100.0, -100.0, 0.0],
    [0.0, -100.0, 0.0],
    [100.0, -100.0, 0.0],
    [100.0, 100.0, 0.0],
    [0.0, 100.0, 0.0],
    [-100.0, 100.0, 0.0],
]


@dataclass
class WorldSection:
    dt: float = 1.0
    steps: int = 300
    target_start: list = field(default_factory=lambda: [-60.0, -60.0, 30.0])
    target_speed: float = 1.5
    target_heading: float = math.pi / 4
    sigma_heading: float = 0.2  # rad / sqrt(s)
    obstacles: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_OBSTACLES))
    uav_init_center: list = field(default_factory=lambda: [0.0, 0.0, 50.0])
    uav_init_radius: float = 30.0
    uav_min_altitude: float = 5.0
    free_altitude: bool = False


@dataclass
class FleetSection:
    n: int = 6
    kind: str = "dynamic"  # dynamic | fixed
    fixed_positions: list = field(
        default_factory=lambda: copy.deepcopy(DEFAULT_FIXED_POSITIONS))
    v_max: float = 10.0
    max_turn_rate: float = math.pi / 2
    safety_distance: float = 50.0
    min_separation: float = 10.0


@dataclass
class SensingSection:
    mode: str = "ranging"
    sigma0r: float = 0.001
    sigma_bearing_deg: float = 10.0
    sigma_doppler: float = 0.1
    rcs: float = 0.1


@dataclass
class NetworkSection:
    comm_range: float = 100.0
    hop_limit: int = 1
    stale_cache: bool = True


@dataclass
class FusionSection:
    filter: str = "ekf"  # ekf | ukf
    process_noise: float = 0.5  # white-acceleration intensity, m^2/s^3
    prior_center: list = field(default_factory=lambda: [0.0, 0.0, 30.0])
    prior_position_sigma: float = 20.0
    prior_velocity_sigma: float = 2.0
    age_inflation: float = 1.0  # variance factor per hop-age unit; 0 disables


@dataclass
class ControlSection:
    criterion: str = "D"  # A | D | E
    n_headings: int = 16
    speed_fractions: list = field(default_factory=lambda: [0.5, 1.0])
    include_prior: bool = True
    safety_margin_sigma: float = 3.0  # extra stand-off per unit position spread


@dataclass
class MonteCarloSection:
    runs: int = 100
    base_seed: int = 1234


@dataclass
class TableCell:
    label: str
    mode: str
    fleet: str


@dataclass
class SweepSpec:
    axis: str
    values: list


DEFAULT_TABLE_CELLS = [
    TableCell("ranging/fixed", "ranging", "fixed"),
    TableCell("ranging/dynamic", "ranging", "dynamic"),
    TableCell("ranging+doppler/fixed", "ranging+doppler", "fixed"),
    TableCell("ranging+doppler/dynamic", "ranging+doppler", "dynamic"),
    TableCell("bearing/fixed", "bearing", "fixed"),
    TableCell("bearing/dynamic", "bearing", "dynamic"),
    TableCell("bearing+doppler/fixed", "bearing+doppler", "fixed"),
    TableCell("bearing+doppler/dynamic", "bearing+doppler", "dynamic"),
]


@dataclass
class ScenarioConfig:
    """Full declarative experiment description with defaults for every field."""

    world: WorldSection = field(default_factory=WorldSection)
    fleet: FleetSection = field(default_factory=FleetSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    control: ControlSection = field(default_factory=ControlSection)
    monte_carlo: MonteCarloSection = field(default_factory=MonteCarloSection)

    # Derived runtime objects -------------------------------------------------

    def sensing_mode(self) -> SensingMode:
        return SensingMode(**MODES[self.sensing.mode])

    def sensor_params(self) -> SensorParams:
        s = self.sensing
        return SensorParams(sigma0r=s.sigma0r,
                            sigma_bearing=math.radians(s.sigma_bearing_deg),
                            sigma_doppler=s.sigma_doppler, rcs=s.rcs)

    def constraints(self) -> KinematicConstraints:
        f = self.fleet
        return KinematicConstraints(
            v_max=f.v_max, max_turn_rate=f.max_turn_rate,
            safety_distance_target=f.safety_distance,
            min_uav_separation=f.min_separation,
            altitude_locked=not self.world.free_altitude)

    def copy(self) -> "ScenarioConfig":
        return copy.deepcopy(self)

    def with_overrides(self, **named) -> "ScenarioConfig":
        """Copy with dotted overrides, e.g. with_overrides(**{"fleet.n": 4})."""
        out = self.copy()
        for dotted, value in named.items():
            section_name, _, key = dotted.partition(".")
            section = getattr(out, section_name)
            if not hasattr(section, key):
                raise ConfigurationError(f"unknown config key '{dotted}'")
            setattr(section, key, value)
        out.validate()
        return out

    def to_dict(self) -> dict:
        out = {}
        for sec_field in fields(self):
            section = getattr(self, sec_field.name)
            out[sec_field.name] = {f.name: getattr(section, f.name)
                                   for f in fields(section)}
        return out

    def validate(self) -> "ScenarioConfig":
        w, f, s = self.world, self.fleet, self.sensing
        checks = [
            (w.dt > 0, "world.dt", "must be > 0"),
            (w.steps >= 0, "world.steps", "must be >= 0"),
            (w.target_speed > 0, "world.target_speed", "must be > 0"),
            (w.sigma_heading >= 0, "world.sigma_heading", "must be >= 0"),
            (w.uav_init_radius >= 0, "world.uav_init_radius", "must be >= 0"),
            (len(w.target_start) == 3, "world.target_start", "needs 3 components"),
            (f.n >= 1, "fleet.n", "must be >= 1"),
            (f.kind in ("dynamic", "fixed"), "fleet.kind",
             "must be 'dynamic' or 'fixed'"),
            (f.v_max > 0, "fleet.v_max", "must be > 0"),
            (f.max_turn_rate >= 0, "fleet.max_turn_rate", "must be >= 0"),
            (f.safety_distance > 0, "fleet.safety_distance", "must be > 0"),
            (f.min_separation > 0, "fleet.min_separation", "must be > 0"),
            (s.mode in MODES, "sensing.mode",
             f"must be one of {sorted(MODES)}"),
            (s.sigma0r > 0, "sensing.sigma0r",
             "must be strictly positive (SensorParams invariant)"),
            (s.sigma_bearing_deg > 0, "sensing.sigma_bearing_deg",
             "must be strictly positive (SensorParams invariant)"),
            (s.sigma_doppler > 0, "sensing.sigma_doppler",
             "must be strictly positive (SensorParams invariant)"),
            (s.rcs > 0, "sensing.rcs",
             "must be strictly positive (SensorParams invariant)"),
            (self.network.comm_range > 0, "network.comm_range", "must be > 0"),
            (self.network.hop_limit >= 1, "network.hop_limit", "must be >= 1"),
            (self.fusion.filter in ("ekf", "ukf"), "fusion.filter",
             "must be 'ekf' or 'ukf'"),
            (self.fusion.process_noise > 0, "fusion.process_noise", "must be > 0"),
            (self.fusion.prior_position_sigma > 0, "fusion.prior_position_sigma",
             "must be > 0"),
            (self.fusion.prior_velocity_sigma > 0, "fusion.prior_velocity_sigma",
             "must be > 0"),
            (self.fusion.age_inflation >= 0, "fusion.age_inflation", "must be >= 0"),
            (self.control.criterion in ("A", "D", "E"), "control.criterion",
             "must be 'A', 'D' or 'E'"),
            (self.control.n_headings >= 1, "control.n_headings", "must be >= 1"),
            (self.control.safety_margin_sigma >= 0, "control.safety_margin_sigma",
             "must be >= 0"),
            (len(self.control.speed_fractions) >= 1
             and all(0 < v <= 1 for v in self.control.speed_fractions),
             "control.speed_fractions", "must be fractions in (0, 1]"),
            (self.monte_carlo.runs >= 1, "monte_carlo.runs", "must be >= 1"),
        ]
        for ok, path, msg in checks:
            if not ok:
                raise ConfigurationError(f"{path}: {msg}")
        if f.kind == "fixed" and len(f.fixed_positions) != f.n:
            raise ConfigurationError(
                f"fleet.fixed_positions: has {len(f.fixed_positions)} entries "
                f"but fleet.n is {f.n}")
        for i, box in enumerate(w.obstacles):
            if (len(box) != 2 or len(box[0]) != 3 or len(box[1]) != 3
                    or any(hi <= lo for lo, hi in zip(box[0], box[1]))):
                raise ConfigurationError(
                    f"world.obstacles[{i}]: expected [min_corner, max_corner] "
                    "with min < max on every axis")
        return self


def config_hash(cfg: ScenarioConfig) -> str:
    """Platform-stable hash of the fully-resolved configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _fill_section(section, data: dict, path: str) -> None:
    known = {f.name: f for f in fields(section)}
    for key, value in data.items():
        if key not in known:
            raise ConfigurationError(
                f"unknown config key '{path}.{key}' "
                f"(known keys: {', '.join(sorted(known))})")
        current = getattr(section, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"{path}.{key}: expected a boolean")
        elif isinstance(current, int) and not isinstance(value, bool):
            if not isinstance(value, int):
                raise ConfigurationError(f"{path}.{key}: expected an integer")
        elif isinstance(current, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigurationError(f"{path}.{key}: expected a number")
            value = float(value)
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigurationError(f"{path}.{key}: expected a string")
        elif isinstance(current, list):
            if not isinstance(value, list):
                raise ConfigurationError(f"{path}.{key}: expected a list")
        setattr(section, key, value)


def _parse_table(data, path="table") -> list[TableCell]:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping with 'cells'")
    unknown = set(data) - {"cells"}
    if unknown:
        raise ConfigurationError(f"unknown config key '{path}.{unknown.pop()}'")
    cells = []
    for i, cell in enumerate(data.get("cells", [])):
        if not isinstance(cell, dict):
            raise ConfigurationError(f"{path}.cells[{i}]: expected a mapping")
        extra = set(cell) - {"label", "mode", "fleet"}
        if extra:
            raise ConfigurationError(
                f"unknown config key '{path}.cells[{i}].{extra.pop()}'")
        mode = cell.get("mode", "ranging")
        fleet = cell.get("fleet", "dynamic")
        if mode not in MODES:
            raise ConfigurationError(
                f"{path}.cells[{i}].mode: must be one of {sorted(MODES)}")
        if fleet not in ("dynamic", "fixed"):
            raise ConfigurationError(
                f"{path}.cells[{i}].fleet: must be 'dynamic' or 'fixed'")
        cells.append(TableCell(cell.get("label", f"{mode}/{fleet}"), mode, fleet))
    if not cells:
        raise ConfigurationError(f"{path}.cells: must list at least one cell")
    return cells


def _parse_sweep(data, path="sweep") -> SweepSpec:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping with axis/values")
    unknown = set(data) - {"axis", "values"}
    if unknown:
        raise ConfigurationError(f"unknown config key '{path}.{unknown.pop()}'")
    axis = data.get("axis")
    values = data.get("values", [])
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"{path}.axis: must be one of {SWEEP_AXES}")
    if not isinstance(values, list) or not values:
        raise ConfigurationError(f"{path}.values: must be a non-empty list")
    return SweepSpec(axis, list(values))


def parse_config_text(text: str) -> ScenarioConfig:
    """Parse YAML text into a validated ScenarioConfig (scenario sections only)."""
    cfg, _, _ = _parse_document(text)
    return cfg


def _parse_document(text: str):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config parse error: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping (or empty)")
    cfg = ScenarioConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    table_cells = None
    sweep = None
    for key, value in data.items():
        if key == "table":
            table_cells = _parse_table(value)
            continue
        if key == "sweep":
            sweep = _parse_sweep(value)
            continue
        if key not in sections:
            raise ConfigurationError(
                f"unknown config key '{key}' (known sections: "
                f"{', '.join(sorted(sections))}, table, sweep)")
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigurationError(f"{key}: expected a mapping of options")
        _fill_section(sections[key], value, key)
    cfg.validate()
    return cfg, table_cells, sweep


def parse_config(path: str) -> ScenarioConfig:
    """Load and validate a scenario config file (missing file is an error)."""
    cfg, _, _ = load_run_file(path)
    return cfg


def load_run_file(path: str):
    """Load a config file including optional table/sweep sections.

    Returns (ScenarioConfig, table cells or None, SweepSpec or None).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    return _parse_document(text)
