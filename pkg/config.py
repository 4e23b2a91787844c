"""
Configuration module for the HRIS channel estimation toolkit
Handles application settings, environment variables and experiment files
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import yaml
from dotenv import load_dotenv

from channel_model import (
    ALPHA_G,
    ALPHA_H,
    BS_POSITION_M,
    HRIS_POSITION_M,
    LAMBDA0_DB,
    REFERENCE_DISTANCE_M,
    USER_CENTER_M,
    USER_RADIUS_M,
    Geometry,
    SystemConfig,
    geometry_pathlosses,
    scenario_geometry,
)
from optimizer import OptimizerSettings
from utils import SeedLike, db_to_linear

logger = logging.getLogger(__name__)

SWEEP_KINDS = ("rho-grid", "snr-grid", "pilot-grid", "rfchain-grid", "convergence", "validate")
GRID_SWEEPS = ("rho-grid", "snr-grid", "pilot-grid", "rfchain-grid")
CURVE_SWEEPS = ("snr-grid", "pilot-grid", "rfchain-grid")
BASELINES = ("optimized", "random-params", "partial-connection", "fixed-rho")
TOPOLOGIES = ("fully-connected", "partially-connected")


class Config:
    """Application settings read from the environment"""

    def __init__(self):
        load_dotenv()

        # Logging configuration
        self.LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
        self.LOG_FILE = os.getenv("LOG_FILE", "logs/hris.log")

        # Output and execution configuration
        self.OUTPUT_DIR = os.getenv("HRIS_OUTPUT_DIR", "results")
        self.WORKERS = int(os.getenv("HRIS_WORKERS", "1"))
        self.DEFAULT_CONFIG = os.getenv("HRIS_CONFIG", "config.yaml")

        self._validate_config()

    def _validate_config(self):
        """Validate configuration parameters"""
        if self.WORKERS < 1:
            raise ValueError(f"HRIS_WORKERS must be at least 1, got {self.WORKERS}")


@dataclass(frozen=True)
class GeometrySettings:
    """Deployment used to derive path losses; distances in meters"""
    bs_position_m: Tuple[float, float] = BS_POSITION_M
    hris_position_m: Tuple[float, float] = HRIS_POSITION_M
    center_m: Tuple[float, float] = USER_CENTER_M
    radius_m: float = USER_RADIUS_M
    lambda0_db: float = LAMBDA0_DB
    reference_distance_m: float = REFERENCE_DISTANCE_M
    alpha_h: float = ALPHA_H
    alpha_g: float = ALPHA_G
    redraw_positions: bool = False

    def draw(self, K: int, seed: SeedLike) -> Geometry:
        return scenario_geometry(K, self.radius_m, self.center_m, seed,
                                 self.bs_position_m, self.hris_position_m)

    def pathlosses(self, K: int, seed: SeedLike) -> Tuple[float, Tuple[float, ...]]:
        return geometry_pathlosses(self.draw(K, seed), self.alpha_h, self.alpha_g,
                                   db_to_linear(self.lambda0_db), self.reference_distance_m)


@dataclass(frozen=True)
class ValidationSettings:
    g_tolerance: float = 0.03
    h_floor: float = 0.97
    dense_check_max_n: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: scenario, sweep, baselines and optimizer settings"""
    system: SystemConfig
    sweep: str
    grid: Tuple[float, ...] = ()
    trials: int = 1
    baselines: Tuple[str, ...] = ("optimized", "random-params")
    seed: int = 0
    geometry: GeometrySettings = field(default_factory=GeometrySettings)
    pathloss_from_geometry: bool = False
    topology: str = "fully-connected"
    fixed_rho: float = 0.5
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    weights: Tuple[float, float] = (1.0, 1.0)
    initializations: int = 5
    tight_bound: bool = False
    genie_g: bool = False
    validation: ValidationSettings = field(default_factory=ValidationSettings)
    source: Optional[str] = None

    @property
    def redraw_positions(self) -> bool:
        return self.pathloss_from_geometry and self.geometry.redraw_positions

    def with_updates(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _section(raw: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ValueError(f"Section '{name}' must be a mapping")
    return value


def _pair(value, key: str) -> Tuple[float, float]:
    if value is None or len(value) != 2:
        raise ValueError(f"'{key}' must be a pair of coordinates in meters")
    return float(value[0]), float(value[1])


def _build_geometry(section: Dict[str, Any]) -> GeometrySettings:
    defaults = GeometrySettings()
    return GeometrySettings(
        bs_position_m=_pair(section.get("bs_position_m", defaults.bs_position_m), "geometry.bs_position_m"),
        hris_position_m=_pair(section.get("hris_position_m", defaults.hris_position_m), "geometry.hris_position_m"),
        center_m=_pair(section.get("center_m", defaults.center_m), "geometry.center_m"),
        radius_m=float(section.get("radius_m", defaults.radius_m)),
        lambda0_db=float(section.get("lambda0_db", defaults.lambda0_db)),
        reference_distance_m=float(section.get("reference_distance_m", defaults.reference_distance_m)),
        alpha_h=float(section.get("alpha_h", defaults.alpha_h)),
        alpha_g=float(section.get("alpha_g", defaults.alpha_g)),
        redraw_positions=bool(section.get("redraw_positions", False)),
    )


def _build_system(scenario: Dict[str, Any], geometry: GeometrySettings, seed: int) -> Tuple[SystemConfig, bool]:
    missing = [k for k in ("M", "N", "K", "N_r", "B", "T", "gamma_db") if k not in scenario]
    if missing:
        raise ValueError(f"scenario is missing keys: {', '.join(missing)}")
    K = int(scenario["K"])
    beta = scenario.get("beta")
    gammas = scenario.get("gammas")
    from_geometry = beta is None or gammas is None
    if from_geometry:
        derived_beta, derived_gammas = geometry.pathlosses(K, seed)
        beta = derived_beta if beta is None else beta
        gammas = derived_gammas if gammas is None else gammas
        logger.info(f"Path losses derived from geometry: beta={float(beta):.3e}")
    if not isinstance(gammas, (list, tuple)):
        gammas = [gammas] * K
    system = SystemConfig(
        M=int(scenario["M"]), N=int(scenario["N"]), N_r=int(scenario["N_r"]), K=K,
        B=int(scenario["B"]), T=int(scenario["T"]), gamma_db=float(scenario["gamma_db"]),
        beta=float(beta), gammas=tuple(float(g) for g in gammas),
        noise_variance=float(scenario.get("noise_variance", 1.0)),
    )
    return system, from_geometry


def _build_optimizer(section: Dict[str, Any]) -> Tuple[OptimizerSettings, Tuple[float, float], int, bool]:
    known = {f for f in OptimizerSettings.__dataclass_fields__}
    settings = OptimizerSettings(**{k: v for k, v in section.items() if k in known})
    weights = section.get("weights") or {}
    initializations = int(section.get("initializations", 5))
    if initializations < 1:
        raise ValueError(f"optimizer.initializations must be at least 1, got {initializations}")
    return (settings, (float(weights.get("h", 1.0)), float(weights.get("g", 1.0))),
            initializations, bool(section.get("tight_bound", False)))


def _validate_grid(kind: str, grid: Tuple[float, ...], system: SystemConfig):
    if kind not in GRID_SWEEPS:
        return
    if not grid:
        raise ValueError(f"sweep.grid must be non-empty for {kind}")
    if list(grid) != sorted(grid):
        raise ValueError(f"sweep.grid must be sorted, got {list(grid)}")
    if kind == "rho-grid" and not all(0 < v < 1 for v in grid):
        raise ValueError("sweep.grid values must lie in (0, 1) for rho-grid")
    if kind == "pilot-grid" and any(v <= 0 or v % system.T for v in grid):
        raise ValueError(f"sweep.grid pilot lengths must be positive multiples of T={system.T}")
    if kind == "rfchain-grid" and any(v < 1 or v > system.N or int(v) != v for v in grid):
        raise ValueError(f"sweep.grid RF-chain counts must be integers in 1..{system.N}")


def build_experiment_config(raw: Dict[str, Any], source: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed experiment mapping"""
    seed = int(raw.get("seed", 0))
    trials = int(raw.get("trials", 1))
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")

    geometry = _build_geometry(_section(raw, "geometry"))
    system, from_geometry = _build_system(_section(raw, "scenario"), geometry, seed)

    sweep = _section(raw, "sweep")
    kind = sweep.get("kind", "validate")
    if kind not in SWEEP_KINDS:
        raise ValueError(f"sweep.kind must be one of {', '.join(SWEEP_KINDS)}, got {kind}")
    grid = tuple(float(v) for v in sweep.get("grid") or ())
    _validate_grid(kind, grid, system)

    hris = _section(raw, "hris")
    topology = hris.get("topology", "fully-connected")
    if topology not in TOPOLOGIES:
        raise ValueError(f"hris.topology must be one of {', '.join(TOPOLOGIES)}, got {topology}")
    fixed_rho = float(hris.get("fixed_rho", 0.5))
    if not 0 <= fixed_rho <= 1:
        raise ValueError(f"hris.fixed_rho must lie in [0, 1], got {fixed_rho}")

    baselines = tuple(raw.get("baselines") or ("optimized", "random-params"))
    unknown = [b for b in baselines if b not in BASELINES]
    if unknown:
        raise ValueError(f"baselines contains unknown entries: {', '.join(unknown)}")

    settings, weights, initializations, tight_bound = _build_optimizer(_section(raw, "optimizer"))
    validation = _section(raw, "validation")

    return ExperimentConfig(
        system=system, sweep=kind, grid=grid, trials=trials, baselines=baselines, seed=seed,
        geometry=geometry, pathloss_from_geometry=from_geometry, topology=topology,
        fixed_rho=fixed_rho, optimizer=settings, weights=weights,
        initializations=initializations, tight_bound=tight_bound,
        genie_g=bool(validation.get("genie_g", False)),
        validation=ValidationSettings(
            g_tolerance=float(validation.get("g_tolerance", 0.03)),
            h_floor=float(validation.get("h_floor", 0.97)),
            dense_check_max_n=int(validation.get("dense_check_max_n", 16)),
        ),
        source=source,
    )


def load_experiment_config(path: str, seed: Optional[int] = None, trials: Optional[int] = None,
                           sweep: Optional[str] = None) -> ExperimentConfig:
    """Load an experiment YAML file, applying command-line overrides before validation"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Experiment config not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"Experiment config {path} must contain a mapping")

    if seed is not None:
        raw["seed"] = seed
    if trials is not None:
        raw["trials"] = trials
    if sweep is not None:
        raw["sweep"] = dict(_section(raw, "sweep"), kind=sweep)

    config = build_experiment_config(raw, source=path)
    logger.info(f"Loaded experiment config {path}: sweep={config.sweep}, trials={config.trials}, seed={config.seed}")
    return config
