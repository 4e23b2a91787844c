"""
Channel model for the HRIS uplink simulator
Handles scenario geometry, path losses and Rayleigh channel realizations
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from utils import (
    STREAM_CHANNELS,
    STREAM_GEOMETRY,
    DomainError,
    SeedLike,
    complex_gaussian,
    db_to_linear,
    make_rng,
)

logger = logging.getLogger(__name__)

LAMBDA0_DB = -20.0
REFERENCE_DISTANCE_M = 1.0
ALPHA_H = 2.2
ALPHA_G = 2.1
BS_POSITION_M = (0.0, 0.0)
HRIS_POSITION_M = (0.0, 50.0)
USER_CENTER_M = (30.0, 50.0)
USER_RADIUS_M = 10.0


@dataclass(frozen=True)
class SystemConfig:
    """Static context of an experiment: dimensions, SNR and path losses"""
    M: int
    N: int
    N_r: int
    K: int
    B: int
    T: int
    gamma_db: float
    beta: float
    gammas: Tuple[float, ...]
    noise_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        for name in ("M", "N", "N_r", "K", "B", "T"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if self.N_r > self.N:
            raise ValueError(f"N_r ({self.N_r}) cannot exceed N ({self.N})")
        if self.T < self.K:
            raise ValueError(f"T ({self.T}) must be at least K ({self.K}) for orthogonal pilots")
        if len(self.gammas) != self.K:
            raise ValueError(f"Expected {self.K} user path losses, got {len(self.gammas)}")
        if self.beta < 0 or any(g < 0 for g in self.gammas):
            raise ValueError("Path losses must be non-negative")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def tau(self) -> int:
        """Total pilot length B*T"""
        return self.B * self.T

    @property
    def snr(self) -> float:
        """Transmit SNR in linear scale"""
        return db_to_linear(self.gamma_db)

    @property
    def sum_gamma(self) -> float:
        return float(sum(self.gammas))

    def with_updates(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Geometry:
    """2D positions in meters"""
    bs_position: Tuple[float, float]
    hris_position: Tuple[float, float]
    user_positions: np.ndarray = field(repr=False)

    def hris_bs_distance(self) -> float:
        return float(np.hypot(*np.subtract(self.bs_position, self.hris_position)))

    def hris_user_distances(self) -> np.ndarray:
        return np.hypot(*(self.user_positions - np.asarray(self.hris_position)).T)


@dataclass(frozen=True)
class ChannelRealization:
    """Individual channels: H is HRIS->BS (M x N), G is UTs->HRIS (N x K)"""
    H: np.ndarray
    G: np.ndarray


def pathloss(d: float, alpha: float, lambda0: float = db_to_linear(LAMBDA0_DB),
             d0: float = REFERENCE_DISTANCE_M) -> float:
    """Distance-based path loss lambda0 * (d / d0) ** (-alpha)"""
    if d <= 0 or d0 <= 0:
        raise DomainError(f"Distances must be positive (d={d}, d0={d0})")
    if lambda0 <= 0:
        raise DomainError(f"Reference gain must be positive, got {lambda0}")
    return float(lambda0 * (d / d0) ** (-alpha))


def scenario_geometry(K: int, radius: float = USER_RADIUS_M,
                      center: Sequence[float] = USER_CENTER_M, seed: SeedLike = 0,
                      bs_position: Sequence[float] = BS_POSITION_M,
                      hris_position: Sequence[float] = HRIS_POSITION_M) -> Geometry:
    """Place K users uniformly in a disc around center"""
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")

    rng = make_rng(seed, STREAM_GEOMETRY)
    # sqrt of a uniform radius gives a uniform density over the disc
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, K))
    theta = rng.uniform(0.0, 2 * np.pi, K)
    users = np.column_stack([center[0] + r * np.cos(theta), center[1] + r * np.sin(theta)])

    geometry = Geometry(tuple(float(v) for v in bs_position),
                        tuple(float(v) for v in hris_position), users)
    if geometry.hris_bs_distance() <= 0 or np.any(geometry.hris_user_distances() <= 0):
        raise DomainError("HRIS must not coincide with the BS or any user")
    return geometry


def geometry_pathlosses(geometry: Geometry, alpha_h: float = ALPHA_H, alpha_g: float = ALPHA_G,
                        lambda0: float = db_to_linear(LAMBDA0_DB),
                        d0: float = REFERENCE_DISTANCE_M) -> Tuple[float, Tuple[float, ...]]:
    """Return (beta, gammas) for a geometry"""
    beta = pathloss(geometry.hris_bs_distance(), alpha_h, lambda0, d0)
    gammas = tuple(pathloss(d, alpha_g, lambda0, d0) for d in geometry.hris_user_distances())
    logger.debug(f"Path losses: beta={beta:.3e}, gammas={[f'{g:.3e}' for g in gammas]}")
    return beta, gammas


def sample_channels(config: SystemConfig, seed: SeedLike,
                    gammas: Optional[Sequence[float]] = None) -> ChannelRealization:
    """Draw H and G with i.i.d. CN entries of variance beta and gamma_k"""
    rng = make_rng(seed, STREAM_CHANNELS)
    column_variances = np.asarray(config.gammas if gammas is None else gammas, dtype=float)
    H = complex_gaussian(rng, (config.M, config.N), config.beta)
    G = complex_gaussian(rng, (config.N, config.K), column_variances[np.newaxis, :])
    return ChannelRealization(H=H, G=G)
