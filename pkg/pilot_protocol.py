"""
Pilot protocol for the HRIS uplink
Generates orthogonal pilots, simulates the noisy B x T sounding frame at the
HRIS receive chains and at the BS, and projects the observations on the pilots.

Each UT sends every pilot symbol with power P_t, so the symbol amplitude is
a = sqrt(Gamma * sigma^2). After projection the noise is i.i.d. with variance
1/(T Gamma) per entry, i.e. E[Z Z^H] = K/(T Gamma) I for the K-column block.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from channel_model import ChannelRealization, SystemConfig
from hris_model import HrisParams, reflection_coefficients, stack_reception
from utils import (
    STREAM_NOISE_BS,
    STREAM_NOISE_RC,
    DimensionError,
    SeedLike,
    complex_gaussian,
    make_rng,
)

logger = logging.getLogger(__name__)


class InfeasiblePilotError(ValueError):
    """Raised when K orthogonal pilots cannot fit in T slots"""


@dataclass(frozen=True)
class PilotMatrix:
    """K x T pilot block with S S^H = T I_K"""
    S: np.ndarray

    @property
    def K(self) -> int:
        return self.S.shape[0]

    @property
    def T(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True)
class SoundingObservation:
    """Received pilots: HRIS chains stacked per sub-frame, BS blocks per sub-frame"""
    y_rc: np.ndarray
    y_bs: List[np.ndarray]
    noise_variance: float
    tx_amplitude: float


def generate_pilots(K: int, T: int) -> PilotMatrix:
    """First K rows of the T-point DFT basis"""
    if K > T:
        raise InfeasiblePilotError(f"Cannot build {K} orthogonal pilots of length {T}")
    k = np.arange(K)[:, np.newaxis]
    t = np.arange(T)[np.newaxis, :]
    S = np.exp(-2j * np.pi * ((k * t) % T) / T)
    return PilotMatrix(S)


def tx_amplitude(config: SystemConfig) -> float:
    """Per-symbol amplitude sqrt(Gamma * sigma^2)"""
    return float(np.sqrt(config.snr * config.noise_variance))


def _check_dimensions(channels: ChannelRealization, params: HrisParams,
                      pilots: PilotMatrix, config: SystemConfig):
    expected = {
        "H": ((config.M, config.N), channels.H.shape),
        "G": ((config.N, config.K), channels.G.shape),
        "pilots": ((config.K, config.T), pilots.S.shape),
        "params": ((config.B, config.N, config.N_r), (params.B, params.N, params.N_r)),
    }
    for name, (want, got) in expected.items():
        if tuple(want) != tuple(got):
            raise DimensionError(f"{name} has shape {got}, expected {want}")


def simulate_uplink(channels: ChannelRealization, params: HrisParams, pilots: PilotMatrix,
                    config: SystemConfig, seed: SeedLike, add_noise: bool = True) -> SoundingObservation:
    """
    Observations of one sounding frame.

    The pilot power follows from gamma_db and noise_variance; add_noise=False
    keeps that power and drops the receiver noise.
    """
    _check_dimensions(channels, params, pilots, config)
    a = tx_amplitude(config)
    sigma2 = config.noise_variance
    transmitted = a * (channels.G @ pilots.S)

    y_rc = stack_reception(params) @ transmitted
    if add_noise:
        y_rc = y_rc + complex_gaussian(make_rng(seed, STREAM_NOISE_RC), y_rc.shape, sigma2)

    y_bs = []
    for b in range(config.B):
        psi_b = reflection_coefficients(params.rho[b], params.psi[b])
        block = channels.H @ (psi_b[:, np.newaxis] * transmitted)
        if add_noise:
            block = block + complex_gaussian(make_rng(seed, STREAM_NOISE_BS, b), block.shape, sigma2)
        y_bs.append(block)

    return SoundingObservation(y_rc=y_rc, y_bs=y_bs, noise_variance=sigma2, tx_amplitude=a)


def project_pilots(obs: SoundingObservation, pilots: PilotMatrix) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Matched projection (1 / (T a)) Y S^H for the HRIS and every BS block"""
    if obs.y_rc.shape[1] != pilots.T or any(y.shape[1] != pilots.T for y in obs.y_bs):
        raise DimensionError(f"Observation length does not match the {pilots.T}-slot pilots")
    if obs.tx_amplitude <= 0:
        raise ValueError("Cannot project an observation sent with zero amplitude")
    scale = 1.0 / (pilots.T * obs.tx_amplitude)
    S_h = pilots.S.conj().T
    ytilde_rc = scale * (obs.y_rc @ S_h)
    ytilde_bs = [scale * (y @ S_h) for y in obs.y_bs]
    return ytilde_rc, ytilde_bs


def stack_bs_observations(ytilde_bs: List[np.ndarray]) -> np.ndarray:
    """y_bar = [vec(y_bs(1)); ...; vec(y_bs(B))], an M K B vector"""
    return np.hstack(ytilde_bs).reshape(-1, order='F')
