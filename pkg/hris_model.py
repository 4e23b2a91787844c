"""
HRIS model for the uplink simulator
Handles the power-splitting/phase parameterization and the reflection and
reception matrices built from it.

Each element reflects a fraction rho of the impinging amplitude with phase psi
and forwards (1 - rho) to every RF chain it is wired to, with phase phi. A
connected entry carries the full (1 - rho) amplitude even when the element feeds
several chains, so the model does not conserve energy for fully-connected
combiners.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from utils import STREAM_PARAMS, DimensionError, SeedLike, make_rng

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ConnectionTopology:
    """RF-chain wiring: fully connected, or one chain per element"""
    kind: str = "fully-connected"
    assignment: Optional[Sequence[int]] = None

    def __post_init__(self):
        if self.kind not in ("fully-connected", "partially-connected"):
            raise ValueError(f"Unknown topology kind: {self.kind}")

    @classmethod
    def fully_connected(cls) -> "ConnectionTopology":
        return cls("fully-connected")

    @classmethod
    def partially_connected(cls, N: int, N_r: int,
                            assignment: Optional[Sequence[int]] = None) -> "ConnectionTopology":
        """Element l feeds chain assignment[l]; defaults to l mod N_r"""
        if assignment is None:
            assignment = [l % N_r for l in range(N)]
        return cls("partially-connected", tuple(int(a) for a in assignment))

    def mask(self, N: int, N_r: int) -> np.ndarray:
        if self.kind == "fully-connected":
            return np.ones((N_r, N), dtype=bool)
        if len(self.assignment) != N or not all(0 <= a < N_r for a in self.assignment):
            raise DimensionError(f"Assignment must map {N} elements onto chains 0..{N_r - 1}")
        mask = np.zeros((N_r, N), dtype=bool)
        mask[list(self.assignment), np.arange(N)] = True
        return mask


@dataclass(frozen=True)
class HrisParams:
    """
    HRIS configuration over B sub-frames.

    rho, psi: B x N; phi: B x N_r x N; mask: N_r x N (True where chain r is fed
    by element l). Phases at unconnected positions are stored as zero.
    """
    rho: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        psi = np.array(self.psi, dtype=float)
        phi = np.array(self.phi, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if rho.ndim != 2 or psi.shape != rho.shape:
            raise DimensionError(f"rho and psi must both be B x N, got {rho.shape} and {psi.shape}")
        B, N = rho.shape
        if mask.ndim != 2 or mask.shape[1] != N:
            raise DimensionError(f"mask must be N_r x {N}, got {mask.shape}")
        if phi.shape != (B, mask.shape[0], N):
            raise DimensionError(f"phi must be {(B, mask.shape[0], N)}, got {phi.shape}")
        if np.any(rho < 0) or np.any(rho > 1):
            raise ValueError("rho entries must lie in [0, 1]")
        if np.any(psi < 0) or np.any(psi > TWO_PI) or np.any(phi < 0) or np.any(phi > TWO_PI):
            raise ValueError("phase entries must lie in [0, 2*pi]")
        if not np.all(mask.any(axis=0)):
            logger.warning("Some HRIS elements feed no RF chain; G is not fully identifiable")

        phi = np.where(mask[np.newaxis], phi, 0.0)
        for name, value in (("rho", rho), ("psi", psi), ("phi", phi), ("mask", mask)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def B(self) -> int:
        return self.rho.shape[0]

    @property
    def N(self) -> int:
        return self.rho.shape[1]

    @property
    def N_r(self) -> int:
        return self.mask.shape[0]

    def with_rho(self, rho) -> "HrisParams":
        return HrisParams(np.broadcast_to(rho, self.rho.shape), self.psi, self.phi, self.mask)


def random_params(B: int, N: int, N_r: int, seed: SeedLike,
                  topology: Optional[ConnectionTopology] = None,
                  rho_range=(0.3, 0.7), phase_margin: float = 0.1) -> HrisParams:
    """Random interior configuration used as a baseline and as an optimizer start"""
    topology = topology or ConnectionTopology.fully_connected()
    rng = make_rng(seed, STREAM_PARAMS)
    rho = rng.uniform(rho_range[0], rho_range[1], (B, N))
    psi = rng.uniform(phase_margin, TWO_PI - phase_margin, (B, N))
    phi = rng.uniform(phase_margin, TWO_PI - phase_margin, (B, N_r, N))
    return HrisParams(rho, psi, phi, topology.mask(N, N_r))


def _check_subframe(params: HrisParams, b: int):
    if not 1 <= b <= params.B:
        raise IndexError(f"Sub-frame index {b} outside 1..{params.B}")


def reflection_coefficients(rho, psi):
    """Diagonal entries rho * exp(j psi); accepts numpy arrays or torch tensors"""
    if isinstance(rho, torch.Tensor):
        return rho * torch.exp(1j * psi)
    return rho * np.exp(1j * psi)


def reception_stack(rho, phi, mask):
    """
    Stacked reception matrix from raw arrays.

    rho: B x N, phi: B x N_r x N, mask: N_r x N. Returns (N_r B) x N with
    row-block b equal to Phi(b).
    """
    if isinstance(rho, torch.Tensor):
        mask_t = mask if isinstance(mask, torch.Tensor) else torch.from_numpy(np.array(mask, dtype=bool))
        blocks = (1 - rho)[:, None, :] * torch.exp(1j * phi)
        blocks = torch.where(mask_t[None], blocks, torch.zeros_like(blocks))
        return blocks.reshape(-1, rho.shape[1])
    blocks = (1 - rho)[:, np.newaxis, :] * np.exp(1j * phi)
    blocks = np.where(mask[np.newaxis], blocks, 0.0)
    return blocks.reshape(-1, rho.shape[1])


def reflection_matrix(params: HrisParams, b: int) -> np.ndarray:
    """Psi(b) = diag(rho_l(b) exp(j psi_l(b))), b counted from 1"""
    _check_subframe(params, b)
    return np.diag(reflection_coefficients(params.rho[b - 1], params.psi[b - 1]))


def reflection_matrices(params: HrisParams):
    return [reflection_matrix(params, b) for b in range(1, params.B + 1)]


def reception_matrix(params: HrisParams, b: int) -> np.ndarray:
    """Phi(b) with entries (1 - rho_l) exp(j phi_rl) where connected, b counted from 1"""
    _check_subframe(params, b)
    return reception_stack(params.rho[b - 1:b], params.phi[b - 1:b], params.mask)


def stack_reception(params: HrisParams) -> np.ndarray:
    """A_RC = [Phi(1); ...; Phi(B)]"""
    return reception_stack(params.rho, params.phi, params.mask)
