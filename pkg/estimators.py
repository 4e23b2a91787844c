"""
Channel estimators for the HRIS uplink
Handles noise-free recovery of G and H, the LMMSE estimators of both individual
channels, their closed-form MSEs and the cascaded-channel NMSE.

The closed forms (error covariance of G, effective noise covariance D, the
Jensen bound on the MSE of H) are written once over torch tensors; the numpy
entry points below and the optimizer's differentiable loss both go through them.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch

from channel_model import ChannelRealization, SystemConfig
from hris_model import HrisParams, reflection_coefficients, stack_reception
from pilot_protocol import PilotMatrix, project_pilots, simulate_uplink, stack_bs_observations
from utils import DimensionError, DomainError, SeedLike, vec, unvec

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


class IdentifiabilityError(ValueError):
    """Raised when the sounding frame cannot determine a channel"""

    def __init__(self, message: str, rank: int, required: int):
        super().__init__(f"{message} (numerical rank {rank}, required {required})")
        self.rank = rank
        self.required = required


@dataclass(frozen=True)
class GEstimate:
    g_hat: np.ndarray
    sigma: np.ndarray
    r_err: np.ndarray


@dataclass(frozen=True)
class HEstimate:
    h_hat: np.ndarray
    mse_bound: float


@dataclass(frozen=True)
class EffectiveNoiseCov:
    """(B K) x (B K) covariance of the BS effective noise, B x B blocks of size K"""
    D: np.ndarray
    B: int
    K: int

    def block(self, i: int, j: int) -> np.ndarray:
        K = self.K
        return self.D[i * K:(i + 1) * K, j * K:(j + 1) * K]


@dataclass(frozen=True)
class EstimationReport:
    """Outcome of one sounding frame"""
    g_hat: np.ndarray
    h_hat: np.ndarray
    eps_g: float
    eps_h: float
    sq_error_g: float
    sq_error_h: float
    cascaded_error: float
    cascaded_energy: float
    mse_h_conditional: float

    @property
    def cascaded_nmse(self) -> float:
        return self.cascaded_error / self.cascaded_energy


# Closed forms over torch tensors

def _to_tensor(array) -> torch.Tensor:
    if isinstance(array, torch.Tensor):
        return array
    return torch.from_numpy(np.array(array, dtype=complex))


def error_covariance_t(a_rc: torch.Tensor, sum_gamma: float, info_scale: float) -> torch.Tensor:
    """R_err = (R_G^-1 + info_scale A^H A)^-1 with R_G = sum_gamma I, info_scale = T Gamma / K"""
    N = a_rc.shape[1]
    eye = torch.eye(N, dtype=a_rc.dtype)
    gram = a_rc.conj().T @ a_rc
    # R_G (I + R_G s A^H A)^-1 stays finite when sum_gamma == 0
    return sum_gamma * torch.linalg.solve(eye + (sum_gamma * info_scale) * gram, eye)


def reflection_coupling_t(psi_coef: torch.Tensor, r_err: torch.Tensor, beta: float, K: int) -> torch.Tensor:
    """C_ij = (beta / K) Tr(Psi(j)^H Psi(i) R_err) for diagonal reflections psi_coef (B x N)"""
    d = torch.diagonal(r_err)
    return (beta / K) * (psi_coef * d) @ psi_coef.conj().T


def noise_cov_t(psi_coef: torch.Tensor, r_err: torch.Tensor, beta: float,
                noise_level: float, K: int) -> torch.Tensor:
    """D = C kron I_K + noise_level I, noise_level = 1 / (T Gamma)"""
    coupling = reflection_coupling_t(psi_coef, r_err, beta, K)
    size = coupling.shape[0] * K
    eye_k = torch.eye(K, dtype=coupling.dtype)
    return torch.kron(coupling, eye_k) + noise_level * torch.eye(size, dtype=coupling.dtype)


def jensen_information_t(psi_coef: torch.Tensor, sigma: torch.Tensor, D: torch.Tensor,
                         K: int, tight_bound: bool = False) -> torch.Tensor:
    """
    E = c * sum_ij Tr([D^-T]_ij) Psi(i) Sigma Psi(j)^H with c = K.

    tight_bound uses c = 1/K, from E[G_hat W G_hat^H] = Tr(W) Sigma / K when
    E[G_hat G_hat^H] = Sigma. Both are lower bounds on the MSE of H; c = 1/K is the larger one.
    """
    B = psi_coef.shape[0]
    w = torch.linalg.inv(D).T
    block_traces = torch.diagonal(w.reshape(B, K, B, K), dim1=1, dim2=3).sum(-1)
    weights = psi_coef.T @ block_traces @ psi_coef.conj()
    factor = 1.0 / K if tight_bound else float(K)
    return factor * sigma * weights


def mse_h_t(information: torch.Tensor, beta: float, M: int) -> torch.Tensor:
    """M beta Tr((I + beta E)^-1), equal to Tr((I/beta + E^T kron I_M)^-1)"""
    N = information.shape[0]
    eye = torch.eye(N, dtype=information.dtype)
    inverse = torch.linalg.solve(eye + beta * information, eye)
    return M * beta * torch.diagonal(inverse).sum().real


def weighted_mse_terms_t(rho: torch.Tensor, psi: torch.Tensor, a_rc: torch.Tensor,
                         config: SystemConfig, tight_bound: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """(eps_G, eps_H) for tensors built from the HRIS parameters"""
    K = config.K
    snr = config.snr
    c = config.sum_gamma
    r_err = error_covariance_t(a_rc, c, config.T * snr / K)
    eps_g = torch.diagonal(r_err).sum().real
    sigma = c * torch.eye(config.N, dtype=r_err.dtype) - r_err
    psi_coef = reflection_coefficients(rho, psi)
    D = noise_cov_t(psi_coef, r_err, config.beta, 1.0 / (config.T * snr), K)
    information = jensen_information_t(psi_coef, sigma, D, K, tight_bound)
    eps_h = mse_h_t(information, config.beta, config.M)
    return eps_g, eps_h


# Noise-free recovery

def min_pilot_length(N: int, K: int, N_r: int) -> int:
    """Smallest tau with tau >= N * max(1, K / N_r)"""
    if min(N, K, N_r) < 1:
        raise ValueError("N, K and N_r must be positive")
    return N if K <= N_r else -(-N * K // N_r)


def _numerical_rank(matrix: np.ndarray) -> int:
    if matrix.size == 0:
        return 0
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    if singular_values[0] == 0:
        return 0
    return int(np.sum(singular_values > RANK_TOLERANCE * singular_values[0]))


def _pilot_array(S) -> np.ndarray:
    return S.S if isinstance(S, PilotMatrix) else np.asarray(S)


def recover_G_noisefree(y_rc: np.ndarray, S, A_RC: np.ndarray, amplitude: float = 1.0) -> np.ndarray:
    """vec(G) = A_1^+ vec(y_rc) with A_1 = S^T kron A_RC"""
    S = _pilot_array(S)
    K = S.shape[0]
    N = A_RC.shape[1]
    A1 = amplitude * np.kron(S.T, A_RC)
    rank = _numerical_rank(A1)
    if rank < N * K:
        raise IdentifiabilityError("G is not identifiable from the HRIS observations", rank, N * K)
    g, *_ = np.linalg.lstsq(A1, vec(y_rc), rcond=None)
    return unvec(g, N, K)


def recover_H_noisefree(y_bs: Sequence[np.ndarray], G: np.ndarray, psi_list: Sequence[np.ndarray],
                        S, amplitude: float = 1.0) -> np.ndarray:
    """
    vec(H) = A_2^+ y_bar with A_2 = [Psi(1) G S, ..., Psi(B) G S]^T kron I_M.

    Solved as H X = Y with X the N x (B T) regressor, since rank(A_2) = M rank(X).
    """
    S = _pilot_array(S)
    if len(y_bs) != len(psi_list):
        raise DimensionError(f"Got {len(y_bs)} BS blocks for {len(psi_list)} reflection matrices")
    regressor = amplitude * np.hstack([psi @ G @ S for psi in psi_list])
    observed = np.hstack(y_bs)
    M = observed.shape[0]
    N = regressor.shape[0]
    rank = M * _numerical_rank(regressor)
    if rank < M * N:
        raise IdentifiabilityError("H is not identifiable from the BS observations", rank, M * N)
    h_t, *_ = np.linalg.lstsq(regressor.T, observed.T, rcond=None)
    return h_t.T


# LMMSE estimation

def lmmse_G(ytilde_rc: np.ndarray, A_RC: np.ndarray, gammas: Sequence[float],
            T: int, snr: float, K: int) -> GEstimate:
    """G_hat = R_G A^H (A R_G A^H + K/(T Gamma) I)^-1 y with R_G = sum(gammas) I"""
    if snr <= 0:
        raise DomainError(f"SNR must be positive, got {snr}")
    c = float(np.sum(gammas))
    rows, N = A_RC.shape
    inner = c * (A_RC @ A_RC.conj().T) + (K / (T * snr)) * np.eye(rows)
    try:
        # inner is Hermitian, so (inner^-1 c A)^H = c A^H inner^-1
        estimator = np.linalg.solve(inner, c * A_RC).conj().T
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(f"Singular observation covariance in LMMSE of G: {e}")

    g_hat = estimator @ ytilde_rc
    sigma = c * (estimator @ A_RC)
    sigma = 0.5 * (sigma + sigma.conj().T)
    with torch.no_grad():
        r_err = error_covariance_t(_to_tensor(A_RC), c, T * snr / K).numpy()
    r_err = 0.5 * (r_err + r_err.conj().T)
    return GEstimate(g_hat=g_hat, sigma=sigma, r_err=r_err)


def analytic_mse_G(params: HrisParams, gammas: Sequence[float], T: int, snr: float, K: int) -> float:
    """eps_G = Tr((R_G^-1 + (T Gamma / K) A_RC^H A_RC)^-1)"""
    if snr <= 0:
        raise DomainError(f"SNR must be positive, got {snr}")
    with torch.no_grad():
        r_err = error_covariance_t(_to_tensor(stack_reception(params)), float(np.sum(gammas)), T * snr / K)
        return float(torch.diagonal(r_err).sum().real)


def _reflection_tensor(params: HrisParams) -> torch.Tensor:
    return _to_tensor(reflection_coefficients(params.rho, params.psi))


def noise_cov_D(params: HrisParams, r_err: np.ndarray, beta: float, T: int,
                snr: float, K: int) -> EffectiveNoiseCov:
    """[D]_ij = (beta/K) Tr(Psi(j)^H Psi(i) R_err) I_K + [i == j] (T Gamma)^-1 I_K"""
    with torch.no_grad():
        D = noise_cov_t(_reflection_tensor(params), _to_tensor(r_err), beta, 1.0 / (T * snr), K).numpy()
    return EffectiveNoiseCov(D=0.5 * (D + D.conj().T), B=params.B, K=K)


def _noise_array(D: Union[EffectiveNoiseCov, np.ndarray]) -> np.ndarray:
    return D.D if isinstance(D, EffectiveNoiseCov) else np.asarray(D)


def analytic_mse_H(params: HrisParams, sigma: np.ndarray, D: Union[EffectiveNoiseCov, np.ndarray],
                   beta: float, M: int, K: int, tight_bound: bool = False) -> float:
    """Jensen lower bound on E||H - H_hat||_F^2"""
    D = _noise_array(D)
    try:
        with torch.no_grad():
            information = jensen_information_t(_reflection_tensor(params), _to_tensor(sigma),
                                               _to_tensor(D), K, tight_bound)
            return float(mse_h_t(information, beta, M))
    except RuntimeError as e:
        raise np.linalg.LinAlgError(f"Effective noise covariance is singular: {e}")


def analytic_mse(params: HrisParams, config: SystemConfig, tight_bound: bool = False) -> Tuple[float, float]:
    """(eps_G, eps_H) of a configuration, no observation needed"""
    if config.snr <= 0:
        raise DomainError(f"SNR must be positive, got {config.snr}")
    with torch.no_grad():
        eps_g, eps_h = weighted_mse_terms_t(torch.tensor(params.rho), torch.tensor(params.psi),
                                            _to_tensor(stack_reception(params)), config, tight_bound)
    return float(eps_g), float(eps_h)


def _regressor(g_hat: np.ndarray, psi_list: Sequence[np.ndarray]) -> np.ndarray:
    """X = [Psi(1) G_hat, ..., Psi(B) G_hat], an N x (B K) matrix"""
    return np.hstack([psi @ g_hat for psi in psi_list])


def lmmse_H(ybar_bs: Union[np.ndarray, Sequence[np.ndarray]], g_hat: np.ndarray,
            psi_list: Sequence[np.ndarray], D: Union[EffectiveNoiseCov, np.ndarray],
            beta: float) -> HEstimate:
    """
    LMMSE of H from the projected BS observations.

    The map R_h A^H (A R_h A^H + D kron I_M)^-1 with A = X^T kron I_M reduces to
    H_hat = Y D^-T X^H (X D^-T X^H + I / beta)^-1 with Y = [y_bs(1), ..., y_bs(B)].
    """
    D = _noise_array(D)
    N, K = g_hat.shape
    B = len(psi_list)
    if isinstance(ybar_bs, np.ndarray) and ybar_bs.ndim == 1:
        if ybar_bs.size % (K * B):
            raise DimensionError(f"Stacked observation length {ybar_bs.size} is not a multiple of K B = {K * B}")
        observed = unvec(ybar_bs, ybar_bs.size // (K * B), K * B)
    else:
        observed = np.hstack(list(ybar_bs))
    M = observed.shape[0]
    if D.shape != (B * K, B * K):
        raise DimensionError(f"D has shape {D.shape}, expected {(B * K, B * K)}")

    X = _regressor(g_hat, psi_list)
    try:
        w = np.linalg.solve(D.T, np.eye(B * K))
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(f"Effective noise covariance is singular: {e}")
    precision = beta * (X @ w @ X.conj().T) + np.eye(N)
    precision = 0.5 * (precision + precision.conj().T)
    cross = beta * (observed @ w @ X.conj().T)
    # precision is Hermitian: H_hat = cross precision^-1 = (precision^-1 cross^H)^H
    h_hat = np.linalg.solve(precision, cross.conj().T).conj().T
    mse = M * beta * float(np.trace(np.linalg.solve(precision, np.eye(N))).real)
    return HEstimate(h_hat=h_hat, mse_bound=mse)


def lmmse_H_dense(ybar_bs: np.ndarray, g_hat: np.ndarray, psi_list: Sequence[np.ndarray],
                  D: Union[EffectiveNoiseCov, np.ndarray], beta: float, M: int) -> np.ndarray:
    """Same estimator built from the explicit (M K B) x (M N) Kronecker operator"""
    D = _noise_array(D)
    N = g_hat.shape[0]
    A = np.kron(_regressor(g_hat, psi_list).T, np.eye(M))
    noise = np.kron(D, np.eye(M))
    h = beta * A.conj().T @ np.linalg.solve(beta * (A @ A.conj().T) + noise, np.asarray(ybar_bs))
    return unvec(h, M, N)


def cascaded_error_terms(h_hat: np.ndarray, g_hat: np.ndarray, H: np.ndarray,
                         G: np.ndarray) -> Tuple[float, float]:
    """(sum_k ||H_hat diag(g_hat_k) - H diag(g_k)||^2, sum_k ||H diag(g_k)||^2)"""
    estimate = h_hat[:, :, np.newaxis] * g_hat[np.newaxis, :, :]
    truth = H[:, :, np.newaxis] * G[np.newaxis, :, :]
    return float(np.sum(np.abs(estimate - truth) ** 2)), float(np.sum(np.abs(truth) ** 2))


def cascaded_nmse(h_hat: np.ndarray, g_hat: np.ndarray, H: np.ndarray, G: np.ndarray) -> float:
    error, energy = cascaded_error_terms(h_hat, g_hat, H, G)
    if energy == 0:
        raise DomainError("Cascaded channel is identically zero")
    return error / energy


def estimate_frame(channels: ChannelRealization, params: HrisParams, pilots: PilotMatrix,
                   config: SystemConfig, seed: SeedLike, genie_g: bool = False,
                   tight_bound: bool = False, gammas: Optional[Sequence[float]] = None) -> EstimationReport:
    """
    Run one sounding frame end to end: simulate, estimate G at the HRIS, then H
    at the BS from the conveyed G estimate (or the true G when genie_g is set).
    """
    gammas = config.gammas if gammas is None else tuple(gammas)
    snr = config.snr
    obs = simulate_uplink(channels, params, pilots, config, seed)
    ytilde_rc, ytilde_bs = project_pilots(obs, pilots)

    A_RC = stack_reception(params)
    g_est = lmmse_G(ytilde_rc, A_RC, gammas, config.T, snr, config.K)
    eps_g = float(np.trace(g_est.r_err).real)
    D = noise_cov_D(params, g_est.r_err, config.beta, config.T, snr, config.K)
    eps_h = analytic_mse_H(params, g_est.sigma, D, config.beta, config.M, config.K, tight_bound)

    psi_list = [np.diag(reflection_coefficients(params.rho[b], params.psi[b])) for b in range(params.B)]
    regressor_g = channels.G if genie_g else g_est.g_hat
    h_est = lmmse_H(stack_bs_observations(ytilde_bs), regressor_g, psi_list, D, config.beta)

    error, energy = cascaded_error_terms(h_est.h_hat, g_est.g_hat, channels.H, channels.G)
    return EstimationReport(
        g_hat=g_est.g_hat,
        h_hat=h_est.h_hat,
        eps_g=eps_g,
        eps_h=eps_h,
        sq_error_g=float(np.sum(np.abs(channels.G - g_est.g_hat) ** 2)),
        sq_error_h=float(np.sum(np.abs(channels.H - h_est.h_hat) ** 2)),
        cascaded_error=error,
        cascaded_energy=energy,
        mse_h_conditional=h_est.mse_bound,
    )
