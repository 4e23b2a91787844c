"""
HRIS parameter optimizer
Packs the HRIS configuration into a real vector, evaluates the
barrier-regularized weighted sum-MSE and descends on it with backtracking.

Gradients come from torch reverse-mode differentiation through the same closed
forms the estimators use.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from channel_model import SystemConfig
from estimators import weighted_mse_terms_t
from hris_model import TWO_PI, ConnectionTopology, HrisParams, random_params, reception_stack
from utils import STREAM_INIT, DimensionError, DomainError, SeedLike, seed_key

logger = logging.getLogger(__name__)

BOUNDARY_NUDGE = 1e-6


@dataclass(frozen=True)
class ParamLayout:
    """Index map of x = [rho(1..B), psi(1..B), phi(1..B)]; phi keeps connected entries only"""
    B: int
    N: int
    N_r: int
    mask: np.ndarray = field(repr=False)

    @classmethod
    def for_topology(cls, B: int, N: int, N_r: int,
                     topology: Optional[ConnectionTopology] = None) -> "ParamLayout":
        topology = topology or ConnectionTopology.fully_connected()
        return cls(B, N, N_r, topology.mask(N, N_r))

    @classmethod
    def from_params(cls, params: HrisParams) -> "ParamLayout":
        return cls(params.B, params.N, params.N_r, params.mask)

    @property
    def connections(self) -> int:
        return int(self.mask.sum())

    @property
    def size(self) -> int:
        return 2 * self.B * self.N + self.B * self.connections

    @property
    def rho_slice(self) -> slice:
        return slice(0, self.B * self.N)

    @property
    def psi_slice(self) -> slice:
        return slice(self.B * self.N, 2 * self.B * self.N)

    @property
    def phi_slice(self) -> slice:
        return slice(2 * self.B * self.N, self.size)

    def upper_bounds(self) -> np.ndarray:
        upper = np.full(self.size, TWO_PI)
        upper[self.rho_slice] = 1.0
        return upper

    def phase_mask(self) -> np.ndarray:
        """True at psi and phi coordinates"""
        phases = np.ones(self.size, dtype=bool)
        phases[self.rho_slice] = False
        return phases


def pack(params: HrisParams) -> np.ndarray:
    """Flatten strictly interior parameters into x"""
    layout = ParamLayout.from_params(params)
    connected_phi = params.phi[:, params.mask]
    if np.any(params.rho <= 0) or np.any(params.rho >= 1):
        raise DomainError(
            f"rho must be strictly inside (0, 1) to pack; nudge boundary values by {BOUNDARY_NUDGE}"
            " (see clamp_interior)")
    for name, phases in (("psi", params.psi), ("phi", connected_phi)):
        if np.any(phases <= 0) or np.any(phases >= TWO_PI):
            raise DomainError(
                f"{name} must be strictly inside (0, 2*pi) to pack; nudge boundary values by"
                f" {BOUNDARY_NUDGE} (see clamp_interior)")
    x = np.concatenate([params.rho.ravel(), params.psi.ravel(), connected_phi.ravel()])
    assert x.size == layout.size
    return x


def unpack(x: np.ndarray, layout: ParamLayout) -> HrisParams:
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.size,):
        raise DimensionError(f"Expected a vector of length {layout.size}, got shape {x.shape}")
    B, N, N_r = layout.B, layout.N, layout.N_r
    phi = np.zeros((B, N_r, N))
    phi[:, layout.mask] = x[layout.phi_slice].reshape(B, layout.connections)
    return HrisParams(x[layout.rho_slice].reshape(B, N), x[layout.psi_slice].reshape(B, N),
                      phi, layout.mask)


def clamp_interior(params: HrisParams, margin: float = BOUNDARY_NUDGE) -> HrisParams:
    """Move boundary values margin inside the box"""
    return HrisParams(np.clip(params.rho, margin, 1 - margin),
                      np.clip(params.psi, margin, TWO_PI - margin),
                      np.clip(params.phi, margin, TWO_PI - margin), params.mask)


def initial_point(layout: ParamLayout, seed: SeedLike) -> np.ndarray:
    """Random interior start: rho in (0.3, 0.7), phases in (0.1, 2 pi - 0.1)"""
    params = random_params(layout.B, layout.N, layout.N_r, seed=seed_key(seed) + (STREAM_INIT,))
    params = HrisParams(params.rho, params.psi, params.phi, layout.mask)
    return pack(params)


class BoxBarrier:
    """sum 1/x + 1/(u - x) over the box (0, u)"""

    def __init__(self, upper: np.ndarray):
        self.upper = np.asarray(upper, dtype=float)
        self._upper_t = torch.as_tensor(self.upper)

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.isfinite(x)) and np.all(x > 0) and np.all(x < self.upper))

    def value_t(self, x_t: torch.Tensor) -> torch.Tensor:
        return (1.0 / x_t + 1.0 / (self._upper_t - x_t)).sum()

    def value(self, x: np.ndarray) -> float:
        if not self.contains(x):
            raise DomainError("Barrier is undefined outside the open box")
        with torch.no_grad():
            return float(self.value_t(torch.as_tensor(np.asarray(x, dtype=float))))


class HrisObjective:
    """
    Weighted sum-MSE f(x) = w_H eps_H + w_G eps_G with the interior barrier.

    loss(x; lam) = f(x) + lam * B_C(x).
    """

    def __init__(self, config: SystemConfig, layout: ParamLayout,
                 weights: Tuple[float, float] = (1.0, 1.0), tight_bound: bool = False):
        if (layout.B, layout.N, layout.N_r) != (config.B, config.N, config.N_r):
            raise DimensionError(
                f"Layout {(layout.B, layout.N, layout.N_r)} does not match config {(config.B, config.N, config.N_r)}")
        self.config = config
        self.layout = layout
        self.weight_h, self.weight_g = weights
        self.tight_bound = tight_bound
        self.box = BoxBarrier(layout.upper_bounds())
        rows, cols = np.nonzero(layout.mask)
        self._phi_index = torch.as_tensor(rows * layout.N + cols, dtype=torch.long)
        self._mask_t = torch.from_numpy(np.array(layout.mask, dtype=bool))

    def is_interior(self, x: np.ndarray) -> bool:
        return self.box.contains(x)

    def _split_t(self, x_t: torch.Tensor):
        layout = self.layout
        B, N, N_r = layout.B, layout.N, layout.N_r
        rho = x_t[layout.rho_slice].reshape(B, N)
        psi = x_t[layout.psi_slice].reshape(B, N)
        phi = x_t.new_zeros((B, N_r * N)).index_copy(
            1, self._phi_index, x_t[layout.phi_slice].reshape(B, layout.connections))
        return rho, psi, phi.reshape(B, N_r, N)

    def mse_terms_t(self, x_t: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        rho, psi, phi = self._split_t(x_t)
        a_rc = reception_stack(rho, phi, self._mask_t)
        return weighted_mse_terms_t(rho, psi, a_rc, self.config, self.tight_bound)

    def objective_t(self, x_t: torch.Tensor) -> torch.Tensor:
        eps_g, eps_h = self.mse_terms_t(x_t)
        return self.weight_h * eps_h + self.weight_g * eps_g

    def loss_t(self, x_t: torch.Tensor, lam: float) -> torch.Tensor:
        value = self.objective_t(x_t)
        if lam:
            value = value + lam * self.box.value_t(x_t)
        return value

    def _check(self, x: np.ndarray) -> torch.Tensor:
        if not self.is_interior(x):
            raise DomainError("Point is not strictly inside the feasible box")
        return torch.as_tensor(np.array(x, dtype=float))

    def mse_terms(self, x: np.ndarray) -> Tuple[float, float]:
        with torch.no_grad():
            eps_g, eps_h = self.mse_terms_t(self._check(x))
        return float(eps_g), float(eps_h)

    def objective(self, x: np.ndarray) -> float:
        with torch.no_grad():
            return float(self.objective_t(self._check(x)))

    def barrier(self, x: np.ndarray) -> float:
        return self.box.value(x)

    def loss(self, x: np.ndarray, lam: float) -> float:
        with torch.no_grad():
            return float(self.loss_t(self._check(x), lam))

    def gradient(self, x: np.ndarray, lam: float) -> np.ndarray:
        x_t = self._check(x).requires_grad_(True)
        value = self.loss_t(x_t, lam)
        (grad,) = torch.autograd.grad(value, x_t)
        return grad.numpy()


def finite_difference_gradient(problem, x: np.ndarray, lam: float, step: float = 1e-5) -> np.ndarray:
    """Central differences of problem.loss, one coordinate at a time"""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        forward = x.copy()
        backward = x.copy()
        forward[j] += step
        backward[j] -= step
        grad[j] = (problem.loss(forward, lam) - problem.loss(backward, lam)) / (2 * step)
    return grad


METHODS = ("adam", "gd")
DEFAULT_ETA = {"adam": 5e-2, "gd": 1e-2}


@dataclass(frozen=True)
class OptimizerSettings:
    """
    Descent settings. method "gd" is plain gradient descent on grad / |L(x0)|;
    "adam" scales each coordinate by running gradient moments. eta defaults per method.
    """
    eta: Optional[float] = None
    lam: Optional[float] = None
    max_iter: int = 100
    rel_tol: float = 1e-6
    backtracking: bool = True
    shrink: float = 0.5
    increase: float = 2.0
    eta_max: float = 10.0
    min_eta: float = 1e-14
    normalize: bool = True
    method: str = "adam"
    betas: Tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.eta is None:
            object.__setattr__(self, "eta", DEFAULT_ETA[self.method])
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be non-negative, got {self.max_iter}")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValueError(f"betas must be two values in [0, 1), got {self.betas}")

    @property
    def eta_cap(self) -> float:
        """Largest step size reached by growth after accepted steps"""
        return self.eta if self.method == "adam" else self.eta_max


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    loss: float
    objective: float
    barrier: float
    step: float


@dataclass
class OptimizationResult:
    x: np.ndarray
    trace: List[TraceRecord]
    status: str
    lam: float

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.trace])

    @property
    def final_loss(self) -> float:
        return self.trace[-1].loss


def default_barrier_weight(problem, x0: np.ndarray) -> float:
    """lam = 1e-6 f(x0) / B_C(x0)"""
    barrier = problem.barrier(x0)
    return 1e-6 * problem.objective(x0) / barrier if barrier > 0 else 0.0


def _record(problem, iteration: int, x: np.ndarray, loss: float, lam: float, step: float) -> TraceRecord:
    objective = problem.objective(x)
    return TraceRecord(iteration, loss, objective, problem.barrier(x), step)


class GradientStep:
    """x - eta * scale * grad"""

    def __init__(self, scale: float):
        self.scale = scale

    def trial(self, x: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
        return x - eta * self.scale * grad

    def commit(self):
        pass

    def reset(self) -> bool:
        return False


class AdamStep:
    """
    torch Adam update of x. Moments advance only when a trial is committed, so a
    rejected step can be retried with a smaller learning rate.
    """

    def __init__(self, size: int, betas: Tuple[float, float]):
        self.param = torch.nn.Parameter(torch.zeros(size, dtype=torch.float64))
        self.betas = betas
        self._restarted = False
        self._start()

    def _start(self):
        self.optimizer = torch.optim.Adam([self.param], lr=1.0, betas=self.betas)
        self._committed = copy.deepcopy(self.optimizer.state_dict())

    def trial(self, x: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
        self.optimizer.load_state_dict(copy.deepcopy(self._committed))
        for group in self.optimizer.param_groups:
            group["lr"] = eta
        with torch.no_grad():
            self.param.copy_(torch.from_numpy(np.array(x, dtype=float)))
        self.param.grad = torch.from_numpy(np.array(grad, dtype=float))
        self.optimizer.step()
        return self.param.detach().numpy().copy()

    def commit(self):
        self._committed = copy.deepcopy(self.optimizer.state_dict())
        self._restarted = False

    def reset(self) -> bool:
        """Drop the moments once per failed iteration; fresh moments step along -sign(grad)"""
        if self._restarted:
            return False
        self._start()
        self._restarted = True
        return True


def optimize(problem, x0: np.ndarray, settings: Optional[OptimizerSettings] = None,
             free: Optional[np.ndarray] = None) -> OptimizationResult:
    """
    Barrier-regularized descent x <- x - eta * d(x) with d the gradient, or the
    Adam direction built from it.

    With backtracking the step is halved until the candidate is interior and does
    not increase L, so the trace is non-increasing. An Adam step that fails down to
    min_eta restarts the moments once and retries from the configured eta. Without
    backtracking, a step that leaves the box aborts the run. Coordinates outside
    the free mask stay fixed. The run counts as converged once a step taken at the
    full trial eta changes L by less than rel_tol.
    """
    settings = settings or OptimizerSettings()
    x = np.array(x0, dtype=float)
    if not problem.is_interior(x):
        raise DomainError("Initial point must be strictly inside the feasible box")
    lam = default_barrier_weight(problem, x) if settings.lam is None else settings.lam

    loss = problem.loss(x, lam)
    if settings.method == "adam":
        stepper = AdamStep(x.size, settings.betas)
    else:
        stepper = GradientStep(1.0 / abs(loss) if settings.normalize and loss != 0 else 1.0)
    trace = [_record(problem, 0, x, loss, lam, 0.0)]
    eta = settings.eta
    status = "max_iter"
    logger.info(f"Starting {settings.method} descent: L={loss:.6e}, lambda={lam:.3e}, "
                f"max_iter={settings.max_iter}")

    for iteration in range(1, settings.max_iter + 1):
        try:
            grad = problem.gradient(x, lam)
        except DomainError as e:
            logger.error(f"Gradient failed at iteration {iteration}: {e}")
            status = "domain_error"
            break
        if free is not None:
            grad = np.where(free, grad, 0.0)
        if not np.all(np.isfinite(grad)):
            logger.warning(f"Non-finite gradient at iteration {iteration}")
            status = "non_finite"
            break
        if not np.any(grad):
            status = "stationary"
            break

        trial_eta = eta
        candidate, candidate_loss = None, None
        while True:
            while eta >= settings.min_eta:
                trial = stepper.trial(x, grad, eta)
                if problem.is_interior(trial):
                    trial_loss = problem.loss(trial, lam)
                    if not settings.backtracking or trial_loss <= loss:
                        candidate, candidate_loss = trial, trial_loss
                        break
                elif not settings.backtracking:
                    break
                eta *= settings.shrink
            if candidate is not None or not settings.backtracking or not stepper.reset():
                break
            logger.debug(f"iter {iteration}: restarting Adam moments")
            eta = trial_eta = settings.eta

        if candidate is None:
            status = "left_domain" if not settings.backtracking else "stalled"
            if status == "left_domain":
                logger.warning(f"Step of size {eta:.3e} left the feasible box at iteration {iteration}")
            break

        stepper.commit()
        change = abs(loss - candidate_loss) / max(abs(loss), np.finfo(float).tiny)
        x, loss = candidate, candidate_loss
        trace.append(_record(problem, iteration, x, loss, lam, eta))
        logger.debug(f"iter {iteration}: L={loss:.6e} step={eta:.3e}")
        undamped = eta == trial_eta
        if settings.backtracking and undamped:
            eta = min(eta * settings.increase, settings.eta_cap)
        if undamped and change < settings.rel_tol:
            status = "converged"
            break

    if not settings.backtracking and trace[-1].loss > trace[0].loss:
        status = "diverged" if status == "max_iter" else status
        logger.warning("Loss increased over the run without backtracking")
    logger.info(f"Descent finished ({status}) after {len(trace) - 1} steps: L={loss:.6e}")
    return OptimizationResult(x=x, trace=trace, status=status, lam=lam)


def multi_start(problem, seeds: Sequence[SeedLike], settings: Optional[OptimizerSettings] = None,
                free: Optional[np.ndarray] = None) -> List[OptimizationResult]:
    """Independent runs from random interior starts"""
    return [optimize(problem, initial_point(problem.layout, seed), settings, free) for seed in seeds]
