"""
Experiment sweeps for the HRIS uplink
Monte Carlo validation of the analytic MSEs, the power-splitting trade-off,
optimizer convergence traces and the cascaded-NMSE curves over SNR, pilot
length and RF-chain count.

Trials are keyed (seed, trial), so grid points share channel and noise draws and
results do not depend on the worker count.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from channel_model import SystemConfig, sample_channels
from config import CURVE_SWEEPS, ExperimentConfig, GeometrySettings
from estimators import (
    analytic_mse,
    estimate_frame,
    lmmse_G,
    lmmse_H,
    lmmse_H_dense,
    min_pilot_length,
    noise_cov_D,
)
from hris_model import ConnectionTopology, HrisParams, random_params, reflection_coefficients, stack_reception
from optimizer import (
    HrisObjective,
    OptimizationResult,
    ParamLayout,
    initial_point,
    optimize,
    pack,
    unpack,
)
from pilot_protocol import generate_pilots, project_pilots, simulate_uplink, stack_bs_observations
from utils import seed_key

logger = logging.getLogger(__name__)

NO_SENSING_RHO = 1 - 1e-6
FLAT_WINDOW = 10
FLAT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class TrialTask:
    system: SystemConfig
    params: HrisParams
    seed: Tuple[int, ...]
    trial: int
    genie_g: bool = False
    tight_bound: bool = False
    geometry: Optional[GeometrySettings] = None


@dataclass(frozen=True)
class TrialOutcome:
    sq_error_g: float
    sq_error_h: float
    cascaded_error: float
    cascaded_energy: float
    mse_h_conditional: float


@dataclass(frozen=True)
class MonteCarloSummary:
    trials: int
    mse_g: float
    mse_g_se: float
    mse_h: float
    mse_h_se: float
    nmse_cascaded: float
    nmse_cascaded_se: float
    mse_h_conditional: float


@dataclass
class ResultRow:
    sweep: str
    value: float
    baseline: str
    tau: int
    min_pilot_length: int
    infeasible: bool
    eps_g: float
    eps_h: float
    sum_mse: float
    objective: float
    eps_g_normalized: float
    eps_h_normalized: float
    trials: int = 0
    mse_g: Optional[float] = None
    mse_g_se: Optional[float] = None
    mse_h: Optional[float] = None
    mse_h_se: Optional[float] = None
    nmse_g: Optional[float] = None
    nmse_h: Optional[float] = None
    nmse_cascaded: Optional[float] = None
    nmse_cascaded_se: Optional[float] = None
    optimizer_status: str = ""
    wall_time_s: float = 0.0


@dataclass
class ValidationReport:
    rows: pd.DataFrame
    passed: bool = field(default=True)

    @property
    def failures(self) -> pd.DataFrame:
        return self.rows[~self.rows["passed"]]


# Monte Carlo harness

def run_trial(task: TrialTask) -> TrialOutcome:
    """One sounding frame on fresh channels"""
    system = task.system
    key = task.seed + (task.trial,)
    if task.geometry is not None:
        beta, gammas = task.geometry.pathlosses(system.K, key)
        system = system.with_updates(beta=beta, gammas=gammas)
    channels = sample_channels(system, key)
    pilots = generate_pilots(system.K, system.T)
    report = estimate_frame(channels, task.params, pilots, system, key,
                            genie_g=task.genie_g, tight_bound=task.tight_bound)
    return TrialOutcome(
        sq_error_g=report.sq_error_g,
        sq_error_h=report.sq_error_h,
        cascaded_error=report.cascaded_error,
        cascaded_energy=report.cascaded_energy,
        mse_h_conditional=report.mse_h_conditional,
    )


def _init_worker():
    torch.set_num_threads(1)


def _ratio_of_means(numerator: pd.Series, denominator: pd.Series) -> Tuple[float, float]:
    """sum(num) / sum(den) with a delta-method standard error"""
    ratio = numerator.sum() / denominator.sum()
    n = len(numerator)
    if n < 2:
        return float(ratio), float("nan")
    residual = numerator - ratio * denominator
    return float(ratio), float(residual.std(ddof=1) / (np.sqrt(n) * denominator.mean()))


def summarize_trials(outcomes: List[TrialOutcome]) -> MonteCarloSummary:
    frame = pd.DataFrame([asdict(o) for o in outcomes])
    means = frame.mean()
    errors = frame.sem()
    nmse, nmse_se = _ratio_of_means(frame["cascaded_error"], frame["cascaded_energy"])
    return MonteCarloSummary(
        trials=len(frame),
        mse_g=float(means["sq_error_g"]),
        mse_g_se=float(errors["sq_error_g"]),
        mse_h=float(means["sq_error_h"]),
        mse_h_se=float(errors["sq_error_h"]),
        nmse_cascaded=nmse,
        nmse_cascaded_se=nmse_se,
        mse_h_conditional=float(means["mse_h_conditional"]),
    )


def monte_carlo(system: SystemConfig, params: HrisParams, trials: int, seed, workers: int = 1,
                genie_g: bool = False, tight_bound: bool = False,
                geometry: Optional[GeometrySettings] = None) -> MonteCarloSummary:
    """Average estimation errors over independent frames; reduction follows trial order"""
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    key = seed_key(seed)
    tasks = [TrialTask(system, params, key, t, genie_g, tight_bound, geometry) for t in range(trials)]
    if workers > 1 and trials > 1:
        processes = min(workers, trials)
        with Pool(processes, initializer=_init_worker) as pool:
            outcomes = pool.map(run_trial, tasks, chunksize=max(1, trials // (4 * processes)))
    else:
        outcomes = [run_trial(task) for task in tasks]
    return summarize_trials(outcomes)


# Baselines

def _topology(kind: str, system: SystemConfig) -> ConnectionTopology:
    if kind == "partially-connected":
        return ConnectionTopology.partially_connected(system.N, system.N_r)
    return ConnectionTopology.fully_connected()


def _random_start(exp: ExperimentConfig, system: SystemConfig, topology: ConnectionTopology) -> HrisParams:
    return random_params(system.B, system.N, system.N_r, seed=(exp.seed,), topology=topology)


def optimize_params(exp: ExperimentConfig, system: SystemConfig, start: HrisParams,
                    free: Optional[np.ndarray] = None) -> Tuple[HrisParams, OptimizationResult]:
    """Descend from start; the connection mask is taken from start"""
    layout = ParamLayout.from_params(start)
    problem = HrisObjective(system, layout, exp.weights, exp.tight_bound)
    result = optimize(problem, pack(start), exp.optimizer, free)
    return unpack(result.x, layout), result


def baseline_params(exp: ExperimentConfig, system: SystemConfig, baseline: str) -> Tuple[HrisParams, str]:
    """
    HRIS configuration of a baseline at one scenario point.

    optimized starts from the random-params point, so its objective is never
    above the random baseline.
    """
    topology = _topology(exp.topology, system)
    if baseline == "random-params":
        return _random_start(exp, system, topology), ""
    if baseline == "fixed-rho":
        return _random_start(exp, system, topology).with_rho(exp.fixed_rho), ""
    if baseline == "optimized":
        params, result = optimize_params(exp, system, _random_start(exp, system, topology))
        return params, result.status
    if baseline == "partial-connection":
        partial = ConnectionTopology.partially_connected(system.N, system.N_r)
        params, result = optimize_params(exp, system, _random_start(exp, system, partial))
        return params, result.status
    raise ValueError(f"Unknown baseline: {baseline}")


def evaluate_point(exp: ExperimentConfig, system: SystemConfig, params: HrisParams, value: float,
                   baseline: str, status: str = "", workers: int = 1) -> ResultRow:
    """Analytic MSEs plus Monte Carlo errors for one configuration"""
    started = time.perf_counter()
    eps_g, eps_h = analytic_mse(params, system, exp.tight_bound)
    w_h, w_g = exp.weights
    energy_g = system.N * system.sum_gamma
    energy_h = system.beta * system.M * system.N
    mpl = min_pilot_length(system.N, system.K, system.N_r)
    row = ResultRow(
        sweep=exp.sweep,
        value=float(value),
        baseline=baseline,
        tau=system.tau,
        min_pilot_length=mpl,
        infeasible=system.tau < mpl,
        eps_g=eps_g,
        eps_h=eps_h,
        sum_mse=eps_g + eps_h,
        objective=w_h * eps_h + w_g * eps_g,
        eps_g_normalized=eps_g / energy_g if energy_g > 0 else float("nan"),
        eps_h_normalized=eps_h / energy_h if energy_h > 0 else float("nan"),
        optimizer_status=status,
    )
    if exp.trials:
        summary = monte_carlo(system, params, exp.trials, exp.seed, workers, exp.genie_g,
                              exp.tight_bound, exp.geometry if exp.redraw_positions else None)
        row.trials = summary.trials
        row.mse_g, row.mse_g_se = summary.mse_g, summary.mse_g_se
        row.mse_h, row.mse_h_se = summary.mse_h, summary.mse_h_se
        row.nmse_g = summary.mse_g / energy_g if energy_g > 0 else float("nan")
        row.nmse_h = summary.mse_h / energy_h if energy_h > 0 else float("nan")
        row.nmse_cascaded, row.nmse_cascaded_se = summary.nmse_cascaded, summary.nmse_cascaded_se
    row.wall_time_s = time.perf_counter() - started
    logger.info(f"{exp.sweep} value={value:g} {baseline}: eps_G={eps_g:.4e} eps_H={eps_h:.4e}"
                + (f" NMSE={row.nmse_cascaded:.4e}" if row.nmse_cascaded is not None else ""))
    return row


def _rows_frame(rows: List[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])


# Sweeps

def run_rho_sweep(exp: ExperimentConfig, workers: int = 1) -> pd.DataFrame:
    """Shared rho over all elements and sub-frames: random phases vs phases optimized at that rho"""
    system = exp.system
    base = _random_start(exp, system, _topology(exp.topology, system))
    free = ParamLayout.from_params(base).phase_mask()
    rows = []
    for rho in exp.grid:
        random_phase = base.with_rho(rho)
        rows.append(evaluate_point(exp, system, random_phase, rho, "random-phase", workers=workers))
        if "optimized" in exp.baselines:
            params, result = optimize_params(exp, system, random_phase, free)
            rows.append(evaluate_point(exp, system, params, rho, "optimized-phase", result.status, workers))
    return _rows_frame(rows)


def _point_system(exp: ExperimentConfig, value: float) -> SystemConfig:
    if exp.sweep == "snr-grid":
        return exp.system.with_updates(gamma_db=float(value))
    if exp.sweep == "pilot-grid":
        return exp.system.with_updates(B=int(value) // exp.system.T)
    if exp.sweep == "rfchain-grid":
        return exp.system.with_updates(N_r=int(value))
    raise ValueError(f"Not a curve sweep: {exp.sweep}")


def run_curves(exp: ExperimentConfig, workers: int = 1) -> pd.DataFrame:
    """Cascaded NMSE per grid point and baseline; infeasible points are flagged, not dropped"""
    if exp.sweep not in CURVE_SWEEPS:
        raise ValueError(f"run_curves needs one of {', '.join(CURVE_SWEEPS)}, got {exp.sweep}")
    rows = []
    for value in exp.grid:
        system = _point_system(exp, value)
        mpl = min_pilot_length(system.N, system.K, system.N_r)
        if system.tau < mpl:
            logger.warning(f"{exp.sweep} value={value:g}: tau={system.tau} below the identifiability bound {mpl}")
        for baseline in exp.baselines:
            params, status = baseline_params(exp, system, baseline)
            rows.append(evaluate_point(exp, system, params, value, baseline, status, workers))
    return _rows_frame(rows)


def trace_is_flat(losses: np.ndarray, window: int = FLAT_WINDOW, tolerance: float = FLAT_TOLERANCE) -> bool:
    """Relative change of the loss over the last window iterations below tolerance"""
    losses = np.asarray(losses, dtype=float)
    if losses.size < 2:
        return True
    reference = losses[max(0, losses.size - 1 - window)]
    last = losses[-1]
    return bool(abs(reference - last) / max(abs(last), np.finfo(float).tiny) < tolerance)


def run_convergence(exp: ExperimentConfig) -> pd.DataFrame:
    """Loss traces of independent descents from random interior starts"""
    if exp.initializations < 2:
        raise ValueError(f"Convergence runs need at least 2 initializations, got {exp.initializations}")
    system = exp.system
    layout = ParamLayout.for_topology(system.B, system.N, system.N_r, _topology(exp.topology, system))
    problem = HrisObjective(system, layout, exp.weights, exp.tight_bound)

    records = []
    for i in range(exp.initializations):
        started = time.perf_counter()
        result = optimize(problem, initial_point(layout, (exp.seed, i)), exp.optimizer)
        flat = trace_is_flat(result.losses)
        elapsed = time.perf_counter() - started
        if not flat:
            logger.warning(f"Initialization {i} is not flat after {len(result.trace) - 1} steps")
        for record in result.trace:
            records.append({
                "initialization": i,
                "iteration": record.iteration,
                "loss": record.loss,
                "objective": record.objective,
                "barrier": record.barrier,
                "step": record.step,
                "lam": result.lam,
                "status": result.status,
                "flat": flat,
                "wall_time_s": elapsed,
            })
    return pd.DataFrame(records)


# Validation

def _check(scenario: str, check: str, analytic: float, empirical: float, empirical_se: float,
           ratio: float, tolerance: float, passed: bool, trials: int, started: float) -> dict:
    return {
        "scenario": scenario,
        "check": check,
        "analytic": analytic,
        "empirical": empirical,
        "empirical_se": empirical_se,
        "ratio": ratio,
        "tolerance": tolerance,
        "passed": bool(passed),
        "trials": trials,
        "wall_time_s": time.perf_counter() - started,
    }


def _dense_check(exp: ExperimentConfig, params: HrisParams) -> float:
    """Relative gap between the reduced and the explicit Kronecker LMMSE of H on one frame"""
    system = exp.system
    key = (exp.seed, 0)
    channels = sample_channels(system, key)
    pilots = generate_pilots(system.K, system.T)
    ytilde_rc, ytilde_bs = project_pilots(simulate_uplink(channels, params, pilots, system, key), pilots)
    g_est = lmmse_G(ytilde_rc, stack_reception(params), system.gammas, system.T, system.snr, system.K)
    D = noise_cov_D(params, g_est.r_err, system.beta, system.T, system.snr, system.K)
    psi_list = [np.diag(reflection_coefficients(params.rho[b], params.psi[b])) for b in range(params.B)]
    ybar = stack_bs_observations(ytilde_bs)
    reduced = lmmse_H(ybar, g_est.g_hat, psi_list, D, system.beta).h_hat
    dense = lmmse_H_dense(ybar, g_est.g_hat, psi_list, D, system.beta, system.M)
    scale = max(np.max(np.abs(dense)), np.finfo(float).tiny)
    return float(np.max(np.abs(reduced - dense)) / scale)


def run_validate(exp: ExperimentConfig, workers: int = 1) -> ValidationReport:
    """Analytic versus Monte Carlo MSEs, with pass/fail at the configured tolerances"""
    system = exp.system
    tol = exp.validation.g_tolerance
    floor = exp.validation.h_floor
    params = _random_start(exp, system, _topology(exp.topology, system))
    rows = []

    started = time.perf_counter()
    eps_g, eps_h = analytic_mse(params, system, exp.tight_bound)
    mc = monte_carlo(system, params, exp.trials, exp.seed, workers, exp.genie_g, exp.tight_bound)
    ratio_g = mc.mse_g / eps_g
    rows.append(_check("random-params", "mse-g", eps_g, mc.mse_g, mc.mse_g_se, ratio_g, tol,
                       abs(ratio_g - 1) < tol, mc.trials, started))
    ratio_h = mc.mse_h / eps_h
    rows.append(_check("random-params", "mse-h-bound", eps_h, mc.mse_h, mc.mse_h_se, ratio_h, floor,
                       ratio_h >= floor, mc.trials, started))
    rows.append(_check("random-params", "mse-h-conditional", mc.mse_h_conditional, mc.mse_h, mc.mse_h_se,
                       mc.mse_h / mc.mse_h_conditional, float("nan"), True, mc.trials, started))

    started = time.perf_counter()
    g_est = lmmse_G(np.zeros((system.N_r * system.B, system.K)), stack_reception(params),
                    system.gammas, system.T, system.snr, system.K)
    gap = float(np.max(np.abs(g_est.sigma + g_est.r_err - system.sum_gamma * np.eye(system.N))))
    rows.append(_check("random-params", "covariance-split", 0.0, gap, float("nan"), float("nan"), 1e-10,
                       gap < 1e-10, 0, started))

    started = time.perf_counter()
    if system.N <= exp.validation.dense_check_max_n:
        gap = _dense_check(exp, params)
        rows.append(_check("random-params", "dense-lmmse-h", 0.0, gap, float("nan"), float("nan"), 1e-8,
                           gap < 1e-8, 1, started))
    else:
        logger.warning(f"Skipping the dense M N x M N check for N={system.N}")

    started = time.perf_counter()
    no_sensing = params.with_rho(NO_SENSING_RHO)
    prior = system.N * system.sum_gamma
    mc = monte_carlo(system, no_sensing, exp.trials, exp.seed, workers, exp.genie_g, exp.tight_bound)
    ratio = mc.mse_g / prior
    rows.append(_check("no-sensing", "mse-g-prior", prior, mc.mse_g, mc.mse_g_se, ratio, tol,
                       abs(ratio - 1) < tol, mc.trials, started))

    started = time.perf_counter()
    _, eps_h = analytic_mse(params.with_rho(0.0), system, exp.tight_bound)
    full = system.beta * system.M * system.N
    ratio = eps_h / full if full > 0 else float("nan")
    rows.append(_check("no-reflection", "mse-h-prior", full, eps_h, float("nan"), ratio, 1e-12,
                       abs(eps_h - full) <= 1e-12 * max(full, 1.0), 0, started))

    frame = pd.DataFrame(rows)
    passed = bool(frame["passed"].all())
    for _, failure in frame[~frame["passed"]].iterrows():
        logger.error(f"Validation failed: {failure['scenario']}/{failure['check']} "
                     f"analytic={failure['analytic']:.6e} empirical={failure['empirical']:.6e} "
                     f"ratio={failure['ratio']:.4f}")
    return ValidationReport(rows=frame, passed=passed)
