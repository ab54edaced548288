"""Two-stage pulse synthesis.

Stage 1 (fidelity) repeatedly linearizes the terminal state and solves the
ridge-regularized box QP for a pulse increment; stage 2 (energy) lowers
``||u||`` with increments in the kernel of the projected Jacobian so the
terminal state only moves along the target's global phase.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bragg
from .ensemble import EnsembleModel
from .propagator import (
    ControlPulse,
    TimeGrid,
    blocked_terminal_and_jacobian,
    propagate_blocks,
)
from .qp import build_projection, solve_energy_qp, solve_fidelity_qp

logger = logging.getLogger(__name__)

# rejected steps grow lambda; this far above its start the iterate is stationary
LAMBDA_CEILING_FACTOR = 1e8


class SynthesisError(RuntimeError):
    """Raised when an iteration cannot continue; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    lambda_init: float | None = None  # None: 10 x largest squared singular value of J
    lambda_decay: float = 0.5
    lambda_min: float = 1e-9
    mu_init: float = 1.0
    mu_decay: float = 0.5
    mu_min: float = 1e-6
    stall_threshold: float = 0.3
    error_tolerance: float = 1e-3
    max_iterations_fidelity: int = 400
    max_iterations_energy: int = 150
    drift_allowance: float = 0.0  # extra stage-2 error budget, in units of error_tolerance
    max_energy_retries: int = 6
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        for name in ("lambda_decay", "mu_decay"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                out.append(f"{name} must lie in (0, 1), got {v}")
        for name in ("lambda_min", "mu_init", "mu_min", "stall_threshold", "error_tolerance"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if self.lambda_init is not None:
            if not self.lambda_init > 0:
                out.append("lambda_init must be positive")
            elif self.lambda_min > self.lambda_init:
                out.append("lambda_min must not exceed lambda_init")
        if not 0.0 <= self.drift_allowance <= 10.0:
            out.append("drift_allowance must lie in [0, 10]")
        if self.mu_min > self.mu_init:
            out.append("mu_min must not exceed mu_init")
        if self.max_iterations_fidelity < 0 or self.max_iterations_energy < 0:
            out.append("iteration limits must be nonnegative")
        return out

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class StageTrace:
    errors: list[float] = field(default_factory=list)
    surrogates: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    regularization: list[float] = field(default_factory=list)
    rejected: int = 0


@dataclass
class SynthesisReport:
    error_trace: list[float]
    surrogate_trace: list[float]
    energy_trace: list[float]
    final_pulse: ControlPulse
    iterations_used: int
    wall_clock_seconds: float
    stage2_error_drift: float
    stage1_iterations: int = 0
    stage1_error: float = float("nan")
    final_error: float = float("nan")
    converged: bool = False
    n0: int | None = None
    seed: int | None = None

    @property
    def stage2_energy_trace(self) -> list[float]:
        return self.energy_trace[self.stage1_iterations:]


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


class _Problem:
    """Block-form evaluation of terminal states, errors and Jacobians."""

    def __init__(self, model: EnsembleModel, psi0, psi_t):
        self.model = model
        self.psi0 = np.asarray(psi0, dtype=complex)
        self.target_blocks = model.to_blocks(np.asarray(psi_t, dtype=complex)).ravel()

    def terminal(self, pulse):
        return propagate_blocks(self.model, pulse, self.psi0)[-1].ravel()

    def terminal_and_jacobian(self, pulse):
        phi, jac = blocked_terminal_and_jacobian(self.model, pulse, self.psi0)
        return phi.ravel(), jac.reshape(-1, jac.shape[-1])

    def overlap(self, phi):
        return np.vdot(self.target_blocks, phi)

    def error(self, phi) -> float:
        return float(max(0.0, 1.0 - abs(self.overlap(phi)) ** 2))

    def aligned_target(self, phi):
        ov = self.overlap(phi)
        phase = ov / abs(ov) if abs(ov) > 0 else 1.0
        return self.target_blocks * phase

    def surrogate(self, phi) -> float:
        return float(np.sum(np.abs(phi - self.aligned_target(phi)) ** 2))


def _stack(jac):
    return np.vstack([jac.real, jac.imag])


def largest_squared_singular_value(J_real: np.ndarray, iterations: int = 50, seed: int = 0) -> float:
    """Power iteration on ``J^T J``."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=J_real.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iterations):
        w = J_real.T @ (J_real @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        est = float(v @ w)
        v = w / nw
    return est


def random_initial_pulse(grid: TimeGrid, lower, upper, seed: int, channels: int = 1) -> ControlPulse:
    """Uniform samples on the lowest tenth of the allowed range."""
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (channels,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (channels,))
    rng = np.random.default_rng(seed)
    span = 0.1 * (upper - lower)
    values = lower + span * rng.random((grid.steps, channels))
    return ControlPulse(grid, values, lower, upper)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def fidelity_stage(
    model: EnsembleModel,
    pulse0: ControlPulse,
    psi0,
    psi_t,
    config: SolverConfig,
    problem: _Problem | None = None,
) -> tuple[ControlPulse, StageTrace]:
    """Drive the terminal error below ``config.error_tolerance``.

    Candidate steps that do not lower the error are rejected and the ridge
    weight grows; accepted steps whose relative improvement falls below
    ``stall_threshold`` shrink it (floored at ``lambda_min``).
    """
    prob = problem or _Problem(model, psi0, psi_t)
    pulse = pulse0
    phi, jac = prob.terminal_and_jacobian(pulse)
    err = prob.error(phi)
    trace = StageTrace()
    trace.errors.append(err)
    trace.surrogates.append(prob.surrogate(phi))
    trace.energies.append(pulse.energy)
    if err <= config.error_tolerance or config.max_iterations_fidelity == 0:
        return pulse, trace

    j_real = _stack(jac)
    lam = config.lambda_init
    if lam is None:
        lam = 10.0 * largest_squared_singular_value(j_real, seed=config.seed)
        lam = max(lam, config.lambda_min)
    trace.regularization.append(lam)
    lam_ceiling = LAMBDA_CEILING_FACTOR * lam
    u = pulse.flat
    lo, hi = pulse.flat_lower, pulse.flat_upper
    fresh = True
    for it in range(config.max_iterations_fidelity):
        if not fresh:
            phi, jac = prob.terminal_and_jacobian(pulse)
            j_real = _stack(jac)
        r = phi - prob.aligned_target(phi)
        sol = solve_fidelity_qp(j_real, np.concatenate([r.real, r.imag]), lam, lo - u, hi - u)
        candidate = pulse.with_flat(u + sol.delta_u)
        phi_new = prob.terminal(candidate)
        err_new = prob.error(phi_new)
        if not np.isfinite(err_new):
            raise SynthesisError(f"non-finite error at iteration {it}", trace)
        if err_new < err:
            improvement = (err - err_new) / err
            pulse, u, phi, err = candidate, candidate.flat, phi_new, err_new
            fresh = False
            if improvement < config.stall_threshold:
                lam = max(lam * config.lambda_decay, config.lambda_min)
        else:
            trace.rejected += 1
            fresh = True
            lam = lam / config.lambda_decay
            if lam > lam_ceiling:
                logger.info("fidelity stage stationary at error %.3e after %d iterations", err, it)
                trace.regularization.append(lam)
                break
        trace.errors.append(err)
        trace.surrogates.append(prob.surrogate(phi))
        trace.energies.append(pulse.energy)
        trace.regularization.append(lam)
        if err <= config.error_tolerance:
            break
        if trace.errors[0] > 0 and err > 10.0 * trace.errors[0]:
            raise SynthesisError("error grew tenfold above its initial value", trace)
    return pulse, trace


def energy_stage(
    model: EnsembleModel,
    pulse: ControlPulse,
    psi0,
    psi_t,
    config: SolverConfig,
    problem: _Problem | None = None,
    error_bound: float | None = None,
) -> tuple[ControlPulse, StageTrace]:
    """Lower the pulse energy while keeping the exact terminal error bounded.

    Each accepted pulse must satisfy ``error <= error_bound`` after exact
    re-propagation (default: the larger of the entry error and the stage-1
    tolerance, plus ``drift_allowance`` tolerances).  A violating step is retried with a larger ``mu``;
    after ``max_energy_retries`` failures the last compliant pulse is kept.
    """
    prob = problem or _Problem(model, psi0, psi_t)
    trace = StageTrace()
    phi, jac = prob.terminal_and_jacobian(pulse)
    err0 = prob.error(phi)
    if error_bound is None:
        error_bound = max(err0, config.error_tolerance) + config.drift_allowance * config.error_tolerance
    trace.errors.append(err0)
    trace.surrogates.append(prob.surrogate(phi))
    trace.energies.append(pulse.energy)
    projector = build_projection(prob.target_blocks)
    mu = config.mu_init
    trace.regularization.append(mu)
    u = pulse.flat
    lo, hi = pulse.flat_lower, pulse.flat_upper
    retries = 0
    fresh = True
    for it in range(config.max_iterations_energy):
        if not fresh:
            phi, jac = prob.terminal_and_jacobian(pulse)
        sol = solve_energy_qp(u, _stack(jac), projector, mu, lo - u, hi - u)
        if np.linalg.norm(sol.delta_u) == 0.0:
            break
        candidate = pulse.with_flat(u + sol.delta_u)
        phi_new = prob.terminal(candidate)
        err_new = prob.error(phi_new)
        if err_new > error_bound or candidate.energy > pulse.energy:
            trace.rejected += 1
            retries += 1
            if retries > config.max_energy_retries:
                logger.info("energy stage stopped: fidelity drift after %d retries", retries - 1)
                break
            mu = mu / config.mu_decay
            fresh = True
            continue
        retries = 0
        improvement = (pulse.energy - candidate.energy) / max(pulse.energy, 1e-300)
        pulse, u, phi = candidate, candidate.flat, phi_new
        fresh = False
        trace.errors.append(err_new)
        trace.surrogates.append(prob.surrogate(phi))
        trace.energies.append(pulse.energy)
        trace.regularization.append(mu)
        if improvement < config.stall_threshold * 1e-3:
            if mu <= config.mu_min:
                break
            mu = max(mu * config.mu_decay, config.mu_min)
    return pulse, trace


def synthesize(
    model: EnsembleModel,
    psi0,
    psi_t,
    pulse0: ControlPulse,
    config: SolverConfig,
    run_energy_stage: bool = True,
) -> SynthesisReport:
    """Fidelity stage followed, if it met tolerance, by the energy stage."""
    t0 = time.perf_counter()
    prob = _Problem(model, psi0, psi_t)
    pulse, t1 = fidelity_stage(model, pulse0, psi0, psi_t, config, problem=prob)
    err1 = t1.errors[-1]
    converged = err1 <= config.error_tolerance
    errors, surrogates, energies = list(t1.errors), list(t1.surrogates), list(t1.energies)
    stage1_iters = len(errors)
    drift = 0.0
    if run_energy_stage and config.max_iterations_energy > 0:
        pulse, t2 = energy_stage(model, pulse, psi0, psi_t, config, problem=prob)
        errors += t2.errors[1:]
        surrogates += t2.surrogates[1:]
        energies += t2.energies[1:]
        drift = abs(t2.errors[-1] - err1)
    final_err = errors[-1]
    return SynthesisReport(
        error_trace=errors,
        surrogate_trace=surrogates,
        energy_trace=energies,
        final_pulse=pulse,
        iterations_used=len(errors) - 1,
        wall_clock_seconds=time.perf_counter() - t0,
        stage2_error_drift=drift,
        stage1_iterations=stage1_iters,
        stage1_error=err1,
        final_error=final_err,
        converged=converged,
    )


def momentum_ladder(
    bragg_config: bragg.BraggConfig,
    n0_target: int,
    config: SolverConfig,
    initial_pulse: ControlPulse | None = None,
    start: int = 1,
    callback=None,
) -> list[SynthesisReport]:
    """Warm-started synthesis for ``n0 = start .. n0_target``.

    Rung ``n0`` uses truncation ``18 + 2 n0`` (unless the config fixes ``N``)
    and starts from the previous rung's final pulse.  The ladder stops at the
    first rung that misses the fidelity tolerance.
    """
    if n0_target < 1:
        raise ValueError("n0_target must be >= 1")
    reports = []
    lower, upper = bragg.bounds_for(bragg_config)
    pulse = initial_pulse
    if pulse is None:
        pulse = random_initial_pulse(bragg_config.grid, lower, upper, config.seed)
    for n0 in range(start, n0_target + 1):
        cfg = bragg_config.replace(n0=n0)
        model = bragg.build_design_model(cfg)
        pulse = ControlPulse(
            cfg.grid, np.clip(pulse.values, lower, upper), lower, upper
        )
        report = synthesize(
            model, bragg.initial_state(cfg, model), bragg.target_state(cfg, model), pulse, config
        )
        report.n0 = n0
        report.seed = config.seed
        reports.append(report)
        if callback is not None:
            callback(report)
        logger.info(
            "rung n0=%d seed=%d: error %.3e after %d iterations (%.1fs)",
            n0, config.seed, report.final_error, report.iterations_used, report.wall_clock_seconds,
        )
        if not report.converged:
            break
        pulse = report.final_pulse
    return reports
