"""Bragg beamsplitter design and verification models.

Design model: the folded nonnegative-momentum ladder ``[C_0, C_2, ..., C_2N]``
with kinetic drift ``diag((2j)^2)``, a Doppler drift ``delta * diag(4j)``
scaled by the momentum offset ``delta = k/k0`` and the optical coupling
(first link ``sqrt(2)/2``, then ``1/2``) scaled by the intensity factor
``gamma`` and driven by the pulse.  The ``delta^2`` part of the kinetic
energy is a global phase and is left out.

The folded ladder assumes ``C_{-2n} = C_{2n}``, which the Doppler term breaks
for ``delta != 0``.  Robust designs over a Doppler interval therefore default
to the signed design basis: the full ladder ``n = -N..N`` with the same three
terms, initial state ``C_0`` and target ``(C_{-2n0} + C_{2n0}) / sqrt(2)``.

Verification model: the signed ladder ``n = -N..N`` with kinetic diagonal
``(2n + delta)^2`` and coupling ``gamma * u / 2`` between neighbours.  All
reported errors come from this model.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .ensemble import (
    DRIFT,
    EnsembleModel,
    HamiltonianTerm,
    Mode,
    ParameterDomain,
    ParameterSpec,
    embed_hamiltonians,
    embed_initial_state,
)
from .propagator import ControlPulse, TimeGrid

logger = logging.getLogger(__name__)

NORM_DRIFT_TOL = 1e-8
N_FILTERS = 200


@dataclass(frozen=True)
class BraggConfig:
    n0: int = 1
    N: int | None = None
    doppler_interval: tuple[float, float] = (0.0, 0.0)
    intensity_interval: tuple[float, float] = (1.0, 1.0)
    degrees: tuple[int, int] = (0, 0)
    mode: Mode = Mode.LEGENDRE
    amplitude_bound: float = 30.0
    horizon: float = 2 * math.pi
    steps: int = 630
    design_basis: str = "auto"  # "folded", "signed" or "auto"

    def __post_init__(self):
        object.__setattr__(self, "doppler_interval", tuple(float(x) for x in self.doppler_interval))
        object.__setattr__(self, "intensity_interval", tuple(float(x) for x in self.intensity_interval))
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
        object.__setattr__(self, "mode", Mode(self.mode))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.n0 < 1:
            out.append("target index must be ≥ 1")
        if self.truncation < self.n0:
            out.append(f"truncation N={self.truncation} must be at least n0={self.n0}")
        lo, hi = self.doppler_interval
        if not (lo <= 0.0 <= hi):
            out.append("doppler interval must contain the nominal value 0")
        if max(abs(lo), abs(hi)) >= 2.0:
            out.append("doppler interval must stay within |k/k0| < 2")
        lo, hi = self.intensity_interval
        if not (0.0 < lo <= 1.0 <= hi):
            out.append("intensity interval must be positive and contain the nominal value 1")
        if len(self.degrees) != 2 or min(self.degrees) < 0:
            out.append("degrees must be two nonnegative integers")
        if not self.amplitude_bound > 0:
            out.append("amplitude bound must be positive")
        if not self.horizon > 0:
            out.append("horizon must be positive")
        if self.steps < 1:
            out.append("steps must be >= 1")
        if self.design_basis not in ("auto", "folded", "signed"):
            out.append("design basis must be 'auto', 'folded' or 'signed'")
        return out

    @property
    def basis(self) -> str:
        """Resolved design basis: signed whenever the Doppler offset varies."""
        if self.design_basis != "auto":
            return self.design_basis
        lo, hi = self.doppler_interval
        return "signed" if hi > lo else "folded"

    @property
    def dim_physical(self) -> int:
        N = self.truncation
        return 2 * N + 1 if self.basis == "signed" else N + 1

    @property
    def truncation(self) -> int:
        return self.N if self.N is not None else 18 + 2 * self.n0

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps)

    def replace(self, **changes) -> "BraggConfig":
        import dataclasses

        return dataclasses.replace(self, **changes)


def folded_matrices(N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(H1, H1_doppler, H2)`` of the folded ladder truncated at order ``N``."""
    j = np.arange(N + 1)
    h1 = np.diag((2.0 * j) ** 2)
    h1_doppler = np.diag(4.0 * j)
    off = np.full(N, 0.5)
    if N >= 1:
        off[0] = math.sqrt(2.0) / 2.0
    h2 = np.diag(off, 1) + np.diag(off, -1)
    return h1, h1_doppler, h2


def signed_matrices(N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(H1, H1_doppler, H2)`` of the signed ladder ``n = -N..N``."""
    n = np.arange(-N, N + 1)
    coupling = 0.5 * (np.eye(2 * N + 1, k=1) + np.eye(2 * N + 1, k=-1))
    return np.diag((2.0 * n) ** 2), np.diag(4.0 * n), coupling


def design_matrices(config: BraggConfig):
    if config.basis == "signed":
        return signed_matrices(config.truncation)
    return folded_matrices(config.truncation)


def build_design_model(config: BraggConfig) -> EnsembleModel:
    """Moment-space design model over (Doppler offset, intensity factor)."""
    h1, h1_doppler, h2 = design_matrices(config)
    d_deg, g_deg = config.degrees
    domain = ParameterDomain(
        (
            ParameterSpec(*config.doppler_interval, d_deg),
            ParameterSpec(*config.intensity_interval, g_deg),
        ),
        config.mode,
    )
    terms = [
        HamiltonianTerm(h1),
        HamiltonianTerm(h1_doppler, DRIFT, parameter_index=0),
        HamiltonianTerm(h2, control_index=0, parameter_index=1),
    ]
    return embed_hamiltonians(terms, domain)


def initial_state(config: BraggConfig, model: EnsembleModel | None = None) -> np.ndarray:
    model = model or build_design_model(config)
    psi = np.zeros(config.dim_physical, dtype=complex)
    psi[config.truncation if config.basis == "signed" else 0] = 1.0
    return embed_initial_state(psi, model.domain)


def target_state(config: BraggConfig, model: EnsembleModel | None = None) -> np.ndarray:
    """Folded basis vector ``n0`` (or its signed symmetric pair) embedded like the initial state."""
    model = model or build_design_model(config)
    psi = np.zeros(config.dim_physical, dtype=complex)
    if config.basis == "signed":
        N = config.truncation
        psi[[N - config.n0, N + config.n0]] = math.sqrt(0.5)
    else:
        psi[config.n0] = 1.0
    return embed_initial_state(psi, model.domain)


def bounds_for(config: BraggConfig) -> tuple[float, float]:
    return 0.0, float(config.amplitude_bound)


# ---------------------------------------------------------------------------
# signed verification model
# ---------------------------------------------------------------------------


def signed_hamiltonians(values: np.ndarray, delta: float, gamma: float, N: int) -> np.ndarray:
    """Stacked signed-ladder Hamiltonians ``(K, 2N+1, 2N+1)`` for pulse samples."""
    n = np.arange(-N, N + 1)
    kinetic = np.diag((2.0 * n + delta) ** 2)
    coupling = signed_matrices(N)[2]
    values = np.asarray(values, dtype=float).reshape(-1)
    return kinetic[None] + (gamma * values)[:, None, None] * coupling[None]


def _signed_evolution(values, dt, delta, gamma, N, keep_trajectory):
    h = signed_hamiltonians(values, delta, gamma, N)
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * dt * w)
    psi = np.zeros(2 * N + 1, dtype=complex)
    psi[N] = 1.0
    traj = [psi] if keep_trajectory else None
    for k in range(len(values)):
        psi = v[k] @ (phases[k] * (v[k].T @ psi))
        if keep_trajectory:
            traj.append(psi)
    return psi, traj


def signed_populations(pulse: ControlPulse, delta: float, gamma: float, N: int) -> np.ndarray:
    """Population of every signed level over time, shape ``(K+1, 2N+1)``."""
    _, traj = _signed_evolution(pulse.values[:, 0], pulse.grid.dt, delta, gamma, N, True)
    return np.abs(np.array(traj)) ** 2


def simulate_signed(
    pulse: ControlPulse | np.ndarray,
    delta: float,
    gamma: float,
    n0: int,
    N: int,
    dt: float | None = None,
) -> float:
    """Terminal error ``1 - |C_{+2n0}|^2 - |C_{-2n0}|^2`` from ``C_0 = 1``.

    ``pulse`` may be a :class:`ControlPulse` or raw samples with ``dt``.
    """
    if abs(delta) >= 2.0:
        raise ValueError("|k/k0| must be below 2 to keep resonances distinct")
    if not gamma > 0:
        raise ValueError("intensity factor must be positive")
    if isinstance(pulse, ControlPulse):
        values, dt = pulse.values[:, 0], pulse.grid.dt
    else:
        values = np.asarray(pulse, dtype=float)
        if dt is None:
            raise ValueError("dt is required for raw pulse samples")
    psi, _ = _signed_evolution(values, dt, delta, gamma, N, False)
    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > NORM_DRIFT_TOL:
        warnings.warn(f"signed simulation norm drift {drift:.2e}", RuntimeWarning)
    pop = abs(psi[N + n0]) ** 2 + abs(psi[N - n0]) ** 2
    return float(min(max(1.0 - pop, 0.0), 1.0))


def simulate_folded(pulse: ControlPulse, delta: float, gamma: float, N: int) -> np.ndarray:
    """Terminal folded-ladder state at a single parameter point."""
    h1, h1_doppler, h2 = folded_matrices(N)
    values = pulse.values[:, 0]
    h = (h1 + delta * h1_doppler)[None] + (gamma * values)[:, None, None] * h2[None]
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * pulse.grid.dt * w)
    psi = np.zeros(N + 1, dtype=complex)
    psi[0] = 1.0
    for k in range(len(values)):
        psi = v[k] @ (phases[k] * (v[k].T @ psi))
    return psi


# ---------------------------------------------------------------------------
# pulse statistics and robustness grid
# ---------------------------------------------------------------------------


def pulse_statistics(values: np.ndarray) -> dict[str, float]:
    """Amplitude and step-to-step variation, in units of the recoil frequency."""
    values = np.asarray(values, dtype=float).reshape(-1)
    jumps = np.abs(np.diff(values)) if values.size > 1 else np.zeros(1)
    return {
        "max_u": float(values.max()),
        "mean_u": float(values.mean()),
        "max_du": float(jumps.max()),
        "mean_du": float(jumps.mean()),
    }


@dataclass
class RobustnessReport:
    grid: list[tuple[float, float]]
    terminal_errors: np.ndarray
    grid_shape: tuple[int, int]
    max_error: float
    mean_error: float
    min_error: float
    max_u: float
    mean_u: float
    max_du: float
    mean_du: float
    clock_minutes: float = 0.0

    def summary(self) -> dict[str, float]:
        return {
            "max_error": self.max_error,
            "mean_error": self.mean_error,
            "min_error": self.min_error,
            "max_u": self.max_u,
            "mean_u": self.mean_u,
            "max_du": self.max_du,
            "mean_du": self.mean_du,
            "clock_minutes": self.clock_minutes,
        }


def verification_grid(config: BraggConfig, grid_shape=(9, 9)) -> list[tuple[float, float]]:
    deltas = np.linspace(*config.doppler_interval, grid_shape[0])
    gammas = np.linspace(*config.intensity_interval, grid_shape[1])
    return [(float(d), float(g)) for d in deltas for g in gammas]


def _grid_point_error(args):
    values, dt, delta, gamma, n0, N = args
    return simulate_signed(values, delta, gamma, n0, N, dt=dt)


def robustness_grid(
    pulse: ControlPulse,
    config: BraggConfig,
    grid_shape: tuple[int, int] = (9, 9),
    executor=None,
    clock_minutes: float = 0.0,
) -> RobustnessReport:
    """Signed-model errors on the tensor grid over the design intervals.

    ``executor`` (anything with ``map``) distributes grid points; results are
    gathered in grid order, so they do not depend on scheduling.
    """
    points = verification_grid(config, grid_shape)
    jobs = [
        (pulse.values[:, 0], pulse.grid.dt, d, g, config.n0, config.truncation)
        for d, g in points
    ]
    mapper = executor.map if executor is not None else map
    errors = np.array(list(mapper(_grid_point_error, jobs)))
    stats = pulse_statistics(pulse.values[:, 0])
    return RobustnessReport(
        grid=points,
        terminal_errors=errors,
        grid_shape=tuple(grid_shape),
        max_error=float(errors.max()),
        mean_error=float(errors.mean()),
        min_error=float(errors.min()),
        clock_minutes=clock_minutes,
        **stats,
    )


# ---------------------------------------------------------------------------
# bandwidth sweep
# ---------------------------------------------------------------------------


@dataclass
class FilterSweepReport:
    cutoffs: np.ndarray  # in units of the sampling frequency
    probabilities: np.ndarray
    sampling_frequency: float
    skipped: list[int] = field(default_factory=list)
    unfiltered_probability: float = float("nan")

    def first_cutoff_reaching(self, level: float) -> float:
        hits = np.flatnonzero(self.probabilities >= level)
        return float(self.cutoffs[hits[0]]) if hits.size else float("inf")


def sampling_frequency(config_or_grid) -> float:
    """Samples per unit of dimensionless time: ``(steps - 1) / horizon``."""
    grid = config_or_grid.grid if isinstance(config_or_grid, BraggConfig) else config_or_grid
    return (grid.steps - 1) / grid.horizon


def physical_frequency(config: BraggConfig, omega_r_hz: float) -> float:
    """Sampling frequency in Hz for recoil frequency ``omega_r_hz``."""
    if not omega_r_hz > 0:
        raise ValueError("recoil frequency must be positive")
    return sampling_frequency(config) * omega_r_hz


def lowpass(values: np.ndarray, normalized_cutoff: float, order: int = 4) -> np.ndarray | None:
    """Causal Butterworth low-pass with the DC group delay trimmed.

    ``normalized_cutoff`` is the cutoff over the Nyquist frequency.  The
    filter runs forward over the pulse followed by zeros (the light is off
    after the pulse) and the output is shifted back by the rounded DC group
    delay so it stays aligned with the simulation grid.  Negative outputs
    are clamped to zero.  Returns ``None`` for an unstable design.
    """
    b, a = scipy.signal.butter(order, normalized_cutoff, btype="low")
    if np.any(np.abs(np.roots(a)) >= 1.0):
        return None
    _, gd = scipy.signal.group_delay((b, a), w=[0.0])
    shift = int(round(float(gd[0])))
    padded = np.concatenate([values, np.zeros(shift)])
    out = scipy.signal.lfilter(b, a, padded)[shift: shift + len(values)]
    return np.maximum(out, 0.0)


def filter_sweep(
    pulse: ControlPulse,
    n0: int,
    N: int,
    filter_order: int = 4,
    n_filters: int = N_FILTERS,
) -> FilterSweepReport:
    """Target probability after each of ``n_filters`` low-pass filters.

    Filter ``k`` has cutoff ``0.5 * f_s * k / (n_filters + 1)``.
    """
    values = pulse.values[:, 0]
    dt = pulse.grid.dt
    fs = sampling_frequency(pulse.grid)
    cutoffs, probs, skipped = [], [], []
    for k in range(1, n_filters + 1):
        wn = k / (n_filters + 1)
        filtered = lowpass(values, wn, filter_order)
        if filtered is None:
            logger.warning("skipping unstable filter %d (cutoff %.4f of Nyquist)", k, wn)
            skipped.append(k)
            continue
        cutoffs.append(0.5 * wn)
        probs.append(1.0 - simulate_signed(filtered, 0.0, 1.0, n0, N, dt=dt))
    base = 1.0 - simulate_signed(values, 0.0, 1.0, n0, N, dt=dt)
    return FilterSweepReport(np.array(cutoffs), np.array(probs), fs, skipped, base)

