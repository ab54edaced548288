"""Robust quantum optimal control by Legendre moment quantization, with a
Bragg beamsplitter design front end."""

from .ensemble import (
    DRIFT,
    EnsembleModel,
    HamiltonianTerm,
    Mode,
    ParameterDomain,
    ParameterSpec,
    embed_hamiltonians,
    embed_initial_state,
    legendre_basis,
    legendre_recurrence_coeff,
    reconstruct_wavefunction,
)
from .propagator import ControlPulse, TimeGrid, propagate, terminal_jacobian
from .qp import solve_energy_qp, solve_fidelity_qp, solve_qp
from .synth import SolverConfig, SynthesisReport, momentum_ladder, random_initial_pulse, synthesize

__version__ = "0.1.0"
