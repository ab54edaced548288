"""Moment-space representation of a Hamiltonian family with interval parameters.

A parameter-dependent Schrodinger equation whose Hamiltonian is linear in
each parameter is replaced by the coupled dynamics of a finite set of
moments.  Each parameter owns one tensor factor of the moment space; in
Legendre mode that factor carries the three-term recurrence (Jacobi) matrix
of the normalized Legendre polynomials on the parameter interval, in sampling
mode it carries a diagonal matrix of equispaced samples.

Because every parameter matrix acts on its own factor, all of them are
simultaneously diagonalizable.  :meth:`EnsembleModel.block_structure` exposes
that rotation, which turns the moment system into independent copies of the
physical system (at the Gauss-Legendre nodes in Legendre mode).  The
propagator uses it to avoid dense ``D_tot x D_tot`` exponentials.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre

HERMITIAN_TOL = 1e-12

#: ``control_index`` value of terms whose control is identically one.
DRIFT = -1


class Mode(str, enum.Enum):
    LEGENDRE = "legendre"
    SAMPLING = "sampling"


def legendre_recurrence_coeff(n: int) -> float:
    """Off-diagonal coefficient ``(n+1)/sqrt((2n+3)(2n+1))`` of the recurrence."""
    if n < 0:
        raise ValueError(f"recurrence index must be >= 0, got {n}")
    return (n + 1) / math.sqrt((2 * n + 3) * (2 * n + 1))


@dataclass(frozen=True)
class ParameterSpec:
    """Design interval and truncation degree for one parameter."""

    gamma_min: float
    gamma_max: float
    degree: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.gamma_min) and math.isfinite(self.gamma_max)):
            raise ValueError("parameter interval must be finite")
        if self.gamma_min > self.gamma_max:
            raise ValueError(
                f"gamma_min={self.gamma_min} exceeds gamma_max={self.gamma_max}"
            )
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a nonnegative integer, got {self.degree}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.gamma_max + self.gamma_min)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.gamma_max - self.gamma_min)

    @property
    def is_degenerate(self) -> bool:
        return self.gamma_min == self.gamma_max

    @property
    def effective_degree(self) -> int:
        # a zero-width interval has nothing to expand
        return 0 if self.is_degenerate else int(self.degree)

    @property
    def size(self) -> int:
        return self.effective_degree + 1

    def samples(self) -> np.ndarray:
        if self.size == 1:
            return np.array([self.midpoint])
        return np.linspace(self.gamma_min, self.gamma_max, self.size)


def build_gamma_matrix(
    spec: ParameterSpec, mode: Mode | str = Mode.LEGENDRE, first_coefficient_index: int = 0
) -> np.ndarray:
    """Parameter matrix for one tensor factor of the moment space.

    In Legendre mode the result is tridiagonal with the interval midpoint on
    the diagonal and ``c_j * half_width`` on the off-diagonals, ``j`` running
    from ``first_coefficient_index``.  The default 0 is the recurrence of the
    orthonormal Legendre basis; 1 gives the shifted table some texts print,
    which does not converge to the parametrized solution.
    """
    mode = Mode(mode)
    size = spec.size
    if mode is Mode.SAMPLING:
        return np.diag(spec.samples())
    gamma = np.eye(size) * spec.midpoint
    for j in range(size - 1):
        c = legendre_recurrence_coeff(j + first_coefficient_index) * spec.half_width
        gamma[j, j + 1] = gamma[j + 1, j] = c
    return gamma


@dataclass(frozen=True)
class ParameterDomain:
    """Product of parameter intervals with a row-major multi-index enumeration."""

    specs: tuple[ParameterSpec, ...]
    mode: Mode = Mode.LEGENDRE
    first_coefficient_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "mode", Mode(self.mode))
        if len(self.specs) < 1:
            raise ValueError("a parameter domain needs at least one parameter")

    @property
    def n_parameters(self) -> int:
        return len(self.specs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.size for s in self.specs)

    @property
    def n_moments(self) -> int:
        return int(np.prod(self.sizes))

    def multi_indices(self) -> list[tuple[int, ...]]:
        """Enumeration of the moment multi-indices, last parameter fastest."""
        return list(itertools.product(*(range(n) for n in self.sizes)))

    def gamma_matrices(self) -> list[np.ndarray]:
        return [
            build_gamma_matrix(s, self.mode, self.first_coefficient_index)
            for s in self.specs
        ]

    def contains(self, gamma: Sequence[float], atol: float = 1e-12) -> bool:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.n_parameters,):
            return False
        return all(
            s.gamma_min - atol <= g <= s.gamma_max + atol for s, g in zip(self.specs, gamma)
        )

    @cached_property
    def diagonalization(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-parameter ``(nodes, Q)`` with ``Gamma = Q diag(nodes) Q^T``."""
        out = []
        for gamma in self.gamma_matrices():
            if np.count_nonzero(gamma - np.diag(np.diag(gamma))) == 0:
                out.append((np.diag(gamma).copy(), np.eye(len(gamma))))
            else:
                out.append(np.linalg.eigh(gamma))
        return out


@dataclass(frozen=True)
class HamiltonianTerm:
    """One physical operator, the control that drives it and its parameter."""

    matrix: np.ndarray
    control_index: int = DRIFT
    parameter_index: int | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Hamiltonian term must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise ValueError("Hamiltonian term is not Hermitian")
        if self.control_index < DRIFT:
            raise ValueError(f"invalid control index {self.control_index}")
        object.__setattr__(self, "matrix", m)

    @property
    def is_drift(self) -> bool:
        return self.control_index == DRIFT


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """Embedded Hamiltonians acting on (moment index) x (physical basis)."""

    physical_terms: tuple[HamiltonianTerm, ...]
    domain: ParameterDomain
    dim_physical: int

    @property
    def dim_moment(self) -> int:
        return self.domain.n_moments

    @property
    def dim_total(self) -> int:
        return self.dim_moment * self.dim_physical

    @property
    def n_controls(self) -> int:
        return 1 + max((t.control_index for t in self.physical_terms), default=DRIFT)

    @property
    def controlled_indices(self) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.physical_terms) if not t.is_drift)

    @property
    def is_real(self) -> bool:
        return all(np.isrealobj(t.matrix) for t in self.physical_terms)

    @cached_property
    def terms(self) -> tuple[np.ndarray, ...]:
        """Dense embedded operators ``I x .. x Gamma_m x .. x I x H_m``."""
        gammas = self.domain.gamma_matrices()
        eyes = [np.eye(n) for n in self.domain.sizes]
        out = []
        for term in self.physical_terms:
            factors = list(eyes)
            if term.parameter_index is not None:
                factors[term.parameter_index] = gammas[term.parameter_index]
            left = factors[0]
            for f in factors[1:]:
                left = np.kron(left, f)
            out.append(np.kron(left, term.matrix))
        return tuple(out)

    def full_controls(self, values: np.ndarray) -> np.ndarray:
        """Per-term coefficients from per-channel controls, drift terms set to 1.

        ``values`` has shape ``(..., n_controls)``; the result ``(..., n_terms)``.
        """
        values = np.asarray(values, dtype=float)
        out = np.ones(values.shape[:-1] + (len(self.physical_terms),))
        for i, term in enumerate(self.physical_terms):
            if not term.is_drift:
                out[..., i] = values[..., term.control_index]
        return out

    def hamiltonian(self, controls_at_k: np.ndarray) -> np.ndarray:
        """Dense embedded Hamiltonian for per-term coefficients ``controls_at_k``."""
        controls_at_k = np.asarray(controls_at_k, dtype=float)
        if controls_at_k.shape != (len(self.physical_terms),):
            raise ValueError(
                f"expected {len(self.physical_terms)} term coefficients, "
                f"got shape {controls_at_k.shape}"
            )
        h = np.zeros((self.dim_total, self.dim_total), dtype=self.terms[0].dtype)
        for u, term in zip(controls_at_k, self.terms):
            if u != 0.0:
                h = h + u * term
        return h

    @cached_property
    def block_structure(self) -> tuple[np.ndarray, np.ndarray]:
        """Decoupled form of the moment system.

        Returns ``(coef, rotation_factors)`` where ``coef[j, t]`` scales physical
        term ``t`` inside block ``j`` (blocks in row-major multi-index order) and
        the moment-space rotation is the Kronecker product of the factors.
        """
        diag = self.domain.diagonalization
        node_grid = list(itertools.product(*(nodes for nodes, _ in diag)))
        coef = np.ones((len(node_grid), len(self.physical_terms)))
        for t, term in enumerate(self.physical_terms):
            if term.parameter_index is not None:
                coef[:, t] = [nodes[term.parameter_index] for nodes in node_grid]
        return coef, [q for _, q in diag]

    def _rotate(self, psi: np.ndarray, transpose: bool) -> np.ndarray:
        _, qs = self.block_structure
        psi = np.asarray(psi)
        lead = psi.shape[:-1]
        x = psi.reshape(lead + self.domain.sizes + (self.dim_physical,))
        for m, q in enumerate(qs):
            axis = len(lead) + m
            op = q.T if transpose else q
            x = np.moveaxis(np.tensordot(op, x, axes=([1], [axis])), 0, axis)
        return x.reshape(lead + (self.dim_moment, self.dim_physical))

    def to_blocks(self, psi: np.ndarray) -> np.ndarray:
        """Moment-space vector(s) ``(..., D_tot)`` to block form ``(..., B, n)``."""
        return self._rotate(psi, transpose=True)

    def from_blocks(self, phi: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_blocks`, returning ``(..., D_tot)``."""
        phi = np.asarray(phi)
        lead = phi.shape[:-2]
        flat = phi.reshape(lead + (self.dim_total,))
        out = self._rotate(flat, transpose=False)
        return out.reshape(lead + (self.dim_total,))

    def block_hamiltonians(self, term_coefficients: np.ndarray) -> np.ndarray:
        """Physical Hamiltonians of every block for every row of coefficients.

        ``term_coefficients`` has shape ``(K, n_terms)``; result ``(K, B, n, n)``.
        """
        coef, _ = self.block_structure
        mats = np.stack([t.matrix for t in self.physical_terms])
        weights = term_coefficients[:, None, :] * coef[None, :, :]
        return np.einsum("kbt,tij->kbij", weights, mats, optimize=True)


def embed_hamiltonians(
    terms: Sequence[HamiltonianTerm], domain: ParameterDomain
) -> EnsembleModel:
    """Embed physical terms into the moment space of ``domain``."""
    terms = tuple(terms)
    if not terms:
        raise ValueError("at least one Hamiltonian term is required")
    dims = {t.matrix.shape[0] for t in terms}
    if len(dims) != 1:
        raise ValueError(f"Hamiltonian terms have mismatched dimensions {sorted(dims)}")
    for t in terms:
        if t.parameter_index is not None and not (
            0 <= t.parameter_index < domain.n_parameters
        ):
            raise ValueError(
                f"parameter index {t.parameter_index} outside domain of "
                f"{domain.n_parameters} parameters"
            )
    channels = sorted({t.control_index for t in terms if not t.is_drift})
    if channels and channels != list(range(len(channels))):
        raise ValueError(f"control indices must be contiguous from 0, got {channels}")
    return EnsembleModel(terms, domain, dims.pop())


def embed_initial_state(psi0_physical: np.ndarray, domain: ParameterDomain) -> np.ndarray:
    """Moment-space image of a parameter-independent physical state.

    Legendre mode: ``psi0`` in the degree-0 block, zeros elsewhere (the
    constant function in the probability-normalized basis).  Sampling mode:
    ``psi0`` in every sample block, scaled to unit total norm.
    """
    psi0 = np.asarray(psi0_physical, dtype=complex)
    norm = np.linalg.norm(psi0)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("initial state must have nonzero finite norm")
    psi0 = psi0 / norm
    n_mom = domain.n_moments
    out = np.zeros((n_mom, psi0.size), dtype=complex)
    if domain.mode is Mode.SAMPLING:
        out[:] = psi0 / math.sqrt(n_mom)
    else:
        out[0] = psi0
    out = out.ravel()
    return out / np.linalg.norm(out)


def legendre_basis(domain: ParameterDomain, gamma: Sequence[float]) -> np.ndarray:
    """Values of every basis product ``l_n(gamma)`` in enumeration order.

    Uses the probability-normalized basis ``sqrt(2n+1) P_n(x)``, so the
    constant function has unit degree-0 coefficient.
    """
    per_param = []
    for spec, g in zip(domain.specs, gamma):
        if spec.is_degenerate:
            per_param.append(np.ones(1))
            continue
        x = (g - spec.midpoint) / spec.half_width
        vals = legendre.legvander(np.array([x]), spec.effective_degree)[0]
        per_param.append(vals * np.sqrt(2 * np.arange(spec.size) + 1))
    out = per_param[0]
    for v in per_param[1:]:
        out = np.kron(out, v)
    return out


def reconstruct_wavefunction(
    psi_moment: np.ndarray, gamma: Sequence[float], domain: ParameterDomain
) -> np.ndarray:
    """Evaluate the truncated expansion at parameter value ``gamma``."""
    if domain.mode is not Mode.LEGENDRE:
        raise NotImplementedError("reconstruction is only defined in Legendre mode")
    gamma = np.asarray(gamma, dtype=float)
    if not domain.contains(gamma):
        raise ValueError(f"gamma={gamma.tolist()} lies outside the parameter domain")
    basis = legendre_basis(domain, gamma)
    blocks = np.asarray(psi_moment).reshape(domain.n_moments, -1)
    return basis @ blocks
