"""Strictly convex quadratic programs of the synthesis loop.

Both stages reduce to

    minimize   1/2 x^T (rho I + G^T G) x + g^T x
    subject to lower <= x <= upper,  C x = 0,  A_in x <= b_in

with ``rho > 0`` and ``x = 0`` feasible.  :func:`solve_qp` is a primal
active-set method: the working set holds bound and inequality constraints,
each iteration solves the equality-constrained subproblem on the free
variables in range-space form, and Bland's smallest-index rule takes over
once degenerate (zero-length) steps appear.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

EQUALITY_RANK_TOL = 1e-10


@dataclass(frozen=True)
class QPSolution:
    delta_u: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    equality_residual: float = 0.0
    converged: bool = True


class _FreeSolve:
    """Applies ``H_FF^{-1}`` for ``H = rho I + G^T G`` restricted to ``free``."""

    def __init__(self, rho, G, GtG, free):
        self.rho = rho
        self.n_free = int(free.sum())
        self.mode = "diag"
        if G is None or G.shape[0] == 0 or self.n_free == 0:
            return
        if GtG is not None:
            self.mode = "chol"
            hff = GtG[np.ix_(free, free)]
            hff[np.diag_indices_from(hff)] += rho
            self.factor = scipy.linalg.cho_factor(hff, check_finite=False)
        else:
            self.mode = "woodbury"
            self.gf = G[:, free]
            s = self.gf @ self.gf.T
            s[np.diag_indices_from(s)] += rho
            self.factor = scipy.linalg.cho_factor(s, check_finite=False)

    def __call__(self, v):
        if self.mode == "diag":
            return v / self.rho
        if self.mode == "chol":
            return scipy.linalg.cho_solve(self.factor, v, check_finite=False)
        t = scipy.linalg.cho_solve(self.factor, self.gf @ v, check_finite=False)
        return (v - self.gf.T @ t) / self.rho


def _psd_pinv_solve(s, rhs, rtol=1e-12):
    if s.size == 0:
        return np.zeros(0)
    w, v = np.linalg.eigh(s)
    cut = rtol * max(w.max(initial=0.0), 0.0)
    inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    return v @ (inv * (v.T @ rhs))


def solve_qp(
    rho: float,
    g: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    G: np.ndarray | None = None,
    C: np.ndarray | None = None,
    inequality: tuple[np.ndarray, np.ndarray] | None = None,
    max_iter: int | None = None,
) -> QPSolution:
    """Primal active-set solve started from the feasible point ``x = 0``.

    ``C`` (equality rows) should be well conditioned; :func:`solve_energy_qp`
    passes an orthonormal basis of the constraint row space.  The returned
    ``objective`` is the value of ``1/2 x^T H x + g^T x``.
    """
    g = np.asarray(g, dtype=float)
    n = g.size
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if rho <= 0:
        raise ValueError("rho must be positive for a strictly convex program")
    if np.any(lower > 0) or np.any(upper < 0):
        raise ValueError("box must contain the origin")
    if C is None:
        C = np.zeros((0, n))
    if inequality is None:
        a_in, b_in = np.zeros((0, n)), np.zeros(0)
    else:
        a_in, b_in = (np.atleast_2d(np.asarray(x, dtype=float)) for x in inequality)
        b_in = b_in.ravel()
        if np.any(b_in < 0):
            raise ValueError("inequality constraints must admit the origin")
    for name, arr in (("g", g), ("C", C), ("inequality", a_in)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite entries in {name}")
    gtg = None
    if G is not None:
        G = np.asarray(G, dtype=float)
        if not np.all(np.isfinite(G)):
            raise ValueError("non-finite entries in G")
        if G.shape[0] >= n:
            gtg = G.T @ G

    def hess_vec(x):
        out = rho * x
        if G is not None:
            out = out + G.T @ (G @ x)
        return out

    x = np.zeros(n)
    at_lower = lower == 0.0
    at_upper = (upper == 0.0) & ~at_lower
    fixed_both = (lower == 0.0) & (upper == 0.0)
    active_rows = np.zeros(len(b_in), dtype=bool)
    n_con = n + len(b_in)
    max_iter = max_iter or 20 * n_con + 100
    bland = False
    degenerate_steps = 0
    converged = False
    scale = 1.0 + np.abs(g).max(initial=0.0)

    it = 0
    for it in range(1, max_iter + 1):
        free = ~(at_lower | at_upper)
        grad = hess_vec(x) + g
        e_rows = np.vstack([C, a_in[active_rows]])
        ef = e_rows[:, free]
        solve = _FreeSolve(rho, G, gtg, free)
        h = solve(grad[free])
        if ef.shape[0]:
            y = solve(ef.T)
            nu = -_psd_pinv_solve(ef @ y, ef @ h)
            p_free = -(h + y @ nu)
        else:
            nu = np.zeros(0)
            p_free = -h
        p = np.zeros(n)
        p[free] = p_free

        if np.abs(p).max(initial=0.0) <= 1e-10 * (1.0 + np.abs(x).max(initial=0.0)):
            # absorb the residual step so the multipliers see a stationary point
            x = np.clip(x + p, lower, upper)
            grad = hess_vec(x) + g
            lag = grad + e_rows.T @ nu
            n_eq = C.shape[0]
            viol = []
            tol = 1e-11 * scale
            for i in np.flatnonzero(at_lower & ~fixed_both):
                if lag[i] < -tol:
                    viol.append((lag[i], i))
            for i in np.flatnonzero(at_upper & ~fixed_both):
                if lag[i] > tol:
                    viol.append((-lag[i], i))
            for j, row in enumerate(np.flatnonzero(active_rows)):
                if nu[n_eq + j] < -tol:
                    viol.append((nu[n_eq + j], n + row))
            if not viol:
                converged = True
                kkt = _projected_gradient_norm(lag, grad, free, at_lower, at_upper)
                break
            pick = min(viol, key=lambda t: t[1]) if bland else min(viol)
            idx = pick[1]
            if idx < n:
                at_lower[idx] = at_upper[idx] = False
            else:
                active_rows[idx - n] = False
            continue

        steps = np.full(n + len(b_in), np.inf)
        neg, pos = p < 0, p > 0
        box_steps = steps[:n]
        box_steps[neg] = (lower[neg] - x[neg]) / p[neg]
        box_steps[pos] = (upper[pos] - x[pos]) / p[pos]
        if len(b_in):
            ap = a_in @ p
            cand = ~active_rows & (ap > 0)
            steps[n:][cand] = (b_in[cand] - a_in[cand] @ x) / ap[cand]
        steps = np.maximum(steps, 0.0)
        alpha, block = 1.0, None
        smallest = steps.min(initial=np.inf)
        if smallest < 1.0:
            alpha = float(smallest)
            # ties go to the smallest constraint index
            block = int(np.flatnonzero(steps <= smallest)[0])
        x = x + alpha * p
        if block is not None:
            if block < n:
                if p[block] < 0:
                    x[block] = lower[block]
                    at_lower[block] = True
                else:
                    x[block] = upper[block]
                    at_upper[block] = True
            else:
                active_rows[block - n] = True
        if alpha == 0.0:
            degenerate_steps += 1
            if degenerate_steps > 2 * n_con and not bland:
                logger.debug("switching to Bland's rule after %d degenerate steps", degenerate_steps)
                bland = True
        np.clip(x, lower, upper, out=x)

    if not converged:
        logger.warning("active-set QP stopped after %d iterations without converging", it)
        kkt = kkt_residual(x, rho, g, lower, upper, G, C, a_in, b_in)
    objective = 0.5 * x @ hess_vec(x) + g @ x
    eq_res = float(np.linalg.norm(C @ x)) if C.shape[0] else 0.0
    return QPSolution(x, float(objective), it, kkt, eq_res, converged)


def _projected_gradient_norm(lag, grad, free, at_lower, at_upper):
    proj = np.where(free, lag, 0.0)
    proj = np.where(at_lower & ~at_upper, np.minimum(lag, 0.0), proj)
    proj = np.where(at_upper & ~at_lower, np.maximum(lag, 0.0), proj)
    return float(np.linalg.norm(proj) / (1.0 + np.linalg.norm(grad)))


def kkt_residual(x, rho, g, lower, upper, G=None, C=None, a_in=None, b_in=None) -> float:
    """Relative norm of the projected Lagrangian gradient at ``x``.

    Equality and active inequality multipliers are fitted by least squares on
    the free variables; active bounds absorb gradient components of the
    correct sign.  The minimum-norm fit can misjudge signs when equality rows
    outnumber free variables, so the solver reports its own multipliers and
    only falls back to this on non-convergence.
    """
    n = x.size
    grad = rho * x + g
    if G is not None:
        grad = grad + G.T @ (G @ x)
    atol = 1e-12 * (1.0 + np.abs(x).max(initial=0.0))
    at_lo = np.abs(x - lower) <= atol
    at_hi = np.abs(x - upper) <= atol
    rows = [np.zeros((0, n))] if C is None else [C]
    if a_in is not None and len(a_in):
        active = np.abs(a_in @ x - b_in) <= atol * (1 + np.abs(b_in))
        rows.append(a_in[active])
    e = np.vstack(rows)
    free = ~(at_lo | at_hi)
    if e.shape[0]:
        nu = np.linalg.lstsq(e[:, free].T, -grad[free], rcond=None)[0]
        lag = grad + e.T @ nu
    else:
        lag = grad
    return _projected_gradient_norm(lag, grad, free, at_lo, at_hi)


def _check_finite(**arrays):
    for name, arr in arrays.items():
        if arr is not None and not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite entries in {name}")


def solve_fidelity_qp(
    J_real: np.ndarray,
    residual_real: np.ndarray,
    lam: float,
    lower: np.ndarray,
    upper: np.ndarray,
    inequality=None,
) -> QPSolution:
    """Minimize ``||J du + r||^2 + lam ||du||^2`` over the box on ``du``.

    ``lower``/``upper`` bound the increment itself, i.e. pulse bounds minus
    the current pulse, so the updated pulse stays inside its limits.
    """
    _check_finite(J_real=J_real, residual_real=residual_real)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    J_real = np.asarray(J_real, dtype=float)
    r = np.asarray(residual_real, dtype=float)
    sol = solve_qp(lam, J_real.T @ r, lower, upper, G=J_real, inequality=inequality)
    du = sol.delta_u
    obj = float(np.sum((J_real @ du + r) ** 2) + lam * du @ du)
    return QPSolution(du, obj, sol.iterations, sol.kkt_residual, 0.0, sol.converged)


def equality_basis(A: np.ndarray, rtol: float = EQUALITY_RANK_TOL) -> np.ndarray:
    """Orthonormal rows spanning the numerically significant row space of ``A``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros((0, A.shape[1] if A.ndim == 2 else 0))
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    keep = s > rtol * s[0] if s.size and s[0] > 0 else np.zeros(0, dtype=bool)
    return vt[keep]


def solve_energy_qp(
    u_current: np.ndarray,
    J_real: np.ndarray,
    P: np.ndarray | None,
    mu: float,
    lower: np.ndarray,
    upper: np.ndarray,
    inequality=None,
) -> QPSolution:
    """Minimize ``||u + du||^2 + mu ||du||^2`` subject to ``P J du = 0`` and the box.

    ``P`` may be the complex state-space projector (it is applied to the
    complex Jacobian recovered from the stacked ``J_real``), a real operator
    on the stacked representation, or ``None`` for no equality constraint.
    """
    u = np.asarray(u_current, dtype=float)
    _check_finite(u_current=u, J_real=J_real)
    if not mu > 0:
        raise ValueError("mu must be positive")
    if P is None or J_real is None or np.size(J_real) == 0:
        C = np.zeros((0, u.size))
        A = None
    else:
        A = constraint_matrix(J_real, P)
        C = equality_basis(A)
    sol = solve_qp(1.0 + mu, u, lower, upper, C=C, inequality=inequality)
    du = sol.delta_u
    obj = float(np.sum((u + du) ** 2) + mu * du @ du)
    eq = float(np.linalg.norm(A @ du)) if A is not None else 0.0
    return QPSolution(du, obj, sol.iterations, sol.kkt_residual, eq, sol.converged)


def constraint_matrix(J_real: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``P J`` in the stacked real representation."""
    J_real = np.asarray(J_real, dtype=float)
    P = np.asarray(P)
    d = J_real.shape[0] // 2
    if np.iscomplexobj(P):
        if P.shape != (d, d):
            raise ValueError(f"projector shape {P.shape} does not match state dimension {d}")
        pj = P @ (J_real[:d] + 1j * J_real[d:])
        return np.vstack([pj.real, pj.imag])
    if P.shape != (2 * d, 2 * d):
        raise ValueError(f"real projector shape {P.shape} does not match {2 * d}")
    return P @ J_real


def build_projection(psi_t: np.ndarray) -> np.ndarray:
    """``I - psi_t psi_t^dagger``: removes the target direction and its phase partner."""
    psi_t = np.asarray(psi_t, dtype=complex)
    nrm = np.linalg.norm(psi_t)
    if nrm == 0.0:
        raise ValueError("target state must be nonzero")
    psi_t = psi_t / nrm
    return np.eye(psi_t.size, dtype=complex) - np.outer(psi_t, psi_t.conj())


def real_operator(P: np.ndarray) -> np.ndarray:
    """Real ``2D x 2D`` form of a complex operator acting on ``[Re; Im]`` stacks."""
    P = np.asarray(P, dtype=complex)
    return np.block([[P.real, -P.imag], [P.imag, P.real]])
