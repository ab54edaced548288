"""Brute-force QP oracle: enumerate every lower/free/upper pattern.

For each pattern the fixed variables sit on their bounds and the free ones
solve the equality-constrained stationarity system; the feasible candidate
with the smallest objective is the global minimizer of the strictly convex
program.  Patterns sharing a free set share one KKT matrix, so they are
solved together.  Exponential in the number of variables.
"""

import itertools

import numpy as np


def brute_force_qp(H, g, lower, upper, C=None):
    n = len(g)
    C = np.zeros((0, n)) if C is None else C
    r = len(C)
    best_x, best_f = None, np.inf
    for free_t in itertools.product((False, True), repeat=n):
        free = np.array(free_t)
        fixed = ~free
        nf = int(free.sum())
        sides = np.array(list(itertools.product((0, 1), repeat=n - nf)), dtype=int)
        sides = sides.reshape(2 ** (n - nf), n - nf)
        xs = np.zeros((len(sides), n))
        xs[:, fixed] = np.where(sides == 0, lower[fixed], upper[fixed])
        if nf:
            rhs = np.hstack([
                -(g[free][None, :] + xs[:, fixed] @ H[np.ix_(free, fixed)].T),
                -xs[:, fixed] @ C[:, fixed].T,
            ])
            cf = C[:, free]
            kkt = np.block([[H[np.ix_(free, free)], cf.T], [cf, np.zeros((r, r))]])
            sol = np.linalg.lstsq(kkt, rhs.T, rcond=None)[0].T
            xs[:, free] = sol[:, :nf]
        ok = np.linalg.norm(xs @ C.T, axis=1) <= 1e-9 * (1 + np.linalg.norm(xs, axis=1))
        ok &= np.all(xs >= lower - 1e-12, axis=1) & np.all(xs <= upper + 1e-12, axis=1)
        if not ok.any():
            continue
        cand = xs[ok]
        f = 0.5 * np.einsum("ij,jk,ik->i", cand, H, cand) + cand @ g
        i = int(np.argmin(f))
        if f[i] < best_f:
            best_x, best_f = cand[i].copy(), f[i]
    return best_x, best_f


def random_problem(rng, n, with_equality):
    m = rng.integers(1, 2 * n + 1)
    G = rng.normal(size=(m, n))
    rho = 10.0 ** rng.uniform(-2, 1)
    g = rng.normal(size=n) * 3
    lower = -rng.uniform(0, 1.5, size=n)
    upper = rng.uniform(0, 1.5, size=n)
    # some variables pinned at a bound, as for pulses already saturated
    pinned = rng.random(n) < 0.15
    lower[pinned & (rng.random(n) < 0.5)] = 0.0
    upper[pinned & (lower != 0.0)] = 0.0
    C = None
    if with_equality and n > 1:
        r = rng.integers(1, n)
        q, _ = np.linalg.qr(rng.normal(size=(n, r)))
        C = q.T
    return G, rho, g, lower, upper, C
