import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from robustbragg.ensemble import (
    DRIFT,
    HamiltonianTerm,
    ParameterDomain,
    ParameterSpec,
    embed_hamiltonians,
    embed_initial_state,
)
from robustbragg.propagator import (
    ControlPulse,
    TimeGrid,
    frechet_step,
    propagate,
    real_embedding,
    step_unitary,
    terminal_jacobian,
)

SX = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def single_system(terms):
    dom = ParameterDomain((ParameterSpec(1.0, 1.0, 0),))
    return embed_hamiltonians(terms, dom)


def random_model(rng, n=3, degrees=(1, 2)):
    dom = ParameterDomain((ParameterSpec(-0.5, 0.5, degrees[0]), ParameterSpec(0.7, 1.3, degrees[1])))
    terms = [
        HamiltonianTerm(random_hermitian(rng, n)),
        HamiltonianTerm(random_hermitian(rng, n), DRIFT, 0),
        HamiltonianTerm(random_hermitian(rng, n), 0, 1),
        HamiltonianTerm(random_hermitian(rng, n), 1, None),
    ]
    return embed_hamiltonians(terms, dom)


def test_time_grid():
    g = TimeGrid(2 * math.pi, 630)
    assert g.dt == 2 * math.pi / 630
    assert g.times[0] == 0 and len(g.times) == 630 and g.times[-1] == pytest.approx(2 * math.pi - g.dt)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_pulse_validation():
    g = TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        ControlPulse(g, np.zeros(3), 0, 1)
    with pytest.raises(ValueError):
        ControlPulse(g, np.full(4, 2.0), 0, 1)
    with pytest.raises(ValueError):
        ControlPulse(g, np.array([0, np.nan, 0, 0]), -1, 1)
    with pytest.raises(ValueError):
        ControlPulse(g, np.zeros(4), 1, 0)
    p = ControlPulse(g, np.array([0.5, 1.5, -3.0, 0.0]) * 0 + 0.5, 0, 1)
    assert p.energy == pytest.approx(4 * 0.25 * 0.25)
    q = p.with_flat(np.array([2.0, -1.0, 0.3, 0.3]))
    np.testing.assert_array_equal(q.flat, [1.0, 0.0, 0.3, 0.3])


def test_step_unitary_examples():
    model = single_system([HamiltonianTerm(SX, 0)])
    np.testing.assert_allclose(step_unitary(model, [0.0], 1.0), np.eye(2), atol=1e-15)
    u = step_unitary(model, [math.pi / 2], 1.0)
    np.testing.assert_allclose(u, [[0, -1j], [-1j, 0]], atol=1e-14)
    with pytest.raises(ValueError):
        step_unitary(model, [np.inf], 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_step_unitary_is_unitary(seed, dt):
    rng = np.random.default_rng(seed)
    model = single_system([HamiltonianTerm(random_hermitian(rng, 4)), HamiltonianTerm(random_hermitian(rng, 4), 0)])
    u = step_unitary(model, [1.0, rng.normal()], dt)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


def test_frechet_step_matches_finite_difference():
    rng = np.random.default_rng(2)
    x = -1j * 0.3 * random_hermitian(rng, 4)
    e = -1j * 0.3 * random_hermitian(rng, 4)
    expx, lx = frechet_step(x, e)
    np.testing.assert_allclose(expx, scipy.linalg.expm(x), atol=1e-13)
    h = 1e-6
    fd = (scipy.linalg.expm(x + h * e) - scipy.linalg.expm(x - h * e)) / (2 * h)
    np.testing.assert_allclose(lx, fd, atol=1e-9)


def test_zero_hamiltonian_keeps_state():
    model = single_system([HamiltonianTerm(np.zeros((3, 3)), 0)])
    pulse = ControlPulse(TimeGrid(1.0, 5), np.ones(5), 0, 2)
    psi0 = np.array([0.6, 0.8j, 0])
    states = propagate(model, pulse, psi0).states
    assert states.shape == (6, 3)
    np.testing.assert_allclose(states, np.tile(psi0, (6, 1)), atol=1e-15)


def test_single_step_equals_step_unitary():
    rng = np.random.default_rng(4)
    model = random_model(rng)
    pulse = ControlPulse(TimeGrid(0.3, 1), rng.normal(size=(1, 2)), -5, 5)
    psi0 = embed_initial_state(np.array([1, 0, 0]), model.domain)
    coeffs = model.full_controls(pulse.values)[0]
    expected = step_unitary(model, coeffs, pulse.grid.dt) @ psi0
    for method in ("dense", "blocked"):
        np.testing.assert_allclose(propagate(model, pulse, psi0, method=method).terminal, expected, atol=1e-13)


def test_rabi_oscillation():
    model = single_system([HamiltonianTerm(0.5 * SX, 0)])
    u, T = 1.3, 2.0
    pulse = ControlPulse(TimeGrid(T, 50), np.full(50, u), 0, 2)
    psi = propagate(model, pulse, np.array([1.0, 0.0])).terminal
    assert abs(psi[1]) ** 2 == pytest.approx(math.sin(u * T / 2) ** 2, abs=1e-9)


def test_blocked_and_dense_routes_agree():
    rng = np.random.default_rng(5)
    model = random_model(rng)
    pulse = ControlPulse(TimeGrid(1.0, 12), rng.uniform(-1, 1, (12, 2)), -2, 2)
    psi0 = embed_initial_state(np.array([1, 1j, 0]), model.domain)
    a = propagate(model, pulse, psi0, method="dense").states
    b = propagate(model, pulse, psi0, method="blocked").states
    np.testing.assert_allclose(a, b, atol=1e-13)
    ja = terminal_jacobian(model, pulse, psi0, method="dense").matrix
    jb = terminal_jacobian(model, pulse, psi0, method="blocked").matrix
    np.testing.assert_allclose(ja, jb, atol=1e-12)


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(6)
    dom = ParameterDomain((ParameterSpec(0.8, 1.2, 2),))
    model = embed_hamiltonians(
        [HamiltonianTerm(random_hermitian(rng, 3)), HamiltonianTerm(random_hermitian(rng, 3), 0, 0)], dom
    )
    K = 20
    pulse = ControlPulse(TimeGrid(1.0, K), rng.uniform(-1, 1, K), -3, 3)
    psi0 = embed_initial_state(np.array([1, 0, 0]), dom)
    jac = terminal_jacobian(model, pulse, psi0).matrix
    h = 1e-5
    for k in range(K):
        up, dn = pulse.flat.copy(), pulse.flat.copy()
        up[k] += h
        dn[k] -= h
        fd = (propagate(model, pulse.with_flat(up), psi0).terminal - propagate(model, pulse.with_flat(dn), psi0).terminal) / (2 * h)
        assert np.linalg.norm(fd - jac[:, k]) <= 1e-6 * np.linalg.norm(jac[:, k])


def test_jacobian_linearization_remainder():
    rng = np.random.default_rng(8)
    model = random_model(rng)
    pulse = ControlPulse(TimeGrid(1.0, 10), rng.uniform(-1, 1, (10, 2)), -3, 3)
    psi0 = embed_initial_state(np.array([0, 1, 0]), model.domain)
    tj = terminal_jacobian(model, pulse, psi0)
    for _ in range(5):
        d = rng.normal(size=pulse.flat.size)
        d *= 1e-4 * np.linalg.norm(pulse.flat) / np.linalg.norm(d)
        moved = propagate(model, pulse.with_flat(pulse.flat + d), psi0).terminal
        assert np.linalg.norm(moved - tj.terminal - tj.matrix @ d) <= 10 * np.linalg.norm(d) ** 2


def test_commuting_jacobian_column_norm():
    d = np.diag([0.0, 1.0, 3.0])
    hc = np.diag([1.0, -2.0, 0.5])
    model = single_system([HamiltonianTerm(d), HamiltonianTerm(hc, 0)])
    pulse = ControlPulse(TimeGrid(1.0, 8), np.linspace(0, 1, 8), -2, 2)
    psi0 = np.ones(3) / math.sqrt(3)
    tj = terminal_jacobian(model, pulse, psi0)
    expected = pulse.grid.dt * np.linalg.norm(hc @ tj.terminal)
    np.testing.assert_allclose(np.linalg.norm(tj.matrix, axis=0), expected, rtol=1e-12)


def test_empty_control_jacobian():
    model = single_system([HamiltonianTerm(np.diag([0.0, 1.0]))])
    pulse = ControlPulse(TimeGrid(1.0, 4), np.zeros((4, 0)), np.zeros(0), np.zeros(0))
    tj = terminal_jacobian(model, pulse, np.array([1.0, 0.0]))
    assert tj.matrix.shape == (2, 0)


def test_propagation_input_checks():
    model = single_system([HamiltonianTerm(SX, 0)])
    pulse = ControlPulse(TimeGrid(1.0, 2), np.zeros(2), -1, 1)
    with pytest.raises(ValueError):
        propagate(model, pulse, np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        propagate(model, pulse, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        propagate(model, pulse, np.array([1.0, 0.0]), method="magic")
    two = ControlPulse(TimeGrid(1.0, 2), np.zeros((2, 2)), -1, 1)
    with pytest.raises(ValueError):
        propagate(model, two, np.array([1.0, 0.0]))


def test_real_embedding_properties():
    rng = np.random.default_rng(9)
    psi = rng.normal(size=5) + 1j * rng.normal(size=5)
    jac = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    j_real, r = real_embedding(jac, psi, psi)
    assert j_real.shape == (10, 3)
    np.testing.assert_array_equal(r, np.zeros(10))
    v = rng.normal(size=5)
    _, r = real_embedding(jac, 1j * v, np.zeros(5))
    np.testing.assert_allclose(r, np.concatenate([np.zeros(5), v]))
    t = rng.normal(size=5) + 1j * rng.normal(size=5)
    _, r = real_embedding(jac, psi, t)
    assert abs(r @ r - np.linalg.norm(psi - t) ** 2) < 1e-14 * max(1.0, r @ r)
    with pytest.raises(ValueError):
        real_embedding(jac[:4], psi, t)
