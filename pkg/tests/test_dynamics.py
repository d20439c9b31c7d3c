import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fpukg.dynamics import (
    BlowUpError,
    Trajectory,
    composition_weights,
    escape_time,
    flow_map,
    flow_with_tangent,
    integrate_full,
)
from fpukg.model import ChainParams, energy, vector_field

P = ChainParams(8, 0.1, 0.2)


def rand_state(N, norm, seed=0):
    z = np.random.default_rng(seed).normal(size=2 * N)
    return z * norm / np.linalg.norm(z)


@pytest.mark.parametrize("order", [2, 4, 6, 8])
def test_composition_weights(order):
    w = composition_weights(order)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(w, w[::-1])


def test_matches_reference_solver():
    z0 = rand_state(8, 0.5)
    T = 5.0
    ref = solve_ivp(lambda t, z: vector_field(z, P), (0, T), z0, rtol=1e-12, atol=1e-14, method="DOP853").y[:, -1]
    out = integrate_full(z0, P, T, 0.01, order=8).states[-1]
    assert np.max(np.abs(out - ref)) < 1e-10


@pytest.mark.parametrize("order,expected", [(2, 2), (4, 4)])
def test_convergence_order(order, expected):
    z0 = rand_state(8, 0.5, 1)
    T = 2.0
    exact = flow_map(z0, P, T, 4000, order=8)
    errs = [np.max(np.abs(integrate_full(z0, P, T, dt, order=order).states[-1] - exact)) for dt in (0.04, 0.02)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(expected, abs=0.3)


def test_energy_error_halving_dt():
    z0 = rand_state(8, 0.5, 2)
    e = [integrate_full(z0, P, 20.0, dt).invariants["max_energy_error"] for dt in (0.02, 0.01)]
    assert e[0] / e[1] == pytest.approx(4, rel=0.15)


@pytest.mark.parametrize("order,bound", [(2, 1e-4), (4, 1e-6)])
def test_long_run_energy(order, bound):
    # 10^6 steps at dt = 0.01; plain Verlet sits at ~2e-5 relative error here,
    # the fourth-order composition meets the 1e-6 target
    p = ChainParams(16, 0.05, 0.1)
    z0 = rand_state(16, 0.2, 3)
    tr = integrate_full(z0, p, 1e4, 0.01, stride=10000, order=order)
    H = tr.invariants["H"]
    rel = np.abs(H - H[0]) / H[0]
    assert tr.invariants["max_energy_error"] / H[0] < bound
    half = rel.size // 2
    assert rel[half:].max() <= 2 * max(rel[:half].max(), 1e-16) + 1e-12


def test_batch_equals_single():
    Z = np.stack([rand_state(8, 0.3, k) for k in range(3)])
    tb = integrate_full(Z, P, 3.0, 0.01, stride=50, order=4)
    for i in range(3):
        ts = integrate_full(Z[i], P, 3.0, 0.01, stride=50, order=4)
        assert np.array_equal(tb.states[:, i], ts.states)


def test_time_reversal():
    z0 = rand_state(8, 0.4, 4)
    fwd = integrate_full(z0, P, 10.0, 0.01, order=8).states[-1]
    back = integrate_full(fwd, P, -10.0, 0.01, order=8).states[-1]
    assert np.max(np.abs(back - z0)) < 1e-12


def test_tangent_and_symplecticity():
    z0 = rand_state(8, 0.5, 5)
    end, M = flow_with_tangent(z0, P, 1.0, 100)
    assert np.allclose(end, flow_map(z0, P, 1.0, 100))
    h = 1e-6
    fd = np.column_stack([(flow_map(z0 + h * e, P, 1.0, 100) - flow_map(z0 - h * e, P, 1.0, 100)) / (2 * h)
                          for e in np.eye(16)])
    assert np.max(np.abs(M - fd)) < 1e-7
    n = 8
    J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    assert np.max(np.abs(M @ J @ M.T - J)) < 1e-10


def test_harmonic_limit_frequency():
    p = ChainParams(4, 0.0, 0.0)
    for amp, tol in ((1e-2, 1e-4), (1e-3, 1e-6)):
        z0 = np.zeros(8)
        z0[0] = amp
        tr = integrate_full(z0, p, 2 * math.pi, 2 * math.pi / 2000, order=8)
        assert abs(tr.states[-1, 0] - amp) / amp < tol


def test_blow_up():
    z0 = np.zeros(8)
    z0[0] = 1e3
    with pytest.raises(BlowUpError):
        integrate_full(z0, ChainParams(4, 0.0, 0.0), 10.0, 0.5)


def test_trajectory_csv_and_grid():
    tr = integrate_full(rand_state(4, 0.2), ChainParams(4, 0.1), 1.0, 0.1, stride=2)
    text = tr.to_csv()
    assert text.startswith("# stride=2\n")
    assert text.splitlines()[1].split(",")[:2] == ["t", "x0"]
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0, 1.0]), np.zeros((3, 8)))


def test_escape_time():
    t = np.linspace(0, 10, 101)
    th = t[:, None]
    circ = np.concatenate([0.5 * np.cos(th), 0.5 * np.sin(th)], axis=1)
    assert escape_time(Trajectory(t, circ), 1.0) is None
    assert escape_time(Trajectory(t, 0.1 * circ), 1.0) is None
    grow = np.zeros((101, 2))
    grow[:, 0] = 0.2 * t
    t_star = escape_time(Trajectory(t, grow), 1.0)
    assert abs(t_star - 5.0) <= 0.1
