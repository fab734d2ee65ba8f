import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathvisc import hamiltonians
from pathvisc.characteristics import (
    FlowMode,
    auto_mode,
    deviation_modulus,
    flow,
    flow_times,
    mode_equivalence_defect,
    trajectory,
)
from pathvisc.errors import FlowDivergence, HamiltonianError
from pathvisc.hamiltonians import Hamiltonian, builtin, system
from pathvisc.rough_path import brownian_lift, piecewise_linear_lift


def sine_path(eta, samples=4001):
    t = np.linspace(0.0, 1.0, samples)
    return piecewise_linear_lift(t, eta * np.sin(t / eta**2))


def potential(sign):
    return builtin("separated_potential", 1, f=f"{sign}x1")


@pytest.mark.parametrize("mode, tol", [("time_change", 1e-12), ("rough_step", 1e-12)])
def test_free_particle_closed_form(half_p2, mode, tol):
    path = brownian_lift(1, 1, 1.0, 256)
    x = np.array([[0.3], [-1.0]])
    p = np.array([[1.5], [-0.7]])
    s = flow(half_p2, path, x, p, 0.2, 0.9, mode=mode)
    tau = path.increment(0.2, 0.9)[0]
    np.testing.assert_allclose(s.x, x - p * tau, atol=tol)
    np.testing.assert_allclose(s.p, p, atol=tol)
    np.testing.assert_allclose(s.z, -0.5 * p[:, 0] ** 2 * tau, atol=tol)


@pytest.mark.parametrize("sign", ["", "-"])
def test_linear_potential_closed_form(sign):
    # H = p^2/2 - c x with c = +-1: P = p - c tau, X = x - p tau + c tau^2 / 2
    c = -1.0 if sign == "-" else 1.0
    H = potential(sign)
    path = brownian_lift(4, 1, 1.0, 256)
    x, p = np.array([[0.5]]), np.array([[-0.25]])
    for mode, tol in (("time_change", 1e-8), ("rough_step", 1e-5)):
        s = flow(H, path, x, p, 0.0, 1.0, mode=mode)
        tau = path.increment(0.0, 1.0)[0]
        np.testing.assert_allclose(s.p, p - c * tau, atol=tol)
        np.testing.assert_allclose(s.x, x - p * tau + c * tau**2 / 2, atol=tol)


def test_flow_at_start_is_identity(half_p2, unit_line):
    s = flow(half_p2, unit_line, np.array([[0.4]]), np.array([[2.0]]), 0.5, 0.5)
    np.testing.assert_array_equal(s.x, [[0.4]])
    np.testing.assert_array_equal(s.p, [[2.0]])
    np.testing.assert_array_equal(s.z, [0.0])
    np.testing.assert_array_equal(s.jx, [np.eye(1)])


def test_backward_flow_inverts_forward(unit_line):
    H = builtin("separated_potential", 1, f="cos(x1)")
    x, p = np.array([[0.1], [0.9]]), np.array([[0.5], [-0.3]])
    fwd = flow(H, unit_line, x, p, 0.0, 0.6)
    back = flow(H, unit_line, fwd.x, fwd.p, 0.6, 0.0)
    np.testing.assert_allclose(back.x, x, atol=1e-10)
    np.testing.assert_allclose(back.p, p, atol=1e-10)


@pytest.mark.parametrize(
    "H",
    [
        builtin("x_independent"),
        builtin("separated_potential", 1, f="cos(x1)"),
        builtin("linear_growth", 1, a="1 + 0.5*sin(x1)"),
    ],
)
def test_time_change_matches_rough_step(H):
    path = brownian_lift(2, 1, 1.0, 128)
    x = np.linspace(-1, 1, 5)[:, None]
    p = np.linspace(-0.5, 0.5, 5)[:, None]
    assert mode_equivalence_defect(H, path, x, p, 0.0, 1.0) <= 1e-6


def test_oscillatory_path_equivalence():
    H = builtin("separated_potential", 1, f="cos(x1)")
    path = sine_path(0.05)
    x, p = np.array([[0.3]]), np.array([[0.8]])
    assert mode_equivalence_defect(H, path, x, p, 0.0, 1.0) <= 1e-6
    s = flow(H, path, x, p, 0.0, 1.0)
    assert abs(s.x[0, 0] - 0.3) <= 0.2
    assert abs(s.p[0, 0] - 0.8) <= 0.2


def test_zero_path_does_not_move(half_p2):
    path = piecewise_linear_lift(np.linspace(0, 1, 11), np.zeros(11))
    assert mode_equivalence_defect(half_p2, path, np.array([[1.0]]), np.array([[2.0]]), 0.0, 1.0) == 0.0


def test_energy_conservation_in_pseudo_time():
    H = builtin("separated_potential", 1, f="cos(x1)")
    path = piecewise_linear_lift([0.0, 1.0], [0.0, 2.0])
    x = np.linspace(-2, 2, 9)[:, None]
    p = np.linspace(-1, 1, 9)[:, None]
    states = flow_times(H, path, x, p, 0.0, np.linspace(0, 1, 11))
    energy = H[0](states.p, states.x)
    assert np.max(np.abs(energy - energy[0])) <= 1e-8 * 2.0


def test_rough_step_convergence_order():
    H = builtin("separated_potential", 1, f="cos(x1)")
    t = np.linspace(0, 1, 9)
    path = piecewise_linear_lift(t, np.array([0, 0.4, -0.1, 0.3, 0.8, 0.2, -0.3, 0.1, 0.5]))
    x, p = np.array([[0.2]]), np.array([[0.7]])
    ref = flow(H, path, x, p, 0.0, 1.0, mode="time_change", step=1e-4)
    errs = [
        float(np.max(np.abs(flow(H, path, x, p, 0.0, 1.0, mode="rough_step", step=h).x - ref.x)))
        for h in (0.1, 0.05, 0.025)
    ]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0)


@pytest.mark.parametrize("mode", ["time_change", "rough_step"])
def test_jacobian_matches_finite_differences(mode):
    H = builtin("separated_potential", 2, f="cos(x1) + 0.5*sin(x2)")
    path = brownian_lift(3, 1, 1.0, 64)
    x = np.array([[0.2, -0.4]])
    p = np.array([[0.5, 0.1]])
    s = flow(H, path, x, p, 0.0, 0.7, mode=mode)
    eps = 1e-6
    cols = []
    for k in range(2):
        e = np.zeros((1, 2))
        e[0, k] = eps
        a = flow(H, path, x + e, p, 0.0, 0.7, mode=mode).x
        b = flow(H, path, x - e, p, 0.0, 0.7, mode=mode).x
        cols.append((a - b)[0] / (2 * eps))
    fd = np.stack(cols, axis=-1)
    np.testing.assert_allclose(s.jx[0], fd, rtol=1e-4, atol=1e-6)


def test_commuting_matches_rough_step():
    H = system(builtin("x_independent", 1)[0], Hamiltonian.from_expression("sqrt(1 + p1**2)", 1))
    path = brownian_lift(5, 2, 1.0, 128)
    assert auto_mode(H) is FlowMode.COMMUTING
    x = np.linspace(-1, 1, 4)[:, None]
    p = np.linspace(-1, 1, 4)[:, None]
    a = flow(H, path, x, p, 0.0, 1.0, mode="commuting")
    b = flow(H, path, x, p, 0.0, 1.0, mode="rough_step")
    for u, v in zip(a.as_tuple(), b.as_tuple()):
        np.testing.assert_allclose(u, v, atol=1e-6)


def test_mode_mismatch_is_rejected(half_p2, unit_line):
    two = system(builtin("x_independent", 1)[0], builtin("separated_potential", 1, f="x1")[0])
    path2 = brownian_lift(0, 2, 1.0, 16)
    with pytest.raises(HamiltonianError):
        flow(two, path2, np.zeros((1, 1)), np.zeros((1, 1)), 0.0, 1.0, mode="time_change")
    with pytest.raises(HamiltonianError):
        flow(two, path2, np.zeros((1, 1)), np.zeros((1, 1)), 0.0, 1.0, mode="commuting")
    with pytest.raises(HamiltonianError):
        flow(half_p2, path2, np.zeros((1, 1)), np.zeros((1, 1)), 0.0, 1.0)
    with pytest.raises(HamiltonianError):
        mode_equivalence_defect(two, path2, np.zeros((1, 1)), np.zeros((1, 1)), 0.0, 1.0)
    with pytest.raises(ValueError):
        flow(half_p2, unit_line, np.zeros((1, 1)), np.zeros((1, 1)), 0.0, 1.0, step=0.0)


def test_divergence_guard():
    H = builtin("x_independent", 1, expr="exp(p1)")
    path = piecewise_linear_lift([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(FlowDivergence):
        flow(H, path, np.zeros((1, 1)), np.array([[25.0]]), 0.0, 1.0)


def test_trajectory_samples_path_times(half_p2, unit_line):
    times, s = trajectory(half_p2, unit_line, [0.0], [1.0])
    np.testing.assert_allclose(times, unit_line.times)
    np.testing.assert_allclose(s.x[:, 0], -times, atol=1e-12)


def test_deviation_modulus_at_zero_radius(half_p2, unit_line):
    assert deviation_modulus(half_p2, unit_line, 1.0, 0.5, 0.0) == 0.0


def test_deviation_modulus_of_free_particle(half_p2):
    # |D_p H| <= R = 2 times the oscillation 0.3 of the path on the window
    t = np.linspace(0, 1, 101)
    path = piecewise_linear_lift(t, 0.3 * np.sin(np.pi * t))
    assert deviation_modulus(half_p2, path, 2.0, 0.5, 0.5) == pytest.approx(0.6, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_deviation_modulus_is_nondecreasing(a, b):
    H = builtin("separated_potential", 1, f="cos(x1)")
    path = brownian_lift(6, 1, 1.0, 64)
    lo, hi = sorted((a, b))
    xs = np.linspace(-1, 1, 3)[:, None]
    assert deviation_modulus(H, path, 1.0, 0.5, lo, x_points=xs) <= deviation_modulus(H, path, 1.0, 0.5, hi, x_points=xs) + 1e-12


def test_x_independent_modulus_ignores_points(half_p2):
    path = brownian_lift(6, 1, 1.0, 64)
    a = deviation_modulus(half_p2, path, 1.0, 0.2, 0.3)
    b = deviation_modulus(half_p2, path, 1.0, 0.2, 0.3, x_points=np.linspace(-5, 5, 7)[:, None])
    assert a == b
