import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathvisc import hamiltonians as hm
from pathvisc import pde_solver as ps
from pathvisc.errors import PreconditionError, StepRestrictionError
from pathvisc.grid import Grid, concave_tent, gaussian, quadratic, smooth_bump
from pathvisc.rough_path import brownian_lift, piecewise_linear_lift

ZERO_H = hm.builtin("x_independent", 1, expr="0")


def line(T=1.0, slope=1.0, samples=65):
    t = np.linspace(0.0, T, samples)
    return piecewise_linear_lift(t, slope * t)


def problem(F=None, H=None, path=None, u0=None, nodes=65, box=(-2.0, 2.0), T=0.5, dt=1 / 64, **kw):
    return ps.PDEProblem(
        F or hm.builtin_f("zero"),
        H or hm.builtin("x_independent"),
        path or line(T),
        u0 if u0 is not None else gaussian(0.5, 1.0),
        Grid.from_box([box], nodes),
        T,
        dt,
        **kw,
    )


def test_heat_equation_oracle():
    pr = problem(hm.builtin_f("heat", nu=1.0), ZERO_H, line(0.25, samples=17), gaussian(1.0, 1.0),
                 nodes=129, box=(-4.0, 4.0), T=0.25, dt=1 / 512, times=(0.0625, 0.125, 0.1875))
    res = ps.solve_smooth(pr)
    x = pr.grid.mesh()
    err = max(np.max(np.abs(u - ps.heat_oracle(x, t))) for t, u in zip(res.field.times, res.field.values))
    assert err <= 5e-3


def test_hopf_lax_oracle():
    pr = problem(u0=concave_tent(1.0), nodes=257, T=1.0, dt=1 / 64, path=line(1.0), times=(0.5,))
    res = ps.solve_smooth(pr)
    nodes = pr.grid.nodes()
    u0 = pr.initial_values().reshape(-1)
    for t in (0.5, 1.0):
        exact = ps.hopf_lax(u0, nodes, nodes, t)
        m = res.trusted.reshape(-1)
        assert np.max(np.abs(res.field.at(t).reshape(-1) - exact)[m]) <= 0.05


@pytest.mark.parametrize("c", [-0.7, 0.0, 1.3])
def test_constant_drift_is_exact(c):
    pr = problem(hm.builtin_f("constant", c=c), ZERO_H, times=(0.125, 0.25))
    res = ps.solve_smooth(pr)
    u0 = pr.initial_values()
    for t, u in zip(res.field.times, res.field.values):
        np.testing.assert_allclose(u, u0 + c * t, atol=1e-12)


def test_step_restriction_is_enforced():
    pr = problem(hm.builtin_f("heat", nu=1.0), dt=0.01)
    with pytest.raises(StepRestrictionError) as info:
        ps.solve_smooth(pr)
    assert info.value.required_dt == pytest.approx(ps.f_step_bound(pr.F, pr.grid))
    assert info.value.required_dt < 0.01


def test_initial_data_must_fit():
    with pytest.raises(ValueError):
        ps.solve_smooth(problem(u0=np.zeros(7)))
    with pytest.raises(ValueError):
        ps.solve_smooth(problem(u0=np.full(65, np.nan)))


def test_manifest_records_cfl_and_hash():
    res = ps.solve_smooth(problem())
    m = res.manifest
    assert m["cfl"]["max_pieces_per_increment"] >= 1
    assert len(m["problem"]) == 64
    assert res.manifest["problem"] == ps.solve_smooth(problem()).manifest["problem"]


def test_monotone_splitting_keeps_increments_small():
    # a large increment is split so that the update stays monotone
    pr = problem(path=piecewise_linear_lift([0.0, 0.5], [0.0, 3.0]), u0=smooth_bump(1.0, 0.5), T=0.5, dt=0.5)
    res = ps.solve_smooth(pr)
    assert res.manifest["cfl"]["max_pieces_per_increment"] > 1
    assert np.max(res.field.values[-1]) <= np.max(pr.initial_values()) + 1e-12
    assert np.min(res.field.values[-1]) >= np.min(pr.initial_values()) - 1e-12


data = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=33, max_size=33)


@settings(max_examples=25, deadline=None)
@given(data, st.lists(st.floats(0.0, 0.5, allow_nan=False), min_size=33, max_size=33), st.integers(0, 10))
def test_scheme_is_monotone(u0, bump, seed):
    u0 = np.array(u0)
    v0 = u0 + np.array(bump)
    path = brownian_lift(seed, 1, 0.5, 32)
    F = hm.builtin_f("linear", nu=0.1, b=0.5, lam=0.2)
    H = hm.builtin("separated_potential", 1, f="0.3*cos(x1)")
    pu = problem(F, H, path, u0, nodes=33, T=0.5, dt=1 / 64)
    runs = ps.solve_common([pu, pu.with_(u0=v0), pu.with_(u0=u0 - np.array(bump)[::-1] + 0.2)])
    u, v, w = (r.field.values for r in runs)
    assert np.all(u <= v + 1e-12)
    # sup of the positive part of u - w never grows
    excess = np.max(np.maximum(u - w, 0.0).reshape(u.shape[0], -1), axis=1)
    assert np.all(np.diff(excess) <= 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0), st.integers(0, 10))
def test_constant_shift(k, seed):
    pr = problem(hm.builtin_f("heat", nu=0.1), hm.builtin("separated_potential", 1, f="0.2*sin(x1)"),
                 brownian_lift(seed, 1, 0.5, 32), nodes=33, T=0.5, dt=1 / 64)
    u = ps.solve_smooth(pr).field.values
    v = ps.solve_smooth(pr.with_(u0=pr.u0.shifted(k))).field.values
    np.testing.assert_allclose(v, u + k, atol=1e-12 * (1 + abs(k)))


def test_two_dimensional_run():
    from pathvisc.hamiltonians import Hamiltonian, system

    H = system(Hamiltonian.from_expression("0.5*p1**2", 2), Hamiltonian.from_expression("0.5*p2**2", 2))
    pr = ps.PDEProblem(hm.builtin_f("heat", 2, nu=0.05), H, brownian_lift(1, 2, 0.25, 16),
                       gaussian(0.5, 1.0, n=2), Grid.from_box([[-2, 2], [-2, 2]], 33), 0.25, 1 / 32)
    res = ps.solve_smooth(pr)
    assert res.field.values.shape == (2, 33, 33)
    assert np.all(np.isfinite(res.field.values))


def test_path_hopf_lax_oracle_convergence():
    path = brownian_lift(0, 1, 1.0, 64)
    errs, dxs = [], []
    for nodes in (193, 385, 769):
        pr = problem(path=path, u0=concave_tent(1.0), nodes=nodes, box=(-3.0, 3.0), T=1.0, dt=1 / 16)
        res = ps.solve_smooth(pr)
        x = pr.grid.nodes()
        exact = ps.hopf_lax_path(pr.initial_values().reshape(-1), x, np.diff(path.values[:, 0]))[-1]
        m = res.trusted.reshape(-1)
        errs.append(np.max(np.abs(res.field.values[-1].reshape(-1) - exact)[m]))
        dxs.append(pr.grid.dx)
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] <= np.sqrt(dxs[-1])
    assert np.polyfit(np.log(dxs), np.log(errs), 1)[0] >= 0.5


def test_hopf_lax_path_matches_single_piece():
    x = np.linspace(-2, 2, 81)[:, None]
    u0 = -np.abs(x[:, 0])
    np.testing.assert_allclose(ps.hopf_lax_path(u0, x, [0.5])[-1], ps.hopf_lax(u0, x, x, 0.5))
    # a sup step followed by an inf step can only raise the data, and
    # restores concave data exactly
    back = ps.hopf_lax_path(u0, x, [0.5, -0.5])[-1]
    assert np.all(back >= u0 - 1e-12)
    np.testing.assert_allclose(back[20:61], u0[20:61], atol=1e-12)


def test_rough_mode_on_smooth_path():
    pr = problem(path=line(0.5, samples=33), T=0.5, dt=1 / 64)
    _, rep = ps.solve_rough(pr, levels=2)
    tol = ps.scheme_tolerance(pr)
    assert all(d <= tol for d in rep["cauchy"])


def test_rough_mode_without_hamiltonian():
    pr = problem(hm.builtin_f("heat", nu=0.1), ZERO_H, brownian_lift(3, 1, 0.5, 32), T=0.5, dt=1 / 128)
    _, rep = ps.solve_rough(pr, levels=3)
    assert max(rep["cauchy"]) <= 1e-12


def test_rough_mode_reports_table():
    pr = problem(path=brownian_lift(3, 1, 0.5, 32), T=0.5, u0=concave_tent(1.0), nodes=129, box=(-3, 3))
    res, rep = ps.solve_rough(pr, levels=2)
    assert rep["samples"] == [9, 17, 33]
    assert len(rep["cauchy"]) == 2
    assert res.manifest["cauchy"] is rep
    with pytest.raises(ValueError):
        ps.solve_rough(pr, levels=1)
    with pytest.raises(ValueError):
        ps.solve_rough(pr, levels=6)


def test_sub_super_without_drift():
    pr = problem(T=1.0, path=brownian_lift(2, 1, 1.0, 64), times=tuple(np.arange(1, 8) / 8))
    pair = ps.build_sub_super(pr, gaussian(0.5, 1.0))
    assert pair.C_lower == pair.C_upper == 0.0
    assert pair.C0_lower == pair.C0_upper == 0.0
    np.testing.assert_array_equal(pair.lower.values[0], pr.initial_values())
    np.testing.assert_array_equal(pair.upper.values[0], pr.initial_values())
    assert np.all(pair.lower.values[:, pair.trusted] <= pair.upper.values[:, pair.trusted] + 1e-12)


def test_sub_super_for_heat_drift():
    a = 0.5
    pr = problem(hm.builtin_f("heat", nu=1.0), ZERO_H, T=0.25, dt=1 / 1024, times=(0.125,))
    phi = quadratic(a)
    pair = ps.build_sub_super(pr, phi)
    # the first block covers the whole run and sampled inf of tr X is -R
    assert pair.h == pytest.approx(0.25)
    assert pair.C_lower == pytest.approx(-pair.R)
    assert pair.C_upper == pytest.approx(pair.R)
    x = pr.grid.mesh()
    np.testing.assert_allclose(pair.lower.at(0.125), phi(x) - pair.R * 0.125, atol=1e-12)


def test_sub_super_restarts_blocks():
    path = piecewise_linear_lift(np.linspace(0, 1, 65), 2.0 * np.linspace(0, 1, 65))
    pr = problem(path=path, T=1.0, times=tuple(np.arange(1, 8) / 8))
    pair = ps.build_sub_super(pr, quadratic(1.0))
    assert pair.h < 1.0
    assert pair.block_starts[0] == pytest.approx(pair.h)
    assert len(pair.M_lower) == len(pair.block_starts)


def test_sub_super_needs_positive_horizon():
    path = piecewise_linear_lift([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    pr = problem(path=path, T=1.0)
    with pytest.raises(PreconditionError):
        ps.build_sub_super(pr, quadratic(5.0))


@pytest.mark.parametrize(
    "F, H, seed",
    [
        (hm.builtin_f("zero"), hm.builtin("x_independent"), 0),
        (hm.builtin_f("heat", nu=0.2), hm.builtin("x_independent"), 1),
        (hm.builtin_f("linear", nu=0.1, b=0.3, lam=0.5, c=0.2), hm.builtin("separated_potential", 1, f="0.3*cos(x1)"), 2),
    ],
)
def test_sandwich(F, H, seed):
    pr = problem(F, H, brownian_lift(seed, 1, 1.0, 32), nodes=97, box=(-3.0, 3.0), T=1.0, dt=1 / 128,
                 times=tuple(np.arange(1, 8) / 8))
    res = ps.solve_smooth(pr)
    pair = ps.build_sub_super(pr, pr.u0)
    tol = ps.scheme_tolerance(pr, res)
    m = res.trusted & pair.trusted
    u = res.field.values[:, m]
    assert np.all(pair.lower.values[:, m] - tol <= u)
    assert np.all(u <= pair.upper.values[:, m] + tol)


def test_adaptive_coefficients_can_break_order():
    # a spike on the last node raises the speed of one run only
    u0 = np.zeros(33)
    v0 = u0.copy()
    v0[-1] = 0.5
    pr = problem(hm.builtin_f("linear", nu=0.1, b=0.5, lam=0.2), hm.builtin("separated_potential", 1, f="0.3*cos(x1)"),
                 brownian_lift(0, 1, 0.5, 32), u0, nodes=33, T=0.5, dt=1 / 64)
    gap = ps.solve_smooth(pr).field.values - ps.solve_smooth(pr.with_(u0=v0)).field.values
    assert gap.max() > 0
    u, v = ps.solve_common([pr, pr.with_(u0=v0)])
    assert u.manifest["cfl"]["max_speed"] == v.manifest["cfl"]["max_speed"]
    assert np.all(u.field.values <= v.field.values + 1e-12)


def test_scheme_tolerance_rejects_grid_arrays():
    pr = problem(u0=np.zeros(65))
    with pytest.raises(ValueError):
        ps.scheme_tolerance(pr)
