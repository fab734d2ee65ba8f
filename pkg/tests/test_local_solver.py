import json

import numpy as np
import pytest

from pathvisc import local_solver as ls
from pathvisc.errors import HorizonExceeded
from pathvisc.grid import Grid, gaussian, linear, quadratic, smooth_bump
from pathvisc.hamiltonians import builtin
from pathvisc.rough_path import brownian_lift, piecewise_linear_lift


def quadratic_exact(x, a, b, tau):
    """``S`` applied to ``b x + a x^2 / 2`` under ``H = p^2 / 2``."""
    return (0.5 * a * x**2 + b * x + 0.5 * b**2 * tau) / (1 - a * tau)


def observed_order(dxs, errs):
    return float(np.polyfit(np.log(dxs), np.log(errs), 1)[0])


@pytest.fixture(scope="module")
def bm():
    return brownian_lift(0, 1, 1.0, 256)


def test_linear_datum_is_transported(half_p2, bm):
    g = Grid.from_box([[-1, 1], [-1, 1]], 17)
    H = builtin("x_independent", 2)
    path = bm
    p0 = np.array([0.4, -0.3])
    sol = ls.apply(H, path, linear(p0, 0.1), 0.0, 0.5, g)
    tau = path.increment(0.0, 0.5)[0]
    expected = g.nodes() @ p0 + 0.1 + 0.5 * p0 @ p0 * tau
    np.testing.assert_allclose(sol.phi.reshape(-1), expected, atol=1e-12)
    np.testing.assert_allclose(sol.det, 1.0, atol=1e-12)


@pytest.mark.parametrize("a", [0.5, -0.8])
def test_quadratic_datum_closed_form(half_p2, bm, a):
    g = Grid.from_box([[-1, 1]], 129)
    sol = ls.apply(half_p2, bm, quadratic(a, 0.2), 0.0, 0.2, g)
    tau = bm.increment(0.0, 0.2)[0]
    x = g.nodes()[:, 0]
    assert sol.trusted.all()
    np.testing.assert_allclose(sol.phi, quadratic_exact(x, a, 0.2, tau), atol=5 * g.dx**2)
    np.testing.assert_allclose(sol.det, 1 - a * tau, atol=1e-10)


def test_apply_at_anchor_is_identity(half_p2, bm):
    g = Grid.from_box([[-2, 2]], 33)
    phi = gaussian(1.0, 0.7)
    sol = ls.apply(half_p2, bm, phi, 0.4, 0.4, g)
    np.testing.assert_array_equal(sol.phi.reshape(-1), phi(g.nodes()))


def test_apply_error_decays_at_second_order(half_p2, bm):
    dxs, errs = [], []
    tau = bm.increment(0.0, 0.2)[0]
    for nodes in (65, 129, 257):
        g = Grid.from_box([[-1, 1]], nodes)
        sol = ls.apply(half_p2, bm, quadratic(0.5, 0.2), 0.0, 0.2, g)
        dxs.append(g.dx)
        errs.append(np.max(np.abs(sol.phi - quadratic_exact(g.nodes()[:, 0], 0.5, 0.2, tau))))
    assert observed_order(dxs, errs) >= 1.8


def test_gradient_consistency(bm):
    H = builtin("separated_potential", 1, f="0.3*cos(x1)")
    g = Grid.from_box([[-1.5, 1.5]], 97)
    sol = ls.apply(H, bm, gaussian(0.8, 1.0), 0.0, 0.3, g)
    centred = (sol.phi[2:] - sol.phi[:-2]) / (2 * g.dx)
    gap = np.abs(centred - sol.dphi[1:-1, 0])
    assert np.nanmax(gap) <= max(1e-4, 10 * g.dx**2)


def test_horizon_exceeded_is_raised(half_p2):
    path = piecewise_linear_lift([0.0, 1.0], [0.0, 1.0])
    g = Grid.from_box([[-1, 1]], 33)
    with pytest.raises(HorizonExceeded):
        ls.apply(half_p2, path, quadratic(2.0), 0.0, 0.6, g)


def analytic_horizon(path, t0, a, theta):
    """Continuous distance to the first crossing of ``a tau = 1 - theta`` on either side."""
    fine = np.linspace(0.0, path.T, 200_001)
    tau = a * path.increment(t0, fine)[:, 0]
    best = np.inf
    for side in (fine >= t0, fine <= t0):
        t, v = fine[side], tau[side]
        order = np.argsort(np.abs(t - t0))
        t, v = t[order], v[order]
        hit = np.nonzero(v >= 1 - theta)[0]
        if hit.size:
            best = min(best, abs(t[hit[0]] - t0))
    return best


@pytest.mark.parametrize("seed, a, t0", [(0, 2.0, 0.0), (1, 3.0, 0.25), (2, -2.5, 0.5), (3, 4.0, 0.1)])
def test_horizon_matches_crossing(half_p2, seed, a, t0):
    path = brownian_lift(seed, 1, 1.0, 512)
    g = Grid.from_box([[-1, 1]], 17)
    rep = ls.horizon(half_p2, path, quadratic(a), t0, g, theta_inv=0.1)
    exact = analytic_horizon(path, t0, a, 0.1)
    if np.isfinite(exact):
        assert abs(rep.h - exact) <= path.times[1]
        assert rep.min_det >= 0.1
    else:
        assert rep.h == pytest.approx(max(t0, path.T - t0))


def test_linear_datum_has_full_horizon(half_p2, bm):
    g = Grid.from_box([[-1, 1]], 9)
    rep = ls.horizon(half_p2, bm, linear([0.7]), 0.0, g)
    assert rep.h == pytest.approx(bm.T)
    assert rep.min_det == pytest.approx(1.0)
    assert json.loads(rep.to_json())["h"] == rep.h


def test_horizon_rejects_bad_theta(half_p2, bm):
    with pytest.raises(ValueError):
        ls.horizon(half_p2, bm, linear([0.7]), 0.0, Grid.from_box([[-1, 1]], 9), theta_inv=1.5)


def test_zero_horizon_is_diagnosed(half_p2):
    path = piecewise_linear_lift([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    rep = ls.horizon(half_p2, path, quadratic(5.0), 0.0, Grid.from_box([[-1, 1]], 9))
    assert rep.h == 0.0
    assert "shorter" in rep.diagnostic


def test_operator_properties_converge(half_p2, bm):
    dxs, semi = [], []
    for dx in (1 / 32, 1 / 64, 1 / 128):
        g = Grid.from_spacing([[-1, 1]], dx)
        rep = ls.check_properties(half_p2, bm, quadratic(0.5, 0.2), linear([0.3], 0.1), 0.0, [0.1, 0.2], g)
        worst = rep.worst()
        assert worst["shift"] <= 1e-10
        assert worst["comparison"] <= 5 * dx**2
        assert worst["semigroup"] <= 5 * dx**2
        dxs.append(dx)
        semi.append(worst["semigroup"])
    assert observed_order(dxs, semi) >= 1.8


def test_semigroup_with_coincident_times(half_p2, bm):
    g = Grid.from_box([[-1, 1]], 65)
    rep = ls.check_properties(half_p2, bm, gaussian(0.5, 1.0), linear([0.2]), 0.0, [0.2], g, mid=lambda t: t)
    assert rep.worst()["semigroup"] <= 2 * g.dx**2


def test_comparison_bound_is_attained_for_ordered_data(bm):
    H = builtin("separated_potential", 1, f="0.2*sin(x1)")
    g = Grid.from_box([[-1, 1]], 65)
    phi = gaussian(0.5, 1.0)
    rep = ls.check_properties(H, bm, phi, phi.shifted(-0.3), 0.0, [0.2], g)
    assert rep.worst()["comparison_gap"] <= 1e-10


@pytest.mark.parametrize("amplitude, radius, center", [(0.05, 0.8, 1.9), (0.02, 0.5, -1.7)])
def test_domain_of_dependence_locality(half_p2, bm, amplitude, radius, center):
    g = Grid.from_box([[-2.5, 2.5]], 161)
    K = ls.Annulus((0.0,), 0.0, 1.0)
    phi2 = gaussian(0.5, 1.0)
    phi1 = phi2 + smooth_bump(amplitude, radius, center=center)
    rep = ls.domain_of_dependence_check(half_p2, bm, phi1, phi2, 0.0, 0.3, K, R=1.5, grid=g)
    assert not rep.vacuous
    assert rep.defect <= 5 * g.dx**2
    # the bump outside K is felt globally but never inside K_rho
    assert rep.sup_K_rho == pytest.approx(0.0, abs=1e-12)
    assert rep.global_sup > 0.5 * amplitude


def test_domain_of_dependence_on_annulus(bm):
    H = builtin("separated_potential", 1, f="0.2*cos(x1)")
    g = Grid.from_box([[-2.5, 2.5]], 161)
    K = ls.Annulus((0.0,), 0.3, 1.8)
    phi2 = gaussian(0.5, 1.0)
    phi1 = phi2 + smooth_bump(0.05, 0.25, center=0.0)
    rep = ls.domain_of_dependence_check(H, bm, phi1, phi2, 0.0, 0.2, K, R=1.0, grid=g)
    assert not rep.vacuous
    assert rep.defect <= 5 * g.dx**2


def test_domain_of_dependence_at_anchor(half_p2, bm):
    g = Grid.from_box([[-2, 2]], 65)
    K = ls.Annulus((0.0,), 0.5, 1.5)
    rep = ls.domain_of_dependence_check(half_p2, bm, gaussian(), gaussian().shifted(0.1), 0.2, 0.2, K, 1.0, g)
    assert rep.rho == 0.0
    assert rep.defect == 0.0


def test_domain_of_dependence_vacuous_when_shrunk_away(half_p2, bm):
    g = Grid.from_box([[-2, 2]], 33)
    K = ls.Annulus((0.0,), 0.9, 1.0)
    rep = ls.domain_of_dependence_check(half_p2, bm, gaussian(), gaussian(), 0.0, 0.5, K, 2.0, g)
    assert rep.vacuous
    assert rep.defect == 0.0


def test_smooth_approximations_are_cauchy():
    H = builtin("separated_potential", 1, f="0.2*cos(x1)")
    path = brownian_lift(0, 1, 1.0, 512)
    g = Grid.from_box([[-1, 1]], 41)
    t = 0.3 + 1 / 1024
    vals = [ls.apply(H, path.subsample(2 ** (3 - j)), gaussian(0.5, 1.0), 0.0, t, g).phi for j in range(4)]
    d = [float(np.nanmax(np.abs(a - b))) for a, b in zip(vals[:-1], vals[1:])]
    assert d[0] > d[1] > d[2]


def test_snapshot_csv(tmp_path, half_p2, bm):
    g = Grid.from_box([[-1, 1]], 9)
    sol = ls.apply(half_p2, bm, quadratic(0.5), 0.0, 0.1, g)
    ls.write_snapshot_csv(sol, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "x1,Phi,dPhi1,detJx"
    assert len(lines) == 1 + int(sol.trusted.sum())
