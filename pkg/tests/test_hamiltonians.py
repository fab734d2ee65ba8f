import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathvisc import hamiltonians
from pathvisc.errors import HamiltonianError
from pathvisc.hamiltonians import (
    Hamiltonian,
    builtin,
    builtin_f,
    commutation_check,
    derivative_errors,
    ellipticity_violation,
    f_extrema,
    monotonicity_violation,
    poisson_bracket,
    system,
)

BUILTINS = [
    ("x_independent", 1, {}),
    ("x_independent", 2, {"expr": "sqrt(1 + p1**2 + p2**2)"}),
    ("separated_potential", 1, {"f": "cos(x1)"}),
    ("separated_potential", 2, {"f": "x1**2 - sin(x2)"}),
    ("linear_growth", 1, {"a": "2 + sin(x1)"}),
    ("linear_growth", 2, {"a": "1 + 0.5*exp(-x1**2 - x2**2)"}),
    ("homogeneous_convex", 1, {"q": 2}),
    ("homogeneous_convex", 1, {"q": 3, "g": [["2 + cos(x1)"]]}),
    ("homogeneous_convex", 2, {"q": 4, "g": [["2", "0.5"], ["0.5", "1 + 0.5*sin(x1)"]]}),
]


@pytest.mark.parametrize("family, n, params", BUILTINS)
def test_builtin_derivatives_match_finite_differences(family, n, params):
    errs = derivative_errors(builtin(family, n, **params), samples=100)
    assert max(errs.values()) <= 1e-5


def test_linear_growth_at_zero_momentum():
    H = builtin("linear_growth", 1, a=1)[0]
    assert H(np.array([0.0]), np.array([0.3])) == pytest.approx(1.0)
    np.testing.assert_allclose(H.grad_p(np.array([0.0]), np.array([0.3])), [0.0])


def test_separated_potential_without_potential():
    H = builtin("separated_potential", 2, f=0)[0]
    assert H(np.array([3.0, 4.0]), np.zeros(2)) == pytest.approx(12.5)


def test_homogeneous_convex_identity_metric():
    H = builtin("homogeneous_convex", 2, q=2)[0]
    p = np.array([1.0, 1.0])
    assert H(p, np.zeros(2)) == pytest.approx(2.0)
    np.testing.assert_allclose(H.grad_p(p, np.zeros(2)), [2.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.1, 5.0),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
def test_homogeneous_convex_scaling(lam, p, x):
    H = builtin("homogeneous_convex", 2, q=3, g=[["2", "0.5"], ["0.5", "1 + 0.5*sin(x1)"]])[0]
    p, x = np.array(p), np.array(x)
    assert H(lam * p, x) == pytest.approx(lam**3 * H(p, x), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize(
    "family, params",
    [
        ("homogeneous_convex", {"q": 1.5}),
        ("homogeneous_convex", {"g": [["x1"]]}),
        ("homogeneous_convex", {"g": [["-1"]]}),
        ("nonexistent", {}),
        ("separated_potential", {"f": "p1"}),
        ("separated_potential", {"f": "__import__('os')"}),
    ],
)
def test_builtin_rejects_bad_parameters(family, params):
    with pytest.raises(HamiltonianError):
        builtin(family, 1, **params)


def test_expression_hamiltonian():
    H = Hamiltonian.from_expression("0.5*p1**2 - cos(x1)", 1)
    p, x = np.array([2.0]), np.array([0.0])
    assert H(p, x) == pytest.approx(1.0)
    np.testing.assert_allclose(H.grad_x(p, x), [0.0], atol=1e-15)
    np.testing.assert_allclose(H.hess_xx(p, x), [[1.0]])


def test_bracket_of_x_independent_pair_vanishes():
    H = system(builtin("x_independent", 2)[0], Hamiltonian.from_expression("p1 + p2**3", 2))
    rng = np.random.default_rng(0)
    p, x = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    assert np.all(poisson_bracket(H, 0, 1, p, x) == 0.0)
    assert commutation_check(H) == (True, 0.0)


def test_bracket_of_position_and_momentum():
    H = system(Hamiltonian.from_expression("p1", 1), Hamiltonian.from_expression("x1", 1))
    rng = np.random.default_rng(1)
    p, x = rng.normal(size=(10, 1)), rng.normal(size=(10, 1))
    np.testing.assert_allclose(poisson_bracket(H, 0, 1, p, x), -1.0)


def test_bracket_of_separated_potentials():
    f1, f2 = "sin(x1)", "x1**2"
    H = system(builtin("separated_potential", 1, f=f1)[0], builtin("separated_potential", 1, f=f2)[0])
    rng = np.random.default_rng(2)
    p, x = rng.normal(size=(10, 1)), rng.normal(size=(10, 1))
    expected = (2 * x[:, 0] - np.cos(x[:, 0])) * p[:, 0]
    np.testing.assert_allclose(poisson_bracket(H, 0, 1, p, x), expected, atol=1e-12)


def test_separated_potentials_differing_by_constant_commute():
    H = system(builtin("separated_potential", 1, f="sin(x1)")[0], builtin("separated_potential", 1, f="sin(x1) + 3")[0])
    assert commutation_check(H)[0]


def test_commutation_check_reports_momentum_bound():
    H = system(builtin("x_independent", 1)[0], builtin("separated_potential", 1, f="x1")[0])
    ok, defect = commutation_check(H, samples=256, radius=2.0, seed=0)
    p = np.random.default_rng(0).uniform(-2.0, 2.0, size=(256, 1))
    assert not ok
    assert defect == pytest.approx(np.max(np.abs(p)))


def test_single_component_commutes(half_p2):
    assert commutation_check(half_p2) == (True, 0.0)


def test_bracket_index_out_of_range(half_p2):
    with pytest.raises(HamiltonianError):
        poisson_bracket(half_p2, 0, 1, np.zeros(1), np.zeros(1))


def test_components_must_share_dimension():
    with pytest.raises(HamiltonianError):
        system(builtin("x_independent", 1)[0], builtin("x_independent", 2)[0])


def test_regularity_class_declaration(half_p2):
    assert half_p2.regularity == "C2b"
    assert system(half_p2[0], half_p2[0]).regularity == "C4b"


F_CASES = [
    ("zero", 1, {}),
    ("constant", 2, {"c": -0.5}),
    ("heat", 2, {"nu": 0.3}),
    ("linear", 2, {"nu": 0.2, "b": [1.0, -1.0], "lam": 0.5, "c": 1.0}),
    ("bellman", 1, {"nu1": 0.5, "nu2": 1.5}),
    ("expression", 1, {"expr": "0.5*X11 + sin(x1) - r"}),
    ("expression", 2, {"expr": "X11 + X22 + 0.1*p1 - 2*r"}),
]


@pytest.mark.parametrize("family, n, params", F_CASES)
def test_drift_operators_are_elliptic_and_monotone(family, n, params):
    F = builtin_f(family, n, **params)
    assert ellipticity_violation(F) == 0.0
    assert monotonicity_violation(F) == 0.0


@pytest.mark.parametrize(
    "expr", ["-X11", "r", "X11 + y", "X11**2"],
)
def test_expression_drift_rejects_bad_structure(expr):
    with pytest.raises(HamiltonianError):
        builtin_f("expression", 1, expr=expr)


def test_heat_bounds_and_extrema():
    F = builtin_f("heat", 1, nu=2.0)
    assert F.bounds() == (2.0, 0.0, 0.0)
    lo, hi, count = f_extrema(F, 1.5, np.zeros((1, 1)), [0.0])
    # nu tr X over |X| <= R is attained at the vertices
    assert lo == pytest.approx(-3.0)
    assert hi == pytest.approx(3.0)
    assert count > 0


def test_sampled_lipschitz_of_linear_operator():
    F = builtin_f("expression", 2, expr="0.5*X11 + 0.25*X22 - 3*p2 - r")
    lam, drift, decay = hamiltonians.sampled_lipschitz(F)
    assert lam == pytest.approx(0.5, rel=1e-6)
    assert drift == pytest.approx(3.0, rel=1e-6)
    assert decay == pytest.approx(1.0, rel=1e-6)
