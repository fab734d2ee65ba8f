"""Hamiltonians ``H(p, x)``, the drift nonlinearity ``F(X, p, r, x, t)`` and
the model families used throughout the package.

All callables are vectorised: ``p`` and ``x`` carry the spatial dimension on
the last axis and any leading batch shape. Second derivatives follow the
convention ``hess_px[..., i, j] = d^2 H / dp_i dx_j``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp

from . import expressions
from .errors import HamiltonianError


@dataclass(frozen=True)
class Hamiltonian:
    """One scalar Hamiltonian with analytic first and second derivatives."""

    n: int
    value: Callable
    grad_p: Callable
    grad_x: Callable
    hess_pp: Callable
    hess_px: Callable
    hess_xx: Callable
    x_independent: bool = False
    label: str = "custom"
    bundle: Callable = None
    third: Callable = None

    def __call__(self, p, x):
        return self.value(p, x)

    def derivatives(self, p, x):
        """``(H, D_p H, D_x H, D_pp H, D_px H, D_xx H)`` in one evaluation."""
        if self.bundle is not None:
            return self.bundle(p, x)
        return tuple(
            f(p, x)
            for f in (self.value, self.grad_p, self.grad_x, self.hess_pp, self.hess_px, self.hess_xx)
        )

    @classmethod
    def from_sympy(cls, expr, n, label=None, nan_to_zero=False):
        """Differentiate a sympy expression in ``p1..pn, x1..xn`` and compile it."""
        p, x, _ = expressions.symbols(n)
        extra = expr.free_symbols - set(p) - set(x)
        if extra:
            raise HamiltonianError(f"Hamiltonian depends on unknown symbols {sorted(map(str, extra))}")
        args = list(p) + list(x)
        gp = [sp.diff(expr, s) for s in p]
        gx = [sp.diff(expr, s) for s in x]
        hpp = [[sp.diff(g, s) for s in p] for g in gp]
        hpx = [[sp.diff(g, s) for s in x] for g in gp]
        hxx = [[sp.diff(g, s) for s in x] for g in gx]
        scalar = expressions.compile_scalar(expr, args)
        arrays = [expressions.compile_array(e, args) for e in (gp, gx, hpp, hpx, hxx)]
        joint = expressions.compile_bundle([expr, gp, gx, hpp, hpx, hxx], args)
        # third derivatives T[a, b, c]: ppp, ppx (p_a p_b x_c), pxx (p_a x_b x_c), xxx
        third = expressions.compile_bundle(
            [
                [[[sp.diff(e, s) for s in p] for e in row] for row in hpp],
                [[[sp.diff(e, s) for s in x] for e in row] for row in hpp],
                [[[sp.diff(e, s) for s in x] for e in row] for row in hpx],
                [[[sp.diff(e, s) for s in x] for e in row] for row in hxx],
            ],
            args,
        )

        def wrap(f):
            def call(pp, xx):
                pp, xx = np.asarray(pp, dtype=float), np.asarray(xx, dtype=float)
                pp, xx = np.broadcast_arrays(pp, xx)
                with np.errstate(divide="ignore", invalid="ignore"):
                    out = f(*np.moveaxis(pp, -1, 0), *np.moveaxis(xx, -1, 0))
                if nan_to_zero:
                    if isinstance(out, tuple):
                        return tuple(np.nan_to_num(o, nan=0.0, posinf=0.0, neginf=0.0) for o in out)
                    out = np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0)
                return out

            return call

        return cls(
            n,
            wrap(scalar),
            *(wrap(a) for a in arrays),
            x_independent=not (expr.free_symbols & set(x)),
            label=label or str(expr),
            bundle=wrap(joint),
            third=wrap(third),
        )

    @classmethod
    def from_expression(cls, text, n, label=None):
        """Build from the expression language, e.g. ``"0.5*p1**2 - cos(x1)"``."""
        try:
            expr = expressions.parse(text, n, allow=("p", "x"))
        except ValueError as exc:
            raise HamiltonianError(str(exc)) from None
        return cls.from_sympy(expr, n, label=label or str(text))


@dataclass(frozen=True)
class HamiltonianSystem:
    """The vector ``H = (H^1, ..., H^m)`` driving ``sum_i H^i(Du, x) dW^i``."""

    components: tuple
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise HamiltonianError("need at least one component")
        if len({c.n for c in comps}) != 1:
            raise HamiltonianError("components disagree in spatial dimension")

    @property
    def n(self):
        return self.components[0].n

    @property
    def m(self):
        return len(self.components)

    @property
    def x_independent(self):
        return all(c.x_independent for c in self.components)

    @property
    def regularity(self):
        """Declared class: C^2_b on momentum balls when m == 1, C^4_b otherwise."""
        return "C2b" if self.m == 1 else "C4b"

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return self.m


def system(*components, family="custom", params=None):
    return HamiltonianSystem(tuple(components), family, params or {})


def _sum_sq(p):
    return sum(s**2 for s in p)


def _matrix_expr(g, n, x):
    """Parse a matrix parameter (nested lists of expressions or numbers)."""
    if g is None:
        return sp.eye(n)
    if np.isscalar(g) or isinstance(g, str):
        return expressions.parse(g, n, allow=("x",)) * sp.eye(n)
    rows = [[expressions.parse(e, n, allow=("x",)) for e in row] for row in g]
    mat = sp.Matrix(rows)
    if mat.shape != (n, n):
        raise HamiltonianError(f"g must be {n}x{n}")
    if mat != mat.T:
        raise HamiltonianError("g must be symmetric")
    return mat


FAMILIES = ("x_independent", "separated_potential", "linear_growth", "homogeneous_convex")


def builtin(family, n=1, **params):
    """One-component model Hamiltonian.

    Families and parameters:

    * ``x_independent``: ``expr`` in ``p`` (default ``|p|^2 / 2``).
    * ``separated_potential``: ``|p|^2 / 2 - f(x)``, ``f`` an expression in ``x``.
    * ``linear_growth``: ``a(x) (|p|^2 + 1)^{1/2}``.
    * ``homogeneous_convex``: ``<g(x) p, p>^{q/2}`` with ``q >= 2``; ``g`` is
      a symmetric matrix of expressions checked against
      ``C^{-1} I <= g <= C I`` on sample points (``C`` defaults to 10).
    """
    p, x, _ = expressions.symbols(n)
    try:
        if family == "x_independent":
            if "expr" in params:
                expr = expressions.parse(params["expr"], n, allow=("p",))
            else:
                expr = _sum_sq(p) / 2
        elif family == "separated_potential":
            f = expressions.parse(params.get("f", 0), n, allow=("x",))
            expr = _sum_sq(p) / 2 - f
        elif family == "linear_growth":
            a = expressions.parse(params.get("a", 1), n, allow=("x",))
            expr = a * sp.sqrt(_sum_sq(p) + 1)
        elif family == "homogeneous_convex":
            q = sp.nsimplify(params.get("q", 2))
            if q < 2:
                raise HamiltonianError(f"homogeneous_convex needs q >= 2, got {q}")
            g = _matrix_expr(params.get("g"), n, x)
            _check_uniformly_elliptic(g, n, x, float(params.get("C", 10.0)))
            pv = sp.Matrix(p)
            quad = sp.expand((pv.T * g * pv)[0, 0])
            expr = quad if q == 2 else quad ** (q / 2)
        else:
            raise HamiltonianError(f"unknown family {family!r}; expected one of {FAMILIES}")
    except ValueError as exc:
        if isinstance(exc, HamiltonianError):
            raise
        raise HamiltonianError(str(exc)) from None
    comp = Hamiltonian.from_sympy(
        sp.sympify(expr), n, label=family, nan_to_zero=family == "homogeneous_convex"
    )
    return HamiltonianSystem((comp,), family, dict(params))


def _check_uniformly_elliptic(g, n, x, bound, samples=64, seed=0):
    f = expressions.compile_array(g.tolist(), list(x))
    pts = np.random.default_rng(seed).uniform(-5.0, 5.0, size=(samples, n))
    mats = f(*pts.T)
    eig = np.linalg.eigvalsh(mats)
    if not np.all(np.isfinite(eig)) or eig.min() < 1.0 / bound or eig.max() > bound:
        raise HamiltonianError(
            f"g is not uniformly positive definite within [{1 / bound:g}, {bound:g}] "
            f"(sampled eigenvalues in [{eig.min():.3g}, {eig.max():.3g}])"
        )


def poisson_bracket(H, i, j, p, x):
    """``{H^i, H^j} = sum_k dH^i/dx_k dH^j/dp_k - dH^i/dp_k dH^j/dx_k``.

    Indices are zero-based.
    """
    if not (0 <= i < H.m and 0 <= j < H.m):
        raise HamiltonianError(f"component index out of range for m={H.m}")
    hi, hj = H[i], H[j]
    return np.sum(hi.grad_x(p, x) * hj.grad_p(p, x) - hi.grad_p(p, x) * hj.grad_x(p, x), axis=-1)


def commutation_check(H, samples=256, radius=2.0, seed=0, tol=1e-8):
    """Sample all pairwise brackets on ``[-radius, radius]^{2n}``.

    Returns ``(commutes, max_defect)``; single-component systems commute.
    """
    if H.m < 2:
        return True, 0.0
    rng = np.random.default_rng(seed)
    p = rng.uniform(-radius, radius, size=(samples, H.n))
    x = rng.uniform(-radius, radius, size=(samples, H.n))
    worst = 0.0
    for i in range(H.m):
        for j in range(i + 1, H.m):
            worst = max(worst, float(np.max(np.abs(poisson_bracket(H, i, j, p, x)))))
    return worst <= tol, worst


def derivative_errors(H, samples=100, radius=2.0, seed=0, step=1e-6):
    """Relative mismatch between analytic derivatives and central differences.

    The error of each entry is ``|analytic - fd| / max(1, |analytic|)``;
    returns a dict of maxima keyed by derivative name.
    """
    rng = np.random.default_rng(seed)
    n = H.n
    p = rng.uniform(-radius, radius, size=(samples, n))
    x = rng.uniform(-radius, radius, size=(samples, n))
    eye = np.eye(n)

    def fd(f, wrt):
        cols = []
        for k in range(n):
            h = step * (1.0 + np.abs((p if wrt == "p" else x)[:, k]))[:, None]
            if wrt == "p":
                d = (f(p + h * eye[k], x) - f(p - h * eye[k], x))
            else:
                d = (f(p, x + h * eye[k]) - f(p, x - h * eye[k]))
            hh = h[:, 0].reshape((-1,) + (1,) * (d.ndim - 1))
            cols.append(d / (2 * hh))
        return np.stack(cols, axis=-1)

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))

    out = {}
    for c in H:
        checks = {
            "grad_p": (c.grad_p(p, x), fd(c.value, "p")),
            "grad_x": (c.grad_x(p, x), fd(c.value, "x")),
            "hess_pp": (c.hess_pp(p, x), fd(c.grad_p, "p")),
            "hess_px": (c.hess_px(p, x), fd(c.grad_p, "x")),
            "hess_xx": (c.hess_xx(p, x), fd(c.grad_x, "x")),
        }
        for name, (a, b) in checks.items():
            out[name] = max(out.get(name, 0.0), rel(a, b))
    return out


def momentum_speed(H, p, x):
    """``sum_i |D_p H^i|`` per coordinate, shape ``p.shape``."""
    return sum(np.abs(c.grad_p(p, x)) for c in H)


# ---------------------------------------------------------------------------
# drift nonlinearity


@dataclass(frozen=True)
class FOperator:
    """Degenerate elliptic, r-nonincreasing ``F(X, p, r, x, t)``.

    ``func`` takes ``X`` (..., n, n), ``p`` (..., n), ``r`` (...), ``x``
    (..., n) and a scalar ``t``. The optional bounds are Lipschitz constants
    in the diagonal of ``X`` (``ellipticity``), in ``p`` (``drift``) and in
    ``r`` (``decay``); when absent they are estimated by sampling.
    ``modulus`` records the structure modulus as metadata only.
    """

    func: Callable
    n: int
    ellipticity: Optional[float] = None
    drift: Optional[float] = None
    decay: Optional[float] = None
    modulus: Optional[str] = None
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, X, p, r, x, t):
        return self.func(X, p, r, x, t)

    def bounds(self, radius=2.0, samples=200, seed=0):
        """Return ``(ellipticity, drift, decay)``, sampling any missing entry."""
        if None not in (self.ellipticity, self.drift, self.decay):
            return self.ellipticity, self.drift, self.decay
        est = sampled_lipschitz(self, radius, samples, seed)
        return tuple(v if v is not None else e for v, e in zip((self.ellipticity, self.drift, self.decay), est))


def _random_args(n, count, radius, rng, t_range=(0.0, 1.0)):
    A = rng.uniform(-radius, radius, size=(count, n, n))
    X = 0.5 * (A + np.swapaxes(A, -1, -2))
    p = rng.uniform(-radius, radius, size=(count, n))
    r = rng.uniform(-radius, radius, size=count)
    x = rng.uniform(-radius, radius, size=(count, n))
    t = rng.uniform(*t_range)
    return X, p, r, x, t


def sampled_lipschitz(F, radius=2.0, samples=200, seed=0, h=1e-4):
    """Sampled bounds of ``|dF/dX_kk|``, ``|dF/dp_k|`` and ``-dF/dr``."""
    rng = np.random.default_rng(seed)
    X, p, r, x, t = _random_args(F.n, samples, radius, rng)
    n = F.n
    lam = drift = decay = 0.0
    for k in range(n):
        E = np.zeros((n, n))
        E[k, k] = h
        lam = max(lam, float(np.max(np.abs(F(X + E, p, r, x, t) - F(X - E, p, r, x, t)) / (2 * h))))
        e = np.zeros(n)
        e[k] = h
        drift = max(drift, float(np.max(np.abs(F(X, p + e, r, x, t) - F(X, p - e, r, x, t)) / (2 * h))))
    decay = max(0.0, float(np.max(-(F(X, p, r + h, x, t) - F(X, p, r - h, x, t)) / (2 * h))))
    return lam, drift, decay


def ellipticity_violation(F, samples=200, radius=2.0, seed=0):
    """Largest ``F(X) - F(X + E)`` over random PSD ``E`` (zero if elliptic)."""
    rng = np.random.default_rng(seed)
    X, p, r, x, t = _random_args(F.n, samples, radius, rng)
    B = rng.normal(size=(samples, F.n, F.n))
    E = B @ np.swapaxes(B, -1, -2)
    return max(0.0, float(np.max(F(X, p, r, x, t) - F(X + E, p, r, x, t))))


def monotonicity_violation(F, samples=200, radius=2.0, seed=0):
    """Largest increase of ``F`` when ``r`` increases (zero if nonincreasing)."""
    rng = np.random.default_rng(seed)
    X, p, r, x, t = _random_args(F.n, samples, radius, rng)
    dr = rng.uniform(0.0, radius, size=samples)
    return max(0.0, float(np.max(F(X, p, r + dr, x, t) - F(X, p, r, x, t))))


def f_extrema(F, R, xs, times, samples=2000, seed=0):
    """Sampled ``(inf, sup)`` of ``F`` over ``|X| + |p| + |r| <= R``.

    ``|X|`` is the Frobenius norm. The sample set holds the origin, the
    ``+-R`` vertices along every coordinate direction of ``(X, p, r)`` and
    ``samples`` random interior points; each is evaluated at every ``x`` in
    ``xs`` and every time in ``times``. Returns ``(inf, sup, count)``.
    """
    n = F.n
    rng = np.random.default_rng(seed)
    units = [np.zeros((n, n))]
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 if i == j else 1.0 / np.sqrt(2.0)
            units.append(E)
    X, p, r = [], [], []
    for E in units[1:]:
        for sgn in (1.0, -1.0):
            X.append(sgn * R * E), p.append(np.zeros(n)), r.append(0.0)
    for k in range(n):
        for sgn in (1.0, -1.0):
            X.append(np.zeros((n, n))), p.append(sgn * R * np.eye(n)[k]), r.append(0.0)
    for sgn in (0.0, 1.0, -1.0):
        X.append(np.zeros((n, n))), p.append(np.zeros(n)), r.append(sgn * R)
    A = rng.normal(size=(samples, n, n))
    Xr = 0.5 * (A + np.swapaxes(A, -1, -2))
    pr = rng.normal(size=(samples, n))
    rr = rng.normal(size=samples)
    norm = np.linalg.norm(Xr, axis=(1, 2)) + np.linalg.norm(pr, axis=1) + np.abs(rr)
    dim = n * (n + 1) // 2 + n + 1
    scale = R * rng.uniform(size=samples) ** (1.0 / dim) / norm
    X = np.concatenate([np.array(X), Xr * scale[:, None, None]])
    p = np.concatenate([np.array(p), pr * scale[:, None]])
    r = np.concatenate([np.array(r), rr * scale])
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    lo, hi = np.inf, -np.inf
    for t in np.atleast_1d(times):
        for x in xs:
            vals = F(X, p, r, np.broadcast_to(x, p.shape), float(t))
            lo, hi = min(lo, float(np.min(vals))), max(hi, float(np.max(vals)))
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise HamiltonianError(f"F is unbounded on the sampled ball of radius {R:g}")
    return lo, hi, r.size * xs.shape[0] * np.atleast_1d(times).size


def _trace(X):
    return np.trace(X, axis1=-2, axis2=-1)


F_FAMILIES = ("zero", "constant", "heat", "linear", "bellman", "expression")


def builtin_f(family, n=1, **params):
    """Model drift nonlinearities.

    * ``zero``: ``F = 0``.
    * ``constant``: ``F = c``.
    * ``heat``: ``F = nu tr X``.
    * ``linear``: ``F = nu tr X + <b, p> - lam r + c`` (``nu >= 0``, ``lam >= 0``).
    * ``bellman``: ``F = max(nu1 tr X, nu2 tr X)`` with ``nu1, nu2 >= 0``.
    * ``expression``: ``expr`` in ``X11, X12, .., p1.., r, x1.., t`` with
      sampled bounds; ellipticity is checked on samples.
    """
    if family == "zero":
        return FOperator(lambda X, p, r, x, t: np.zeros(np.shape(r)), n, 0.0, 0.0, 0.0, label="zero")
    if family == "constant":
        c = float(params.get("c", 0.0))
        return FOperator(lambda X, p, r, x, t: np.full(np.shape(r), c), n, 0.0, 0.0, 0.0, label="constant", params={"c": c})
    if family == "heat":
        nu = float(params.get("nu", 1.0))
        if nu < 0:
            raise HamiltonianError("heat needs nu >= 0")
        return FOperator(lambda X, p, r, x, t: nu * _trace(X), n, nu, 0.0, 0.0, label="heat", params={"nu": nu})
    if family == "linear":
        nu = float(params.get("nu", 0.0))
        b = np.broadcast_to(np.asarray(params.get("b", 0.0), dtype=float), (n,)).copy()
        lam = float(params.get("lam", 0.0))
        c = float(params.get("c", 0.0))
        if nu < 0 or lam < 0:
            raise HamiltonianError("linear needs nu >= 0 and lam >= 0")

        def lin(X, p, r, x, t):
            return nu * _trace(X) + p @ b - lam * np.asarray(r) + c

        return FOperator(lin, n, nu, float(np.max(np.abs(b))), lam, label="linear",
                         params={"nu": nu, "b": b.tolist(), "lam": lam, "c": c})
    if family == "bellman":
        nu1, nu2 = float(params.get("nu1", 0.5)), float(params.get("nu2", 1.0))
        if min(nu1, nu2) < 0:
            raise HamiltonianError("bellman needs nonnegative diffusions")
        return FOperator(lambda X, p, r, x, t: np.maximum(nu1 * _trace(X), nu2 * _trace(X)),
                         n, max(nu1, nu2), 0.0, 0.0, label="bellman", params={"nu1": nu1, "nu2": nu2})
    if family == "expression":
        return _f_from_expression(params["expr"], n)
    raise HamiltonianError(f"unknown F family {family!r}; expected one of {F_FAMILIES}")


def _f_from_expression(text, n):
    names = [f"X{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    msyms = sp.symbols(names, real=True)
    p, x, t = expressions.symbols(n)
    r = sp.Symbol("r", real=True)
    local = {s.name: s for s in (*msyms, *p, *x, t, r)}
    try:
        import ast

        tree = ast.parse(str(text), mode="eval")
        for node in ast.walk(tree):
            if isinstance(node, ast.Name) and node.id not in local and node.id not in expressions.FUNCTIONS:
                raise ValueError(f"unknown name {node.id!r}")
            if isinstance(node, ast.Call) and getattr(node.func, "id", None) not in expressions.FUNCTIONS:
                raise ValueError("unsupported function")
    except (SyntaxError, ValueError) as exc:
        raise HamiltonianError(f"bad F expression {text!r}: {exc}") from None
    expr = sp.sympify(str(text), locals={**local, **expressions.FUNCTIONS})
    f = expressions.compile_scalar(expr, [*msyms, *p, r, *x, t])

    def call(X, pp, rr, xx, tt):
        X = np.asarray(X, dtype=float)
        pp = np.asarray(pp, dtype=float)
        xx = np.asarray(xx, dtype=float)
        rr = np.asarray(rr, dtype=float)
        flat = X.reshape(X.shape[:-2] + (n * n,))
        return f(*np.moveaxis(flat, -1, 0), *np.moveaxis(pp, -1, 0), rr, *np.moveaxis(xx, -1, 0), tt)

    F = FOperator(call, n, label="expression", params={"expr": str(text)})
    if ellipticity_violation(F) > 1e-12 or monotonicity_violation(F) > 1e-12:
        raise HamiltonianError(f"F expression {text!r} is not degenerate elliptic and r-nonincreasing")
    return F
