"""Monotone splitting solver for ``du = F(D^2u, Du, u, x, t) dt + sum_i H^i(Du, x) dW^i``.

Each time step applies

1. a Hamiltonian substep that follows the piecewise-linear path through its
   sample times, using a Lax-Friedrichs numerical Hamiltonian. Increments
   are split adaptively so that ``sum_k beta_k / dx_k <= 1`` with
   ``beta_k >= sum_i |dW^i| sup |d_{p_k} H^i|``, which keeps the update
   monotone;
2. an explicit Euler step for ``F`` with centred second differences and
   first differences upwinded by the sign of ``dF/dp``; the step must
   satisfy ``dt <= 1 / (2 n L_X / dx^2 + n L_p / dx + L_r)``.

Boundaries copy the edge value outward (Neumann type). A trusted region,
shrinking with the distance information can travel, is reported with the
result. Rough drivers are handled by solving along dyadic piecewise-linear
approximants and reporting successive differences; convergence is never
asserted.

The module also builds the explicit sub- and super-solutions obtained from
the smooth solution operator and restarted blocks of ``S(t, s) 0``.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import hamiltonians, local_solver
from .errors import HamiltonianError, HorizonExceeded, NumericalAbort, PreconditionError, StepRestrictionError
from .grid import Grid, GridField, SmoothDatum, constant

CFL = 0.9
SPEED_SAFETY = 1.05


@dataclass(frozen=True, eq=False)
class PDEProblem:
    """An initial value problem on a uniform grid.

    ``u0`` is a :class:`SmoothDatum`, a callable on node arrays ``(..., n)``
    or an array of node values. ``times`` are the requested output times
    (``0`` and ``T`` are always included). ``lf_speed`` optionally fixes a
    floor for the Lax-Friedrichs coefficients per axis. Without it the
    coefficients adapt to the data, so runs from different data are
    different monotone maps and need not stay ordered. Runs whose floor
    dominates every local speed share one scheme (see :func:`solve_common`).
    """

    F: hamiltonians.FOperator
    H: hamiltonians.HamiltonianSystem
    path: object
    u0: object
    grid: Grid
    T: float
    dt: float
    times: tuple = ()
    lf_speed: tuple = None
    label: str = "problem"

    def initial_values(self):
        u0 = self.u0
        if isinstance(u0, SmoothDatum) or callable(u0):
            vals = np.asarray(u0(self.grid.mesh()), dtype=float)
        else:
            vals = np.asarray(u0, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"initial data of shape {vals.shape} does not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("initial data must be finite")
        return vals

    def output_times(self):
        return np.union1d(np.asarray(self.times, dtype=float), [0.0, self.T])

    def with_(self, **changes):
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return PDEProblem(**kw)

    def digest(self):
        """SHA-256 of everything that determines a run."""
        h = hashlib.sha256()
        meta = {
            "F": [self.F.label, self.F.params],
            "H": [self.H.family, self.H.params, [c.label for c in self.H]],
            "grid": [self.grid.lower, self.grid.upper, self.grid.shape],
            "T": self.T,
            "dt": self.dt,
            "times": self.output_times().tolist(),
            "lf_speed": None if self.lf_speed is None else np.ravel(self.lf_speed).tolist(),
        }
        h.update(json.dumps(meta, sort_keys=True, default=str).encode())
        h.update(np.ascontiguousarray(self.path.times).tobytes())
        h.update(np.ascontiguousarray(self.path.values).tobytes())
        h.update(np.ascontiguousarray(self.initial_values()).tobytes())
        return h.hexdigest()


@dataclass
class SolveResult:
    field: GridField
    trusted: np.ndarray
    manifest: dict


# ---------------------------------------------------------------------------
# finite differences


def _shift(u, axis, k):
    """``u`` shifted by ``k`` nodes along ``axis`` with edge values copied out."""
    n = u.ndim
    pad = [(0, 0)] * n
    pad[axis] = (1, 1)
    e = np.pad(u, pad, mode="edge")
    sl = [slice(None)] * n
    sl[axis] = slice(1 + k, 1 + k + u.shape[axis])
    return e[tuple(sl)]


def one_sided(u, grid):
    """Backward and forward differences, each of shape ``u.shape + (n,)``."""
    h = grid.spacing
    minus = np.stack([(u - _shift(u, k, -1)) / h[k] for k in range(grid.n)], axis=-1)
    plus = np.stack([(_shift(u, k, 1) - u) / h[k] for k in range(grid.n)], axis=-1)
    return minus, plus


def second_differences(u, grid):
    """Centred ``D^2 u`` of shape ``u.shape + (n, n)``."""
    n, h = grid.n, grid.spacing
    out = np.empty(u.shape + (n, n))
    for k in range(n):
        out[..., k, k] = (_shift(u, k, 1) - 2 * u + _shift(u, k, -1)) / h[k] ** 2
        for l in range(k + 1, n):
            pp = _shift(_shift(u, k, 1), l, 1)
            pm = _shift(_shift(u, k, 1), l, -1)
            mp = _shift(_shift(u, k, -1), l, 1)
            mm = _shift(_shift(u, k, -1), l, -1)
            out[..., k, l] = out[..., l, k] = (pp - pm - mp + mm) / (4 * h[k] * h[l])
    return out


def _axis_speeds(H, minus, plus, x):
    """Per component and axis, the max of ``|d_{p_k} H^i|`` over the local stencil range."""
    n = minus.shape[-1]
    mid = 0.5 * (minus + plus)
    speeds = np.zeros((H.m, n))
    for i, h in enumerate(H):
        cands = [np.abs(h.grad_p(mid, x))]
        for k in range(n):
            for side in (minus, plus):
                q = mid.copy()
                q[..., k] = side[..., k]
                cands.append(np.abs(h.grad_p(q, x)))
        speeds[i] = np.max(np.stack(cands), axis=tuple(range(mid.ndim)))
    return speeds


def lax_friedrichs(H, u, grid, dw, x, floor=None):
    """Monotone update for the increment ``dw``, split into as many pieces as needed.

    Returns ``(u_new, pieces, speed)`` where ``speed`` is the largest
    Lax-Friedrichs coefficient used per unit increment.
    """
    dw = np.asarray(dw, dtype=float)
    h = grid.spacing
    remaining = 1.0
    pieces, top = 0, 0.0
    while remaining > 1e-15:
        minus, plus = one_sided(u, grid)
        speeds = _axis_speeds(H, minus, plus, x) * SPEED_SAFETY
        if floor is not None:
            speeds = np.maximum(speeds, np.asarray(floor, dtype=float))
        beta = np.abs(dw * remaining) @ speeds
        load = float(np.sum(beta / h))
        frac = 1.0 if load <= CFL else CFL / load
        piece = remaining * frac
        d = dw * piece
        b = beta * frac
        mid = 0.5 * (minus + plus)
        G = sum(d[i] * comp.value(mid, x) for i, comp in enumerate(H))
        u = u + G + 0.5 * np.sum(b * (plus - minus), axis=-1)
        remaining -= piece
        pieces += 1
        top = max(top, float(np.max(speeds, initial=0.0)))
    return u, pieces, top


def f_step_bound(F, grid, radius=2.0):
    """Largest explicit ``dt`` keeping the F substep monotone."""
    lam, drift, decay = F.bounds(radius=radius)
    n, dx = grid.n, grid.dx
    rate = 2 * n * lam / dx**2 + n * drift / dx + decay
    return np.inf if rate == 0 else 1.0 / rate


def f_substep(F, u, grid, x, t, dt):
    """Explicit Euler step of ``u_t = F(D^2 u, Du, u, x, t)``."""
    if F.label == "zero":
        return u
    X = second_differences(u, grid)
    minus, plus = one_sided(u, grid)
    mid = 0.5 * (minus + plus)
    # upwind each first derivative by the sign of dF/dp_k
    p = mid.copy()
    eps = 1e-6
    for k in range(grid.n):
        e = np.zeros(grid.n)
        e[k] = eps
        slope = F(X, mid + e, u, x, t) - F(X, mid - e, u, x, t)
        p[..., k] = np.where(slope >= 0, plus[..., k], minus[..., k])
    return u + dt * F(X, p, u, x, t)


def _time_mesh(problem):
    """Step boundaries: a uniform ``dt`` mesh refined by the output times."""
    T, dt = problem.T, problem.dt
    base = np.arange(0.0, T, dt)
    return np.union1d(np.append(base, T), problem.output_times())


def solve_smooth(problem, check_step=True):
    """Solve along the piecewise-linear path of ``problem``.

    Raises:
        StepRestrictionError: ``dt`` exceeds the F substep bound.
        NumericalAbort: non-finite values appeared.
    """
    grid = problem.grid
    required = f_step_bound(problem.F, grid)
    if check_step and problem.dt > required * (1 + 1e-12):
        raise StepRestrictionError(
            f"dt = {problem.dt:g} violates the monotone step restriction; need dt <= {required:.6g}",
            required_dt=required,
        )
    if problem.path.m != problem.H.m:
        raise HamiltonianError("path channels and Hamiltonian components differ")
    x = grid.mesh()
    u = problem.initial_values()
    outs = problem.output_times()
    mesh = _time_mesh(problem)
    snaps = {0.0: u.copy()}
    max_pieces, total_pieces, speed = 0, 0, 0.0
    for k in range(mesh.size - 1):
        a, b = mesh[k], mesh[k + 1]
        knots = problem.path.partition(a, b)
        incs = problem.path.increment(knots[:-1], knots[1:])
        for dw in incs:
            if not np.any(dw):
                continue
            u, pieces, top = lax_friedrichs(problem.H, u, grid, dw, x, problem.lf_speed)
            max_pieces = max(max_pieces, pieces)
            total_pieces += pieces
            speed = max(speed, top)
        u = f_substep(problem.F, u, grid, x, a, b - a)
        if not np.all(np.isfinite(u)):
            raise NumericalAbort(f"non-finite values after step {k} (t = {b:g})", step=k)
        if np.any(np.isclose(outs, b, rtol=0, atol=1e-12)):
            snaps[float(outs[np.argmin(np.abs(outs - b))])] = u.copy()
    values = np.stack([snaps[float(t)] for t in outs])
    # characteristics move at most speed * oscillation of each channel
    vals = problem.path.values[problem.path.times <= problem.T + 1e-12]
    travel = speed * float(np.sum(np.ptp(vals, axis=0)))
    lam, drift, _ = problem.F.bounds()
    margin = travel + drift * problem.T + 3.0 * np.sqrt(2.0 * grid.n * lam * problem.T)
    trusted = grid.contains(grid.mesh(), margin=margin)
    manifest = {
        "problem": problem.digest(),
        "grid": {"lower": list(grid.lower), "upper": list(grid.upper), "shape": list(grid.shape)},
        "dt": problem.dt,
        "T": problem.T,
        "steps": int(mesh.size - 1),
        "required_dt": None if np.isinf(required) else required,
        "cfl": {
            "max_pieces_per_increment": max_pieces,
            "total_pieces": total_pieces,
            "max_speed": speed,
            "travel": travel,
        },
        "trust_margin": margin,
    }
    return SolveResult(GridField(grid, outs, values), trusted, manifest)


def _refined(problem):
    """The problem on the grid with halved spacing, halving ``dt`` when the F substep needs it."""
    grid = problem.grid
    fine = Grid(grid.lower, grid.upper, tuple(2 * s - 1 for s in grid.shape))
    dt = problem.dt
    while dt > f_step_bound(problem.F, fine) * (1 + 1e-12):
        dt /= 2
    return problem.with_(grid=fine, dt=dt)


def _gap(coarse, fine):
    """Largest difference at shared nodes inside both trusted regions."""
    sl = tuple(slice(None, None, 2) for _ in coarse.trusted.shape)
    mask = coarse.trusted & fine.trusted[sl]
    gap = np.abs(coarse.field.values - fine.field.values[(slice(None),) + sl])[:, mask]
    return float(np.max(gap)) if gap.size else 0.0


def scheme_tolerance(problem, result=None, floor=1e-8, order_range=(0.5, 2.0)):
    """A posteriori error bound of the scheme at the resolution of ``problem``.

    The problem is re-solved with spacing halved twice. The two successive
    differences ``g1, g2`` give the observed order ``p = log2(g1 / g2)``
    (clipped to ``order_range``) and the extrapolated error ``g1 / (1 - 2^-p)``.
    """
    if isinstance(problem.u0, np.ndarray):
        raise ValueError("scheme_tolerance needs initial data that can be evaluated off the grid")
    if result is None:
        result = solve_smooth(problem)
    half = _refined(problem)
    mid = solve_smooth(half)
    fine = solve_smooth(_refined(half))
    g1, g2 = _gap(result, mid), _gap(mid, fine)
    if g1 <= floor:
        return floor
    p = np.log2(g1 / g2) if g2 > 0 else order_range[1]
    p = float(np.clip(p, *order_range))
    return max(g1 / (1.0 - 2.0**-p), floor)


def solve_common(problems, margin=1.5, attempts=4):
    """Solve several problems with one shared Lax-Friedrichs coefficient.

    Each problem is solved once with adaptive coefficients; all are then
    re-solved with ``lf_speed`` set to ``margin`` times the largest speed
    seen. The floor is raised until no run needs a larger coefficient, so
    the results come from the same monotone map and ordered data stay
    ordered.

    Raises:
        NumericalAbort: no dominating floor was found in ``attempts`` rounds.
    """
    problems = list(problems)
    speed = max(solve_smooth(p).manifest["cfl"]["max_speed"] for p in problems)
    for _ in range(attempts):
        floor = margin * max(speed, 1e-12)
        results = [solve_smooth(p.with_(lf_speed=floor)) for p in problems]
        speed = max(r.manifest["cfl"]["max_speed"] for r in results)
        if speed <= floor:
            return results
    raise NumericalAbort(f"no common Lax-Friedrichs coefficient found (last speed {speed:g})")


def solve_rough(problem, levels=3):
    """Solve along dyadic piecewise-linear approximants of a rough path.

    Level ``j`` (``j = 0 .. levels``) keeps every ``2^(levels - j)``-th
    sample, so the last level is the path itself. ``cauchy`` lists the sup
    differences ``d_k`` of consecutive levels over all output times.
    """
    if levels < 2:
        raise ValueError("solve_rough needs at least two levels")
    path = problem.path
    if (path.times.size - 1) % 2**levels:
        raise ValueError(f"{path.times.size - 1} sample intervals cannot be halved {levels} times")
    results = []
    for j in range(levels + 1):
        approx = path.subsample(2 ** (levels - j))
        results.append(solve_smooth(problem.with_(path=approx)))
    diffs = []
    for a, b in zip(results[:-1], results[1:]):
        mask = a.trusted & b.trusted
        gap = np.abs(a.field.values - b.field.values)[:, mask]
        diffs.append(float(np.max(gap)) if gap.size else float("nan"))
    decreasing = all(d1 > d2 for d1, d2 in zip(diffs[:-1], diffs[1:]))
    finest = results[-1]
    report = {
        "levels": levels,
        "samples": [int(path.subsample(2 ** (levels - j)).times.size) for j in range(levels + 1)],
        "cauchy": diffs,
        "decreasing": decreasing,
        "ratio_last_first": diffs[-1] / diffs[0] if diffs[0] > 0 else None,
        "flag": None if decreasing else "successive differences are not decreasing",
    }
    finest.manifest["cauchy"] = report
    return finest, report


# ---------------------------------------------------------------------------
# explicit sub- and super-solutions


@dataclass
class SubSuperPair:
    """Sub-solution ``lower`` and super-solution ``upper`` with their constants."""

    lower: GridField
    upper: GridField
    trusted: np.ndarray
    h: float
    h0: float
    R: float
    R0: float
    C_lower: float
    C_upper: float
    C0_lower: float
    C0_upper: float
    M_lower: list = field(default_factory=list)
    M_upper: list = field(default_factory=list)
    block_starts: list = field(default_factory=list)
    samples: int = 0

    def constants(self):
        return {
            "h": self.h,
            "h0": self.h0,
            "R": self.R,
            "R0": self.R0,
            "C_lower": self.C_lower,
            "C_upper": self.C_upper,
            "C0_lower": self.C0_lower,
            "C0_upper": self.C0_upper,
            "M_lower": self.M_lower,
            "M_upper": self.M_upper,
            "block_starts": self.block_starts,
            "samples": self.samples,
        }


def c2_norm(snaps):
    """``sup_t (sup|Phi| + sup|D Phi| + sup|D^2 Phi|)`` over trusted nodes."""
    best = 0.0
    for s in snaps:
        m = s.trusted
        val = (
            np.max(np.abs(s.phi[m]), initial=0.0)
            + np.max(np.linalg.norm(s.dphi[m], axis=-1), initial=0.0)
            + np.max(np.linalg.norm(s.d2phi[m], axis=(-2, -1)), initial=0.0)
        )
        best = max(best, float(val))
    return best


def _f_range(F, R, grid, times, samples, seed):
    nodes = grid.nodes()
    every = max(1, nodes.shape[0] // 16)
    lo, hi, count = hamiltonians.f_extrema(F, R, nodes[::every], times, samples=samples, seed=seed)
    return lo, hi, count


def build_sub_super(problem, phi, theta_inv=local_solver.THETA_INV, samples=2000, seed=0, mode="auto", step=None):
    """Explicit sub/super-solutions on the output times of ``problem``.

    On ``[0, h]``: ``lower = S(t, 0) phi + C t`` and ``upper = S(t, 0) phi + C' t``
    with ``C = min(inf F, 0)`` and ``C' = max(sup F, 0)`` over the ball
    ``|X| + |p| + |r| <= R``, ``R = sup ||S(t, 0) phi||_{C^2}``. Later blocks
    start at ``s_k = h + k h0`` from ``S(t, s_k) 0``, shifted by the running
    constants ``M_k`` and drifting with ``C0`` (resp. ``C0'``).
    """
    grid = problem.grid
    times = problem.output_times()
    path, H, F = problem.path, problem.H, problem.F
    rep = local_solver.horizon(H, path, phi, 0.0, grid, theta_inv, t_max=problem.T, mode=mode, step=step)
    h = min(rep.h, problem.T)
    if h <= 0:
        raise PreconditionError(f"zero horizon for the initial datum ({rep.diagnostic})")
    index = {float(t): i for i, t in enumerate(times)}
    lower = np.full((times.size,) + grid.shape, np.nan)
    upper = np.full_like(lower, np.nan)
    trusted = np.ones(grid.shape, dtype=bool)

    # first block: the smooth solution itself
    first = np.union1d(times[times <= h + 1e-12], [h])
    snaps = local_solver.apply_times(H, path, phi, 0.0, first, grid, theta_inv, mode, step)
    R = c2_norm(snaps)
    lo, hi, count = _f_range(F, R, grid, first, samples, seed)
    C, Cu = min(lo, 0.0), max(hi, 0.0)
    for s in snaps:
        trusted &= s.trusted
        if s.t in index:
            lower[index[s.t]] = s.phi + C * s.t
            upper[index[s.t]] = s.phi + Cu * s.t
    end_lower, end_upper = snaps[-1].phi + C * h, snaps[-1].phi + Cu * h

    # restarted blocks of S(t, s) 0
    h0, R0, C0, C0u = 0.0, 0.0, 0.0, 0.0
    Ml, Mu, starts = [], [], []
    if h < problem.T:
        zero = constant(0.0, grid.n)
        h0 = problem.T - h
        while True:
            starts = [float(s) for s in np.arange(h, problem.T - 1e-12, h0)]
            try:
                blocks = []
                for s in starts:
                    e = min(s + h0, problem.T)
                    ts = np.union1d(times[(times > s + 1e-12) & (times <= e + 1e-12)], [e])
                    blocks.append((s, local_solver.apply_times(H, path, zero, s, ts, grid, theta_inv, mode, step)))
                break
            except HorizonExceeded:
                h0 /= 2
                if h0 < 1e-6:
                    raise PreconditionError("no positive restart horizon for the zero datum") from None
        R0 = max(c2_norm(b) for _, b in blocks)
        lo0, hi0, c0 = _f_range(F, R0, grid, times[times > h], samples, seed)
        count += c0
        C0, C0u = min(lo0, 0.0), max(hi0, 0.0)
        for s, block in blocks:
            Mk = float(np.max(np.maximum(-end_lower[trusted], 0.0), initial=0.0))
            Mku = float(np.max(np.maximum(end_upper[trusted], 0.0), initial=0.0))
            Ml.append(Mk)
            Mu.append(Mku)
            for sn in block:
                trusted &= sn.trusted
                lo_t = sn.phi - Mk + C0 * (sn.t - s)
                up_t = sn.phi + Mku + C0u * (sn.t - s)
                if sn.t in index:
                    lower[index[sn.t]], upper[index[sn.t]] = lo_t, up_t
            end_lower, end_upper = lo_t, up_t
    return SubSuperPair(
        lower=GridField(grid, times, lower),
        upper=GridField(grid, times, upper),
        trusted=trusted,
        h=float(h),
        h0=float(h0),
        R=R,
        R0=R0,
        C_lower=C,
        C_upper=Cu,
        C0_lower=C0,
        C0_upper=C0u,
        M_lower=Ml,
        M_upper=Mu,
        block_starts=starts,
        samples=int(count),
    )


# ---------------------------------------------------------------------------
# oracles


def heat_oracle(x, t, nu=1.0):
    """Solution of ``u_t = nu u_xx`` from ``exp(-x^2)`` (any dimension, product form)."""
    x = np.asarray(x, dtype=float)
    s = 1.0 + 4.0 * nu * t
    return np.prod(s**-0.5 * np.exp(-(x**2) / s), axis=-1)


def hopf_lax(u0_values, nodes, x, t):
    """``sup_y [u0(y) - |x - y|^2 / (2 t)]`` by brute force over ``nodes``."""
    if t == 0:
        raise ValueError("Hopf-Lax needs t > 0")
    x = np.atleast_2d(x)
    d2 = np.sum((x[:, None, :] - nodes[None, :, :]) ** 2, axis=-1)
    return np.max(u0_values[None, :] - d2 / (2.0 * t), axis=1)


def hopf_lax_path(u0_values, nodes, increments):
    """Exact solution of ``du = 1/2 |Du|^2 dW`` along a piecewise-linear path.

    Each monotone piece is a Hopf-Lax sup (``dW > 0``) or inf (``dW < 0``)
    over ``nodes``. ``increments`` has shape ``(k, 1)`` or ``(k,)``. Returns
    the values after every piece, shape ``(k + 1, len(nodes))``.
    """
    nodes = np.atleast_2d(nodes)
    d2 = np.sum((nodes[:, None, :] - nodes[None, :, :]) ** 2, axis=-1)
    u = np.asarray(u0_values, dtype=float)
    out = [u]
    for a in np.ravel(increments):
        if a > 0:
            u = np.max(u[None, :] - d2 / (2.0 * a), axis=1)
        elif a < 0:
            u = np.min(u[None, :] + d2 / (2.0 * -a), axis=1)
        out.append(u)
    return np.stack(out)
