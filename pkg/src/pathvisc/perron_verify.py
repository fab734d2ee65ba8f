"""Numerical checks of the Perron machinery on grid fields.

A grid field ``u`` (sampled at output times) is tested against pairs
``(phi, psi)`` of a spatial test datum and a time function. Where
``u - S(t, t0) phi - psi`` has its discrete maximum inside the probe window
the sub-solution inequality

    psi'(t*) <= F(D^2 phi', D phi', u, x*, t*),   phi' = S(t*, t0) phi

is evaluated (reverse everything for super-solutions). Finite probe sets
only ever give coverage, never a certificate for all test functions.

The module also builds the local bump ``w_kappa`` that raises a
sub-solution near a point where it fails the super-solution test, together
with a certificate of the quantitative inequalities used to show that the
bump is again a sub-solution.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import characteristics, local_solver
from .errors import HorizonExceeded, MeshMismatch, PreconditionError
from .grid import GridDatum, GridField, SmoothDatum, quadratic

FAILURE_MARGIN_FACTOR = 10.0


@dataclass(frozen=True, eq=False)
class TestFunctionProbe:
    """A test pair ``(phi, psi)`` anchored at ``(x0, t0)``.

    ``psi(t) = c0 + c1 (t - t0) + c2 (t - t0)^2``. The window is the ball
    ``|x - x0| <= r`` times ``|t - t0| < h``.
    """

    __test__ = False

    x0: np.ndarray
    t0: float
    phi: object
    psi: tuple = (0.0, 0.0, 0.0)
    r: float = 0.5
    h: float = 0.1
    label: str = "probe"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        object.__setattr__(self, "psi", tuple(float(c) for c in self.psi))

    def psi_value(self, t):
        c0, c1, c2 = self.psi
        d = np.asarray(t) - self.t0
        return c0 + c1 * d + c2 * d**2

    def psi_prime(self, t):
        _, c1, c2 = self.psi
        return c1 + 2.0 * c2 * (np.asarray(t) - self.t0)

    def to_dict(self):
        return {
            "x0": self.x0.tolist(),
            "t0": self.t0,
            "psi": list(self.psi),
            "r": self.r,
            "h": self.h,
            "phi": getattr(self.phi, "label", "custom"),
            "label": self.label,
        }


@dataclass
class SubsolutionReport:
    """Per-probe outcomes and the largest violation above the slack."""

    sense: str
    tol: float
    probes: list
    max_violation: float
    violations: int
    interior: int

    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {
            "sense": self.sense,
            "tol": self.tol,
            "max_violation": self.max_violation,
            "violations": self.violations,
            "interior": self.interior,
            "coverage": f"{self.interior} of {len(self.probes)} probes touched inside their window",
            "probes": self.probes,
        }


def _window_times(u, probe):
    keep = np.abs(u.times - probe.t0) < probe.h - 1e-12
    if not np.any(keep):
        raise PreconditionError(f"probe {probe.label} has no output times in its window")
    return np.flatnonzero(keep)


def _evolve(probe, times, grid, H, path, theta_inv, mode, step):
    try:
        return local_solver.apply_times(H, path, probe.phi, probe.t0, times, grid, theta_inv, mode, step)
    except HorizonExceeded as exc:
        raise HorizonExceeded(
            f"probe window of {probe.label} exceeds the S horizon: {exc}", exc.min_det, exc.time
        ) from None


def check_subsolution(
    u,
    probes,
    F,
    H,
    path,
    tol=1e-6,
    trusted=None,
    sense="sub",
    theta_inv=local_solver.THETA_INV,
    mode="auto",
    step=None,
):
    """Test ``u`` against each probe of the definition of (sub/super) solutions.

    Args:
        u: a :class:`GridField`.
        probes: iterable of :class:`TestFunctionProbe`.
        F, H, path: the equation.
        tol: tolerance added to the per-probe discretization slack.
        trusted: optional boolean mask of nodes where ``u`` is reliable.
        sense: ``"sub"`` or ``"super"``.

    Returns:
        A :class:`SubsolutionReport`. A violation is
        ``psi'(t*) - F(...)`` (sub) or ``F(...) - psi'(t*)`` (super) when the
        discrete extremum is inside the window; it counts when it exceeds
        ``tol`` plus the slack ``|psi''| dt + L_p dx |D^2 phi'|`` that a
        discrete argmax can cost.
    """
    if sense not in ("sub", "super"):
        raise ValueError("sense must be 'sub' or 'super'")
    sign = 1.0 if sense == "sub" else -1.0
    grid = u.grid
    mask = np.ones(grid.shape, dtype=bool) if trusted is None else np.asarray(trusted, dtype=bool)
    nodes = grid.mesh()
    _, drift, _ = F.bounds()
    dx = float(np.max(grid.spacing))
    rows, worst, count, inside = [], -np.inf, 0, 0
    for probe in probes:
        idx = _window_times(u, probe)
        snaps = _evolve(probe, u.times[idx], grid, H, path, theta_inv, mode, step)
        dist = np.linalg.norm(nodes - probe.x0, axis=-1)
        ball = (dist <= probe.r) & mask
        best, where = -np.inf, None
        for k, snap in zip(idx, snaps):
            ok = ball & snap.trusted
            if not np.any(ok):
                continue
            g = sign * (u.values[k] - snap.phi - probe.psi_value(u.times[k]))
            g = np.where(ok, g, -np.inf)
            j = int(np.argmax(g))
            if g.flat[j] > best:
                best, where = float(g.flat[j]), (k, j, snap)
        row = dict(probe.to_dict())
        if where is None:
            row.update(interior=False, reason="no trusted nodes in window")
            rows.append(row)
            continue
        k, j, snap = where
        pos = np.unravel_index(j, grid.shape)
        x_star = nodes[pos]
        first = k == idx[0] and len(idx) > 1
        # a maximum at the latest window time counts (half-open windows);
        # one at the earliest time or on the spatial rim does not
        rim = dist[pos] > probe.r - dx
        interior = not rim and not first
        row.update(x_star=x_star.tolist(), t_star=float(u.times[k]), interior=bool(interior))
        if interior:
            inside += 1
            t_star = u.times[k]
            X = snap.d2phi[pos]
            p = snap.dphi[pos]
            fval = float(F(X[None], p[None], np.array([u.values[k][pos]]), x_star[None], t_star)[0])
            value = sign * (float(probe.psi_prime(t_star)) - fval)
            gaps = np.diff(u.times)
            local = float(np.max(gaps[max(k - 1, 0):k + 1])) if gaps.size else 0.0
            slack = 2.0 * abs(probe.psi[2]) * local + drift * dx * float(np.max(np.abs(X), initial=0.0))
            row.update(violation=value, slack=slack, flagged=bool(value > tol + slack))
            worst = max(worst, value - slack)
            count += int(value > tol + slack)
        rows.append(row)
    return SubsolutionReport(sense, tol, rows, float(max(worst, 0.0)) if inside else 0.0, count, inside)


def random_probes(grid, times, count, seed=0, trusted=None, r=0.5, h=0.15, curvature=2.0, slope=1.0, data=()):
    """Probes with anchors on trusted nodes, quadratic or builtin ``phi`` and affine plus quadratic ``psi``.

    ``data`` is an optional sequence of extra :class:`SmoothDatum` objects
    that are mixed into the draws.
    """
    rng = np.random.default_rng(seed)
    nodes = grid.mesh()
    mask = np.ones(grid.shape, dtype=bool) if trusted is None else np.asarray(trusted, dtype=bool)
    # keep the whole window on trusted nodes
    dist_ok = grid.contains(nodes, margin=r)
    pool = nodes[mask & dist_ok]
    if pool.shape[0] == 0:
        raise PreconditionError("no trusted anchors for probes")
    times = np.asarray(times, dtype=float)
    inner = times[(times > times[0]) & (times < times[-1])]
    if inner.size == 0:
        inner = times
    probes = []
    for i in range(count):
        x0 = pool[rng.integers(pool.shape[0])]
        t0 = float(inner[rng.integers(inner.size)])
        if data and rng.random() < 0.3:
            phi = data[rng.integers(len(data))].translated(x0)
        else:
            A = rng.uniform(0.2, curvature) * np.eye(grid.n)
            b = rng.uniform(-slope, slope, grid.n)
            phi = quadratic(A, b, 0.0, x0)
        psi = (float(rng.uniform(-1, 1)), float(rng.uniform(-slope, slope)), float(rng.uniform(0.0, 4.0)))
        probes.append(TestFunctionProbe(x0, t0, phi, psi, r=r, h=h, label=f"probe{i}"))
    return probes


# ---------------------------------------------------------------------------
# envelopes


def envelope(subs):
    """Pointwise maximum of a finite family of fields on one mesh."""
    subs = list(subs)
    if not subs:
        raise ValueError("envelope of an empty family")
    first = subs[0]
    for s in subs[1:]:
        if not first.same_mesh(s):
            raise MeshMismatch("envelope members live on different meshes")
    return GridField(first.grid, first.times, np.max(np.stack([s.values for s in subs]), axis=0))


def envelope_check(subs, probes, F, H, path, tol=1e-6, trusted=None, **kwargs):
    """The envelope plus sub-solution reports for it and for every member."""
    env = envelope(subs)
    members = [check_subsolution(s, probes, F, H, path, tol, trusted, **kwargs) for s in subs]
    return env, check_subsolution(env, probes, F, H, path, tol, trusted, **kwargs), members


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonReport:
    times: np.ndarray
    excess: np.ndarray
    initial: float
    tol: float
    exceeded: bool
    first_exceedance: float = None

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "excess": self.excess.tolist(),
            "initial": self.initial,
            "tol": self.tol,
            "exceeded": self.exceeded,
            "first_exceedance": self.first_exceedance,
        }


def compare(u, v, tol=1e-9, trusted=None):
    """``t -> sup_x (u - v)_+`` and whether it ever exceeds its value at the first time."""
    u.require_same_mesh(v)
    mask = np.ones(u.grid.shape, dtype=bool) if trusted is None else np.asarray(trusted, dtype=bool)
    diff = (u.values - v.values)[:, mask]
    excess = np.max(np.maximum(diff, 0.0), axis=1, initial=0.0)
    over = excess > excess[0] + tol
    first = float(u.times[np.argmax(over)]) if np.any(over) else None
    return ComparisonReport(u.times.copy(), excess, float(excess[0]), tol, bool(np.any(over)), first)


# ---------------------------------------------------------------------------
# bump construction


@dataclass(frozen=True)
class BumpSpec:
    """Constants ``gamma``, ``r``, ``s`` of the bump; ``delta`` and the collar slacks follow."""

    gamma: float
    r: float
    s: float

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise PreconditionError("gamma must lie in (0, 1)")
        if self.r <= 0 or self.s <= 0:
            raise PreconditionError("r and s must be positive")

    @property
    def delta(self):
        return self.gamma * min(self.r**2 / 16.0, self.s / 8.0)

    @property
    def time_slack(self):
        return self.gamma * self.s / 8.0

    @property
    def space_slack(self):
        return self.gamma * self.r**2 / 16.0


def _node(grid, x):
    return tuple(int(i) for i in grid.index_of(np.asarray(x, dtype=float)))


def _cutoff(y, r):
    """``chi(|y|)`` equal to 1 on ``|y| <= r`` and 0 on ``|y| >= 2r`` (C^2 quintic step)."""
    n = y.shape[-1]
    q = np.linalg.norm(y, axis=-1)
    s = np.clip((q - r) / r, 0.0, 1.0)
    step = 6 * s**5 - 15 * s**4 + 10 * s**3
    d1 = 30 * s**2 * (1 - s) ** 2 / r
    d2 = 60 * s * (1 - s) * (1 - 2 * s) / r**2
    qs = np.where(q > 0, q, 1.0)
    e = y / qs[..., None]
    outer = e[..., :, None] * e[..., None, :]
    chi = 1.0 - step
    grad = -d1[..., None] * e
    hess = -d2[..., None, None] * outer - (d1 / qs)[..., None, None] * (np.eye(n) - outer)
    return chi, grad, hess


def _datum_arrays(phi, grid):
    nodes = grid.mesh()
    if isinstance(phi, GridDatum):
        if phi.grid != grid:
            raise MeshMismatch("grid datum does not live on the bump grid")
        return phi.value, phi.grad, phi.hess
    return phi.value(nodes), phi.grad(nodes), phi.hess(nodes)


def modified_datum(phi, grid, x0, gamma, r):
    """``eta`` equal to ``phi(x0) + <p, y> + <X y, y>/2 - gamma |y|^2`` on ``B_r(x0)`` and ``<= phi``.

    Built as ``phi - chi (phi - Q)`` with a C^2 cutoff ``chi`` supported in
    ``B_{2r}``; ``eta <= phi`` holds wherever ``phi - Q >= 0`` on that ball,
    which is returned as the second value (its minimum).
    """
    v, g, hs = _datum_arrays(phi, grid)
    k = _node(grid, x0)
    p, X, c = g[k], hs[k], v[k]
    y = grid.mesh() - x0
    Q = c + y @ p + 0.5 * np.einsum("...i,ij,...j->...", y, X, y) - gamma * np.sum(y * y, axis=-1)
    DQ = p + y @ X.T - 2 * gamma * y
    D2Q = X - 2 * gamma * np.eye(grid.n)
    m, dm, d2m = v - Q, g - DQ, hs - D2Q
    chi, dchi, d2chi = _cutoff(y, r)
    value = v - chi * m
    grad = g - chi[..., None] * dm - m[..., None] * dchi
    hess = (
        hs
        - chi[..., None, None] * d2m
        - dchi[..., :, None] * dm[..., None, :]
        - dm[..., :, None] * dchi[..., None, :]
        - m[..., None, None] * d2chi
    )
    support = np.linalg.norm(y, axis=-1) < 2 * r
    gap = float(np.min(m[support])) if np.any(support) else 0.0
    return GridDatum(grid, value, grad, hess, "eta_hat"), gap


def _omega1(phi, grid, x0, sigma):
    v, g, hs = _datum_arrays(phi, grid)
    k = _node(grid, x0)
    y = grid.mesh() - x0
    q2 = np.sum(y * y, axis=-1)
    rem = v - v[k] - y @ g[k] - 0.5 * np.einsum("...i,ij,...j->...", y, hs[k], y)
    ball = (q2 <= sigma**2) & (q2 > 0)
    return float(np.max(np.abs(rem[ball]) / q2[ball], initial=0.0))


@dataclass
class BumpCertificate:
    gamma: float
    r: float
    s: float
    kappa: float
    delta: float
    time_slack: float
    space_slack: float
    omega1: float
    omega2: float
    R: float
    rho: float
    failure: float
    margin: float
    local_min_gap: float
    eta_gap: float
    clauses: dict = field(default_factory=dict)
    collar_minima: dict = field(default_factory=dict)
    counterexamples: dict = field(default_factory=dict)

    def passed(self):
        return all(self.clauses.values())

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def bump(
    w,
    probe,
    spec,
    kappa,
    F,
    H,
    path,
    tol=1e-6,
    margin=None,
    trusted=None,
    pad=None,
    theta_inv=local_solver.THETA_INV,
    mode="auto",
    step=None,
):
    """Raise the sub-solution ``w`` near a point where it fails the super-solution test.

    ``probe`` must touch ``w`` from below at its anchor (``w - S phi - psi``
    minimal there on the window) with ``psi'(t0) - F(D^2 phi, D phi, w, x0, t0) < -margin``.
    ``probe.phi`` is a :class:`SmoothDatum` or a :class:`GridDatum` on
    ``w.grid.padded(pad)``.

    Returns:
        ``(w_kappa, certificate)``.

    Raises:
        PreconditionError: the probe does not certify strict failure, the
            constants violate their restrictions, or ``kappa`` is too small.
    """
    grid = w.grid
    gamma, r, s = spec.gamma, spec.r, spec.s
    margin = FAILURE_MARGIN_FACTOR * tol if margin is None else margin
    if not (r < kappa and s < kappa and probe.h < kappa):
        raise PreconditionError(
            f"kappa = {kappa:g} is smaller than the admissible radii (r = {r:g}, s = {s:g}, h = {probe.h:g})"
        )
    if s >= probe.h:
        raise PreconditionError(f"s = {s:g} must be below the probe horizon h = {probe.h:g}")
    mask = np.ones(grid.shape, dtype=bool) if trusted is None else np.asarray(trusted, dtype=bool)
    x0, t0 = probe.x0, probe.t0
    k0 = w.time_index(t0)
    if isinstance(probe.phi, GridDatum):
        big = probe.phi.grid
    else:
        big = grid.padded(pad if pad is not None else 0)
    v, g, hs = _datum_arrays(probe.phi, big)
    a = float(probe.psi_prime(t0))
    node = _node(big, x0)
    if not np.allclose(big.mesh()[node], x0):
        raise PreconditionError("the anchor must be a grid node")
    w0 = float(w.values[k0][_node(grid, x0)])
    failure = a - float(F(hs[node][None], g[node][None], np.array([w0]), x0[None], t0)[0])
    if not failure < -margin:
        raise PreconditionError(
            f"the probe does not certify strict failure of the super-solution test "
            f"(psi' - F = {failure:.3g}, margin {margin:.3g})"
        )

    # evolve phi and eta on the window
    window = np.flatnonzero(np.abs(w.times - t0) < probe.h - 1e-12)
    ts = w.times[window]
    eta, eta_gap = modified_datum(probe.phi, big, x0, gamma, r)
    if eta_gap < -tol:
        raise PreconditionError(f"modified datum exceeds phi near the anchor (gap {eta_gap:.3g}); shrink r")
    phi_d = probe.phi if isinstance(probe.phi, GridDatum) else GridDatum(big, v, g, hs, "phi")
    try:
        S_phi = local_solver.apply_times(H, path, phi_d, t0, ts, grid, theta_inv, mode, step)
        S_eta = local_solver.apply_times(H, path, eta, t0, ts, grid, theta_inv, mode, step)
    except HorizonExceeded as exc:
        raise PreconditionError(f"probe window exceeds the S horizon: {exc}") from None

    # spec restrictions
    omega1 = _omega1(probe.phi if isinstance(probe.phi, GridDatum) else phi_d, big, x0, r)
    omega2 = abs(probe.psi[2]) * s
    R = max(
        float(np.nanmax(np.abs(snap.dphi[snap.trusted]), initial=0.0)) for snap in S_phi + S_eta
    )
    rho = characteristics.deviation_modulus(H, path, R, t0, s, mode=mode, step=step)
    problems = []
    if omega1 > gamma / 2:
        problems.append(f"omega1(r) = {omega1:.3g} > gamma/2")
    if omega2 > gamma / 2:
        problems.append(f"omega2(s) = {omega2:.3g} > gamma/2")
    if rho > r / 8:
        problems.append(f"rho_R(s) = {rho:.3g} > r/8 = {r / 8:.3g}")
    if problems:
        raise PreconditionError("bump constants violate their restrictions: " + "; ".join(problems))

    nodes = grid.mesh()
    dist = np.linalg.norm(nodes - x0, axis=-1)
    # the probe must touch from below on the window
    touch = []
    for k, sp in zip(window, S_phi):
        ok = mask & sp.trusted & (dist < probe.r)
        g_k = w.values[k] - sp.phi - probe.psi_value(w.times[k])
        touch.append(np.min(g_k[ok], initial=np.inf))
    base = w0 - v[node] - probe.psi_value(t0)
    local_min_gap = float(min(touch) - base)
    if local_min_gap < -tol:
        raise PreconditionError(f"the probe does not touch w from below (gap {local_min_gap:.3g})")

    delta = spec.delta
    w_hat = np.full(w.values.shape, np.nan)
    for k, se in zip(window, S_eta):
        dt = w.times[k] - t0
        w_hat[k] = w0 + delta + se.phi - v[node] + a * dt - gamma * np.sqrt(dt**2 + delta**2)
    tt = np.abs(w.times - t0)[:, None]
    tt = tt.reshape((-1,) + (1,) * grid.n)
    N = (dist[None] < 7 * r / 8) & (tt < s)
    if np.any(N & ~np.isfinite(w_hat)):
        raise PreconditionError("the evolved modified datum is not trusted on the bump support")
    w_k = np.where(N, np.maximum(np.where(N, w_hat, -np.inf), w.values), w.values)

    gap = w.values - w_hat
    time_collar = (dist[None] < 7 * r / 8) & (tt > s / 2) & (tt < s) & mask[None]
    space_collar = (dist[None] > 5 * r / 8) & (dist[None] < 7 * r / 8) & (tt < s) & mask[None]
    Nrs = (dist[None] < r) & (tt < s) & mask[None]
    Nk = (dist[None] < kappa) & (tt < kappa)

    def minimum(sel):
        if not np.any(sel):
            return np.inf, None
        vals = np.where(sel, gap, np.inf)
        j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        return float(vals[j]), {"t": float(w.times[j[0]]), "x": nodes[j[1:]].tolist()}

    tmin, tat = minimum(time_collar)
    smin, sat = minimum(space_collar)
    raise_gap = float(np.max((w_k - w.values)[Nrs], initial=0.0))
    clauses = {
        "above": bool(np.all(w_k >= w.values)),
        "raised": bool(raise_gap >= (1 - gamma) * delta - tol and raise_gap > 0),
        "local": bool(np.array_equal(w_k[~Nk], w.values[~Nk])),
        "collars": bool(tmin >= spec.time_slack - tol and smin >= spec.space_slack - tol),
    }
    counter = {}
    if tmin < spec.time_slack - tol:
        counter["time_collar"] = tat
    if smin < spec.space_slack - tol:
        counter["space_collar"] = sat
    cert = BumpCertificate(
        gamma=gamma,
        r=r,
        s=s,
        kappa=kappa,
        delta=delta,
        time_slack=spec.time_slack,
        space_slack=spec.space_slack,
        omega1=omega1,
        omega2=omega2,
        R=R,
        rho=float(rho),
        failure=failure,
        margin=margin,
        local_min_gap=local_min_gap,
        eta_gap=eta_gap,
        clauses=clauses,
        collar_minima={"time": tmin, "space": smin, "raise": raise_gap},
        counterexamples=counter,
    )
    return GridField(grid, w.times, w_k), cert
