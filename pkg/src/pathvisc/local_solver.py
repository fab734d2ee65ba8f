"""The local smooth solution operator ``S(t, t0) phi = Z o X^{-1}`` on a grid.

Grid nodes of a (padded) flow grid are pushed forward along characteristics
started from ``(x, D phi(x))``. For each query node ``y`` the preimage
``x*`` with ``X(x*, t) = y`` is found by seeding with the nearest forward
image and running damped Newton steps on the multilinear interpolant of
``X`` with the interpolated analytic Jacobian. Then

* ``Phi(y) = Z(x*)`` (interpolated),
* ``D Phi(y) = P(x*)`` (interpolated),
* ``D^2 Phi`` comes from centred differences of ``D Phi``.

Everything is second order in the grid spacing as long as the forward map
stays uniformly invertible, which is monitored through ``det D_x X``.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import characteristics
from .errors import HorizonExceeded, InversionError
from .grid import Grid, GridDatum, SmoothDatum, hessian_from_gradient

THETA_INV = 0.1
NEWTON_ITERATIONS = 25
NEWTON_TOL = 1e-13
ANALYTIC_STEPS = 5


@dataclass(frozen=True, eq=False)
class LocalSolution:
    """One snapshot of ``Phi(., t) = S(t, t0) phi`` on ``grid``.

    ``trusted`` flags nodes whose preimage was found inside the flow grid;
    values elsewhere are NaN.
    """

    grid: Grid
    t0: float
    t: float
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    det: np.ndarray
    trusted: np.ndarray
    preimage: np.ndarray
    min_det: float
    horizon: float = None

    def as_datum(self, label="S phi"):
        return GridDatum(self.grid, self.phi, self.dphi, self.d2phi, label)


@dataclass
class HorizonReport:
    """Outcome of :func:`horizon`; ``h`` is zero when even one sample fails."""

    t0: float
    h: float
    theta_inv: float
    min_det: float
    forward_failure: float = None
    backward_failure: float = None
    diagnostic: str = ""

    def to_dict(self):
        return {"t0": self.t0, "h": self.h, "theta_inv": self.theta_inv, "min_det": self.min_det}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# helpers


def _datum_at(phi, nodes):
    """``(value, grad, hess)`` of a smooth datum at flat ``nodes``."""
    return phi.value(nodes), phi.grad(nodes), phi.hess(nodes)


def _flow_grid(H, path, phi, t0, times, grid, pad, mode, step):
    """The grid whose nodes are flowed, padded to cover all preimages."""
    if isinstance(phi, GridDatum):
        return phi.grid
    if pad is None:
        sigma = float(np.max(np.abs(np.asarray(times) - t0)))
        if sigma == 0:
            pad = 1
        else:
            rho, cells = 0.0, 1
            for _ in range(2):
                nodes = grid.padded(cells).nodes()
                R = float(np.max(np.linalg.norm(phi.grad(nodes), axis=-1), initial=0.0))
                every = max(1, nodes.shape[0] // 64)
                rho = characteristics.deviation_modulus(
                    H, path, max(R, 1e-12), t0, sigma, x_points=nodes[::every], mode=mode, step=step
                )
                cells = int(np.ceil(1.25 * rho / grid.dx)) + 2
            pad = cells
    return grid.padded(int(pad))


def _flow_nodes(H, path, phi, flow_grid, t0, times, mode, step):
    nodes = flow_grid.nodes()
    if isinstance(phi, GridDatum):
        v, g, h = phi.value.reshape(-1), phi.grad.reshape(-1, phi.n), phi.hess.reshape(-1, phi.n, phi.n)
    else:
        v, g, h = _datum_at(phi, nodes)
    states = characteristics.flow_times(H, path, nodes, g, t0, times, mode, step, hess=h)
    return nodes, v, states


def _relevant(grid, flow_grid, X):
    """Flow nodes whose image lands within one cell of the query box."""
    h = grid.spacing
    lo = np.array(grid.lower) - h
    hi = np.array(grid.upper) + h
    return np.all((X >= lo) & (X <= hi), axis=-1)


def invert(flow_grid, X, JX, queries, seed_tree=None):
    """Solve ``X_hat(x) = y`` for every query ``y``.

    The first Newton steps use the interpolated analytic Jacobian, later
    ones the derivative of the multilinear interpolant itself, which keeps
    the last iterations quadratically convergent on coarse grids.

    Args:
        flow_grid: grid carrying the forward map.
        X: forward images at flow nodes, shape ``flow_grid.shape + (n,)``.
        JX: Jacobians at flow nodes, shape ``flow_grid.shape + (n, n)``.
        queries: points ``(Q, n)``.

    Returns:
        ``(preimages, converged, inside)``.
    """
    n = flow_grid.n
    nodes = flow_grid.nodes()
    tree = seed_tree or cKDTree(X.reshape(-1, n))
    _, nearest = tree.query(queries)
    x = nodes[nearest].copy()
    scale = 1.0 + np.abs(queries).max(axis=-1)

    def residual(pts, q):
        return flow_grid.interpolate(X, pts) - q

    res = residual(x, queries)
    norm = np.linalg.norm(res, axis=-1)
    done = norm <= NEWTON_TOL * scale
    for it in range(NEWTON_ITERATIONS):
        active = ~done
        if not active.any():
            break
        if it < ANALYTIC_STEPS:
            J = flow_grid.interpolate(JX, x[active])
        else:
            # exact derivative of the interpolated map for the final digits
            J = flow_grid.interpolate_gradient(X, x[active])
        try:
            dx = np.linalg.solve(J, res[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J.reshape(-1, n), res[active].reshape(-1), rcond=None)[0].reshape(-1, n)
        lam = np.ones(dx.shape[0])
        cur = norm[active]
        best = x[active] - dx
        q = queries[active]
        best_res = residual(best, q)
        best_norm = np.linalg.norm(best_res, axis=-1)
        for _ in range(10):
            worse = best_norm > cur
            if not worse.any():
                break
            lam[worse] *= 0.5
            cand = x[active][worse] - lam[worse, None] * dx[worse]
            cres = residual(cand, q[worse])
            best[worse], best_res[worse] = cand, cres
            best_norm[worse] = np.linalg.norm(cres, axis=-1)
        x[active], res[active], norm[active] = best, best_res, best_norm
        done = norm <= NEWTON_TOL * scale
    inside = flow_grid.contains(x)
    return x, done, inside


def _snapshot(grid, flow_grid, nodes, v, state, t0, t, theta_inv, check_horizon):
    shape = flow_grid.shape
    n = grid.n
    X = state.x.reshape(shape + (n,))
    JX = state.jx.reshape(shape + (n, n))
    Z = (v + state.z).reshape(shape)
    P = state.p.reshape(shape + (n,))
    det = np.linalg.det(JX)
    relevant = _relevant(grid, flow_grid, X)
    min_det = float(np.min(det[relevant], initial=np.inf))
    if check_horizon and min_det < theta_inv:
        raise HorizonExceeded(
            f"det D_x X dropped to {min_det:.4g} < {theta_inv} at t = {t}", min_det=min_det, time=t
        )
    queries = grid.nodes()
    pre, converged, inside = invert(flow_grid, X, JX, queries)
    trusted = converged & inside
    bad = np.nonzero(inside & ~converged)[0]
    if bad.size:
        raise InversionError(f"Newton inversion did not converge at node {int(bad[0])}", node=int(bad[0]))
    phi = np.where(trusted, flow_grid.interpolate(Z, pre), np.nan).reshape(grid.shape)
    dphi = np.where(trusted[:, None], flow_grid.interpolate(P, pre), np.nan).reshape(grid.shape + (n,))
    dets = flow_grid.interpolate(det, pre).reshape(grid.shape)
    return LocalSolution(
        grid=grid,
        t0=float(t0),
        t=float(t),
        phi=phi,
        dphi=dphi,
        d2phi=hessian_from_gradient(grid, dphi),
        det=dets,
        trusted=trusted.reshape(grid.shape),
        preimage=pre.reshape(grid.shape + (n,)),
        min_det=min_det,
    )


# ---------------------------------------------------------------------------
# public operations


def apply_times(
    H, path, phi, t0, times, grid, theta_inv=THETA_INV, mode="auto", step=None, pad=None, check_horizon=True
):
    """``S(t, t0) phi`` on ``grid`` for each of ``times`` from a single flow.

    Args:
        H: Hamiltonian system.
        path: driving rough path.
        phi: a :class:`SmoothDatum` (the flow grid is padded automatically)
            or a :class:`GridDatum` (its own grid is the flow grid).
        t0: anchor time.
        times: output times on either side of ``t0``.
        grid: query grid.
        theta_inv: smallest admissible ``det D_x X``.
        pad: number of padding cells; estimated from the deviation modulus
            when omitted.
        check_horizon: raise :class:`HorizonExceeded` below ``theta_inv``.

    Returns:
        A list of :class:`LocalSolution`, one per time.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if grid.n != H.n:
        raise ValueError(f"grid dimension {grid.n} does not match H (n = {H.n})")
    flow_grid = _flow_grid(H, path, phi, t0, times, grid, pad, mode, step)
    nodes, v, states = _flow_nodes(H, path, phi, flow_grid, t0, times, mode, step)
    return [
        _snapshot(grid, flow_grid, nodes, v, states[k], t0, t, theta_inv, check_horizon)
        for k, t in enumerate(times)
    ]


def apply(H, path, phi, t0, t, grid, theta_inv=THETA_INV, mode="auto", step=None, pad=None, check_horizon=True):
    """``S(t, t0) phi`` on ``grid``; see :func:`apply_times`."""
    return apply_times(H, path, phi, t0, [t], grid, theta_inv, mode, step, pad, check_horizon)[0]


def horizon(H, path, phi, t0, grid, theta_inv=THETA_INV, t_min=0.0, t_max=None, mode="auto", step=None):
    """Largest sampled ``h`` with ``min det D_x X >= theta_inv`` on ``|t - t0| <= h``.

    Every path sample time in ``[t_min, t_max]`` is examined and the answer
    is the largest sampled distance whose whole prefix (on both sides of
    ``t0``) passes. A side without failures contributes its full length.
    """
    if not 0 < theta_inv < 1:
        raise ValueError("theta_inv must lie in (0, 1)")
    t_max = path.T if t_max is None else t_max
    times = np.union1d(path.partition(t_min, t_max), [t0])
    nodes = grid.nodes()
    if isinstance(phi, GridDatum):
        g, h = phi.grad.reshape(-1, phi.n), phi.hess.reshape(-1, phi.n, phi.n)
    else:
        _, g, h = _datum_at(phi, nodes)
    states = characteristics.flow_times(H, path, nodes, g, t0, times, mode, step, hess=h)
    dets = np.min(np.linalg.det(states.jx), axis=1)
    dist = np.abs(times - t0)
    failures = {}
    limit = {}
    for name, side in (("forward", times >= t0), ("backward", times <= t0)):
        d, ok = dist[side], dets[side] >= theta_inv
        order = np.argsort(d)
        d, ok = d[order], ok[order]
        if ok.all():
            limit[name] = d[-1] if d.size else 0.0
            failures[name] = None
        else:
            first = int(np.argmin(ok))
            limit[name] = d[first - 1] if first > 0 else 0.0
            failures[name] = float(t0 + d[first] if name == "forward" else t0 - d[first])
    # a side whose window is shorter than the other is only limiting if it failed
    candidates = [limit[k] for k in limit if failures[k] is not None]
    h = min(candidates) if candidates else float(max(limit.values()))
    inside = dist <= h
    report = HorizonReport(
        t0=float(t0),
        h=float(h),
        theta_inv=float(theta_inv),
        min_det=float(np.min(dets[inside])),
        forward_failure=failures["forward"],
        backward_failure=failures["backward"],
    )
    if h == 0.0:
        report.diagnostic = "horizon shorter than one time sample"
    return report


@dataclass
class PropertyReport:
    """Defects of the operator properties, one value per checked time."""

    shift: list = field(default_factory=list)
    comparison: list = field(default_factory=list)
    comparison_gap: list = field(default_factory=list)
    semigroup: list = field(default_factory=list)

    def worst(self):
        return {
            k: float(np.max(v)) if len(v) else 0.0
            for k, v in (
                ("shift", self.shift),
                ("comparison", self.comparison),
                ("comparison_gap", self.comparison_gap),
                ("semigroup", self.semigroup),
            )
        }


def _sup(a, mask=None):
    a = np.asarray(a, dtype=float)
    if mask is not None:
        a = np.where(mask, a, -np.inf)
    return float(np.nanmax(a))


def padding(H, path, phis, t0, times, grid, mode="auto", step=None):
    """Padding cells covering the preimages for every datum in ``phis``."""
    cells = [
        (_flow_grid(H, path, phi, t0, times, grid, None, mode, step).shape[0] - grid.shape[0]) // 2
        for phi in phis
    ]
    return max(cells)


def check_properties(
    H, path, phi1, phi2, t0, times, grid, k=1.0, mid=None, theta_inv=THETA_INV, mode="auto", step=None, pad=None
):
    """Shift, comparison and semigroup defects of ``S`` at each of ``times``.

    * shift: ``|S(phi1 + k) - (S phi1 + k)|``;
    * comparison: ``max(0, sup(S phi1 - S phi2) - sup(phi1 - phi2))`` where the
      second sup runs over the flow grid nodes; ``comparison_gap`` is the
      absolute difference of the two sups (zero when the bound is attained);
    * semigroup: ``|S(t, s) S(s, t0) phi1 - S(t, t0) phi1|`` with
      ``s = mid(t)`` (the midpoint by default). The intermediate snapshot is
      computed on a box padded enough to serve as the next flow grid.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    report = PropertyReport()
    if pad is None:
        pad = padding(H, path, (phi1, phi2), t0, times, grid, mode, step)
    s1 = apply_times(H, path, phi1, t0, times, grid, theta_inv, mode, step, pad)
    s1k = apply_times(H, path, phi1 + k, t0, times, grid, theta_inv, mode, step, pad)
    s2 = apply_times(H, path, phi2, t0, times, grid, theta_inv, mode, step, pad)
    for a, b, c, t in zip(s1, s1k, s2, times):
        both = a.trusted & b.trusted
        report.shift.append(float(np.max(np.abs(b.phi - a.phi - k)[both], initial=0.0)))
        lhs = _sup(a.phi - c.phi, a.trusted & c.trusted)
        fg_nodes = grid.padded(pad).nodes()
        rhs = float(np.max(phi1.value(fg_nodes) - phi2.value(fg_nodes)))
        report.comparison.append(max(0.0, lhs - rhs))
        report.comparison_gap.append(abs(lhs - rhs))
        s = 0.5 * (t0 + t) if mid is None else mid(t)
        inner = apply(H, path, phi1, t0, s, grid.padded(pad), theta_inv, mode, step, pad)
        twice = apply(H, path, inner.as_datum(), s, t, grid, theta_inv, mode, step)
        ok = twice.trusted & a.trusted
        report.semigroup.append(float(np.max(np.abs(twice.phi - a.phi)[ok], initial=0.0)))
    return report


@dataclass(frozen=True)
class Annulus:
    """Closed annulus ``r_in <= |x - center| <= r_out``."""

    center: tuple
    r_in: float
    r_out: float

    def mask(self, points, shrink=0.0):
        c = np.asarray(self.center, dtype=float)
        r = np.linalg.norm(np.asarray(points) - c, axis=-1)
        lo = self.r_in + shrink if self.r_in > 0 else 0.0
        return (r >= lo - 1e-12) & (r <= self.r_out - shrink + 1e-12)

    def shrunk_empty(self, rho):
        return self.r_out - rho < max(self.r_in + rho if self.r_in > 0 else 0.0, 0.0)


@dataclass
class DependenceReport:
    defect: float
    rho: float
    sup_K: float
    sup_K_rho: float
    global_sup: float
    vacuous: bool = False


def domain_of_dependence_check(
    H, path, phi1, phi2, t0, t, K, R, grid, theta_inv=THETA_INV, mode="auto", step=None, pad=None
):
    """``max(0, sup_{K_rho}(S phi1 - S phi2) - sup_K(phi1 - phi2))`` with ``rho = rho_R(|t - t0|)``.

    ``sup_K`` is taken over the nodes of the (padded) flow grid inside ``K``.
    """
    sigma = abs(t - t0)
    nodes = grid.nodes()
    every = max(1, nodes.shape[0] // 64)
    rho = (
        characteristics.deviation_modulus(H, path, R, t0, sigma, x_points=nodes[::every], mode=mode, step=step)
        if sigma > 0
        else 0.0
    )
    if K.shrunk_empty(rho):
        return DependenceReport(0.0, rho, np.nan, np.nan, np.nan, vacuous=True)
    if pad is None:
        pad = padding(H, path, (phi1, phi2), t0, [t], grid, mode, step)
    a = apply(H, path, phi1, t0, t, grid, theta_inv, mode, step, pad)
    b = apply(H, path, phi2, t0, t, grid, theta_inv, mode, step, pad)
    fg_nodes = grid.padded(pad).nodes()
    inK = K.mask(fg_nodes)
    sup_K = float(np.max((phi1.value(fg_nodes) - phi2.value(fg_nodes))[inK]))
    diff = (a.phi - b.phi).reshape(-1)
    ok = (a.trusted & b.trusted).reshape(-1)
    in_rho = K.mask(nodes, shrink=rho) & ok
    if not in_rho.any():
        return DependenceReport(0.0, rho, sup_K, np.nan, np.nan, vacuous=True)
    sup_rho = float(np.max(diff[in_rho]))
    return DependenceReport(
        defect=max(0.0, sup_rho - sup_K),
        rho=rho,
        sup_K=sup_K,
        sup_K_rho=sup_rho,
        global_sup=float(np.max(diff[ok])),
    )


def write_snapshot_csv(solution, filename):
    """Columns ``x1..xn, Phi, dPhi1..dPhin, detJx``; untrusted rows are skipped."""
    n = solution.grid.n
    nodes = solution.grid.nodes()
    mask = solution.trusted.reshape(-1)
    rows = np.column_stack(
        (
            nodes,
            solution.phi.reshape(-1),
            solution.dphi.reshape(-1, n),
            solution.det.reshape(-1),
        )
    )[mask]
    header = [f"x{i + 1}" for i in range(n)] + ["Phi"] + [f"dPhi{i + 1}" for i in range(n)] + ["detJx"]
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" for v in r])


__all__ = [
    "Annulus",
    "DependenceReport",
    "HorizonReport",
    "LocalSolution",
    "PropertyReport",
    "SmoothDatum",
    "apply",
    "apply_times",
    "check_properties",
    "domain_of_dependence_check",
    "horizon",
    "invert",
    "padding",
    "write_snapshot_csv",
]
