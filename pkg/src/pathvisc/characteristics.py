"""Characteristics of ``du = sum_i H^i(Du, x) dW^i``.

Along a characteristic started at ``(x, p)``::

    dX = -D_p H^i(P, X) dW^i
    dP = +D_x H^i(P, X) dW^i
    dZ = (H^i - P . D_p H^i)(P, X) dW^i

together with the Jacobians ``JX = dX/dx0`` and ``JP = dP/dx0``. When the
flow is started from a datum ``phi`` with ``p = D phi(x)`` the initial
``JP`` is ``D^2 phi(x)``, so ``JX`` is the Jacobian of ``x -> X(x, D phi(x))``.

Three integrators are provided:

``time_change``
    ``m == 1`` only. The system is autonomous in ``tau = W_t - W_{t0}``, so a
    fixed-step RK4 in ``tau`` is run up to the target pseudo-time.
``commuting``
    Components whose Poisson brackets vanish. Each component is flowed in its
    own pseudo-time and the flows are composed.
``rough_step``
    Any ``m``. A second order (Davie) step per piece with increments
    ``(dW, WW)``; sample intervals are split so that each piece is at most
    ``step`` long in time and in ``|dW|``.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import hamiltonians
from .errors import FlowDivergence, HamiltonianError

DIVERGENCE_GUARD = 1e8
TIME_CHANGE_STEP = 1e-3
ROUGH_STEP = 2.5e-3
# the deviation modulus only sizes padding, so a coarser pseudo-time step will do
MODULUS_STEP = 1e-2


class FlowMode(str, enum.Enum):
    TIME_CHANGE = "time_change"
    COMMUTING = "commuting"
    ROUGH_STEP = "rough_step"


@dataclass(frozen=True, eq=False)
class CharState:
    """Batched characteristic state; leading axes are batch (and time) axes."""

    x: np.ndarray
    p: np.ndarray
    z: np.ndarray
    jx: np.ndarray
    jp: np.ndarray

    @property
    def det_jx(self):
        return np.linalg.det(self.jx)

    def as_tuple(self):
        return (self.x, self.p, self.z, self.jx, self.jp)

    def __getitem__(self, k):
        return CharState(self.x[k], self.p[k], self.z[k], self.jx[k], self.jp[k])


def _initial(x, p, hess):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.broadcast_to(np.asarray(p, dtype=float), x.shape).copy()
    B, n = x.shape
    jx = np.broadcast_to(np.eye(n), (B, n, n)).copy()
    jp = np.zeros((B, n, n)) if hess is None else np.broadcast_to(hess, (B, n, n)).astype(float)
    return (x, p, np.zeros(B), jx, jp.copy())


def _axpy(state, d, a):
    return tuple(s + a * v for s, v in zip(state, d))


def _field(h, state):
    """The vector field of one component at ``state``."""
    x, p, _, jx, jp = state
    v, g, f, hpp, hpx, hxx = h.derivatives(p, x)
    dz = v - np.einsum("bi,bi->b", p, g)
    djx = -(hpp @ jp + hpx @ jx)
    djp = np.swapaxes(hpx, -1, -2) @ jp + hxx @ jx
    return (-g, f, dz, djx, djp), (g, f, hpp, hpx, hxx)


def _guard(state):
    x, p = state[0], state[1]
    big = max(float(np.max(np.abs(x), initial=0.0)), float(np.max(np.abs(p), initial=0.0)))
    if not np.isfinite(big) or big > DIVERGENCE_GUARD or not np.all(np.isfinite(state[3])):
        raise FlowDivergence(f"characteristics left the trusted range (max |x|, |p| = {big:.3g})")


def _rk4(h, state, dtau, step):
    """Integrate one autonomous component over pseudo-time ``dtau``."""
    if dtau == 0.0:
        return state
    k = max(1, int(np.ceil(abs(dtau) / step)))
    d = dtau / k
    for _ in range(k):
        k1, _ = _field(h, state)
        k2, _ = _field(h, _axpy(state, k1, d / 2))
        k3, _ = _field(h, _axpy(state, k2, d / 2))
        k4, _ = _field(h, _axpy(state, k3, d))
        state = tuple(
            s + (d / 6) * (a + 2 * b + 2 * c + e) for s, a, b, c, e in zip(state, k1, k2, k3, k4)
        )
        _guard(state)
    return state


def _jacobian_derivative(third, state, v, hess):
    """Derivative of the (JX, JP) field along ``v`` given third derivatives of H."""
    _, _, _, jx, jp = state
    vx, vp, _, vjx, vjp = v
    hpp, hpx, hxx = hess
    ppp, ppx, pxx, xxx = third
    d_pp = np.einsum("kijl,kl->kij", ppp, vp) + np.einsum("kijl,kl->kij", ppx, vx)
    d_px = np.einsum("kilj,kl->kij", ppx, vp) + np.einsum("kijl,kl->kij", pxx, vx)
    d_xx = np.einsum("klij,kl->kij", pxx, vp) + np.einsum("kijl,kl->kij", xxx, vx)
    djx = -(d_pp @ jp + hpp @ vjp + d_px @ jx + hpx @ vjx)
    hxp = np.swapaxes(hpx, -1, -2)
    djp = np.swapaxes(d_px, -1, -2) @ jp + hxp @ vjp + d_xx @ jx + hxx @ vjx
    return djx, djp


def _davie(H, state, dw, ww):
    """One second order step ``Y + V_i dW^i + (DV_j V_i) WW^{ij}``."""
    fields = [_field(h, state) for h in H]
    x, p = state[0], state[1]
    thirds = [h.third(p, x) if h.third is not None else None for h in H]
    out = list(state)
    for j, (v, _) in enumerate(fields):
        out = [o + dw[j] * va for o, va in zip(out, v)]
    for i, (vi, _) in enumerate(fields):
        vx, vp = vi[0], vi[1]
        scale = 1.0 + max(float(np.max(np.abs(vx), initial=0.0)), float(np.max(np.abs(vp), initial=0.0)))
        for j, (vj, (g, f, hpp, hpx, hxx)) in enumerate(fields):
            c = ww[i, j]
            if c == 0.0:
                continue
            hppv, hpxv = np.einsum("bij,bj->bi", hpp, vp), np.einsum("bij,bj->bi", hpx, vx)
            dx = -(hppv + hpxv)
            dp = np.einsum("bji,bj->bi", hpx, vp) + np.einsum("bij,bj->bi", hxx, vx)
            dz = np.einsum("bi,bi->b", f, vx) - np.einsum("bi,bi->b", p, hppv + hpxv)
            if thirds[j] is not None:
                djx, djp = _jacobian_derivative(thirds[j], state, vi, (hpp, hpx, hxx))
            else:
                # central difference of the Jacobian field along V_i
                eps = 1e-4 / scale
                fp, _ = _field(H[j], _axpy(state, vi, eps))
                fm, _ = _field(H[j], _axpy(state, vi, -eps))
                djx = (fp[3] - fm[3]) / (2 * eps)
                djp = (fp[4] - fm[4]) / (2 * eps)
            for a, dv in enumerate((dx, dp, dz, djx, djp)):
                out[a] = out[a] + c * dv
    out = tuple(out)
    _guard(out)
    return out


def auto_mode(H):
    """The cheapest admissible mode for ``H``."""
    if H.m == 1:
        return FlowMode.TIME_CHANGE
    if hamiltonians.commutation_check(H)[0]:
        return FlowMode.COMMUTING
    return FlowMode.ROUGH_STEP


def _check_mode(H, path, mode):
    mode = auto_mode(H) if mode in (None, "auto") else FlowMode(mode)
    if H.m != path.m:
        raise HamiltonianError(f"{H.m} Hamiltonian components but the path has {path.m} channels")
    if mode is FlowMode.TIME_CHANGE and H.m != 1:
        raise HamiltonianError("time_change mode needs a single driving signal (m = 1)")
    if mode is FlowMode.COMMUTING and not hamiltonians.commutation_check(H)[0]:
        raise HamiltonianError("commuting mode needs vanishing Poisson brackets")
    return mode


def _pieces(dt, dw, ww, step):
    """Split one interval into equal pieces with the area shared evenly."""
    k = max(1, int(np.ceil(abs(dt) / step)), int(np.ceil(np.max(np.abs(dw)) / step)))
    d = dw / k
    area = 0.5 * (ww - ww.T)
    return k, d, 0.5 * np.outer(d, d) + area / k


def _rough_walk(H, path, state, t0, targets, step):
    """Davie steps from ``t0`` through sorted (away from ``t0``) ``targets``."""
    targets = np.asarray(targets, dtype=float)
    if targets.size == 0:
        return []
    end = targets[-1]
    grid = np.union1d(path.partition(t0, end), targets)
    if end < t0:
        grid = grid[::-1]
    dw, ww = path.interval_increments(grid)
    out = []
    want = iter(targets)
    nxt = next(want)
    while nxt == grid[0]:
        out.append(state)
        nxt = next(want, None)
        if nxt is None:
            return out
    for a in range(grid.size - 1):
        k, d, wp = _pieces(grid[a + 1] - grid[a], dw[a], ww[a], step)
        for _ in range(k):
            state = _davie(H, state, d, wp)
        while nxt is not None and nxt == grid[a + 1]:
            out.append(state)
            nxt = next(want, None)
    return out


def _walk_tau(h, state, taus, step):
    """RK4 states at pseudo-times ``taus``, visiting them in sorted order on each side of 0."""
    result = [None] * taus.size
    for side in (taus >= 0, taus < 0):
        idx = np.nonzero(side)[0]
        order = idx[np.argsort(np.abs(taus[idx]), kind="stable")]
        cur, prev = state, 0.0
        for k in order:
            cur = _rk4(h, cur, float(taus[k] - prev), step)
            prev = taus[k]
            result[k] = cur
    return result


def _walk(H, path, state, t0, times, mode, step):
    """States at every entry of ``times`` (any order)."""
    times = np.asarray(times, dtype=float)
    if mode is FlowMode.TIME_CHANGE:
        return _walk_tau(H[0], state, path.increment(t0, times)[:, 0], step)
    result = [None] * times.size
    for side in (times >= t0, times < t0):
        idx = np.nonzero(side)[0]
        if idx.size == 0:
            continue
        order = idx[np.argsort(np.abs(times[idx] - t0), kind="stable")]
        targets = times[order]
        if mode is FlowMode.ROUGH_STEP:
            states = _rough_walk(H, path, state, t0, targets, step)
        else:
            taus = path.increment(t0, targets)
            states, cur, prev = [], state, np.zeros(H.m)
            for tau in taus:
                for i, h in enumerate(H):
                    cur = _rk4(h, cur, float(tau[i] - prev[i]), step)
                prev = tau
                states.append(cur)
        for k, s in zip(order, states):
            result[k] = s
    return result


def flow(H, path, x, p, t0, t, mode="auto", step=None, hess=None):
    """Flow initial conditions ``(x, p)`` from ``t0`` to ``t``.

    Args:
        H: the Hamiltonian system.
        path: a geometric rough path with ``H.m`` channels.
        x: initial positions, shape ``(n,)`` or ``(B, n)``.
        p: initial momenta, broadcast against ``x``.
        t0: start time; ``t`` may lie on either side of it.
        mode: ``"time_change"``, ``"commuting"``, ``"rough_step"`` or ``"auto"``.
        step: pseudo-time step for RK4, or piece size for rough steps.
        hess: initial ``JP`` (the datum's Hessian); zeros when omitted.

    Returns:
        A batched :class:`CharState`.
    """
    return flow_times(H, path, x, p, t0, [t], mode, step, hess)[0]


def flow_times(H, path, x, p, t0, times, mode="auto", step=None, hess=None):
    """Like :func:`flow` for several output times; the result has a leading time axis."""
    mode = _check_mode(H, path, mode)
    if step is None:
        step = ROUGH_STEP if mode is FlowMode.ROUGH_STEP else TIME_CHANGE_STEP
    if step <= 0:
        raise ValueError("step must be positive")
    path._check_times(np.append(np.asarray(times, dtype=float), t0))
    state = _initial(x, p, hess)
    states = _walk(H, path, state, float(t0), times, mode, step)
    stacked = [np.stack([s[a] for s in states]) for a in range(5)]
    return CharState(*stacked)


def trajectory(H, path, x, p, t0=0.0, t1=None, mode="auto", step=None, hess=None):
    """One characteristic sampled at the path's sample times between ``t0`` and ``t1``.

    Returns ``(times, state)`` with ``state`` batched over times.
    """
    t1 = path.T if t1 is None else t1
    times = path.partition(t0, t1)
    if t1 < t0:
        times = times[::-1]
    state = flow_times(H, path, np.atleast_2d(x), np.atleast_2d(p), t0, times, mode, step, hess)
    return times, state[:, 0]


def mode_equivalence_defect(H, path, x, p, t0, t, step=None, rough_step=None, hess=None):
    """Max-norm gap between the time-change and rough-step integrators (``m == 1``)."""
    if H.m != 1:
        raise HamiltonianError("mode equivalence compares against the m = 1 time change")
    a = flow(H, path, x, p, t0, t, FlowMode.TIME_CHANGE, step, hess)
    b = flow(H, path, x, p, t0, t, FlowMode.ROUGH_STEP, rough_step, hess)
    return max(float(np.max(np.abs(u - v), initial=0.0)) for u, v in zip(a.as_tuple(), b.as_tuple()))


def momentum_samples(n, R, count=64, seed=0):
    """Momenta in the closed ball of radius ``R``, including points on its boundary."""
    if n == 1:
        return np.linspace(-R, R, max(count, 3))[:, None]
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radii = np.concatenate((np.full(count // 2, R), R * rng.uniform(size=count - count // 2)))
    axes = np.concatenate((np.eye(n), -np.eye(n))) * R
    return np.concatenate((np.zeros((1, n)), axes, d * radii[:, None]))


def deviation_modulus(H, path, R, t0, sigma, p_count=64, x_points=None, mode="auto", step=None, seed=0):
    """Sampled ``rho_R(sigma) = sup |X(x, p, t) - x|`` over ``|p| <= R``, ``|t - t0| <= sigma``.

    ``x_points`` defaults to the origin, which is exact for x-independent
    Hamiltonians; pass a sample of the region of interest otherwise. The sup
    over times uses every path sample in the window plus its endpoints, so
    the estimate is nondecreasing in ``sigma``.
    """
    if R <= 0 or sigma < 0:
        raise ValueError("need R > 0 and sigma >= 0")
    if sigma == 0:
        return 0.0
    n = H.n
    if x_points is None or H.x_independent:
        x_points = np.zeros((1, n))
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    ps = momentum_samples(n, R, p_count, seed)
    xs = np.repeat(x_points, ps.shape[0], axis=0)
    pp = np.tile(ps, (x_points.shape[0], 1))
    lo, hi = max(0.0, t0 - sigma), min(path.T, t0 + sigma)
    times = np.union1d(path.partition(lo, hi), [lo, hi])
    if step is None and _check_mode(H, path, mode) is not FlowMode.ROUGH_STEP:
        step = MODULUS_STEP
    states = flow_times(H, path, xs, pp, t0, times, mode, step)
    return float(np.max(np.linalg.norm(states.x - xs[None], axis=-1)))
