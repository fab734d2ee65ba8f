r"""Sampled geometric rough paths.

A path is stored as sample times ``t_0 < ... < t_{N-1}``, the values
``W(t_k)`` (with ``W(0) = 0``) and the cumulative second level
``WW_{0,t_k}`` where

    WW^{ij}_{s,t} = \int_s^t (W^i_r - W^i_s) dW^j_r .

Increments ``WW_{s,t}`` are recovered through Chen's relation

    WW_{s,t} = WW_{0,t} - WW_{0,s} - W_s \otimes (W_t - W_s),

so storage is linear in the number of samples. Between samples the path is
linear and the antisymmetric (area) part of an interval accrues linearly in
time; for piecewise-linear lifts that area is zero and the interpolated
second level is the exact iterated integral of the interpolant.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import PathError

CONSTRUCTION_TOL = 1e-12
VALIDATION_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GeometricRoughPath:
    """Immutable sampled rough path ``(W, WW)`` with Hölder exponent ``alpha``.

    Attributes:
      times: shape (N,), strictly increasing, ``times[0] == 0``.
      values: shape (N, m), ``values[0] == 0``.
      second_level: shape (N, m, m), cumulative ``WW_{0, t_k}``.
      alpha: Hölder exponent in (1/3, 1/2].
    """

    times: np.ndarray
    values: np.ndarray
    second_level: np.ndarray
    alpha: float = 0.5

    def __post_init__(self):
        times = _frozen(self.times)
        values = _frozen(self.values)
        if values.ndim == 1:
            values = _frozen(values[:, None])
        second = _frozen(self.second_level)
        if second.ndim == 1:
            second = _frozen(second[:, None, None])
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "second_level", second)

        if times.ndim != 1 or times.size < 2:
            raise PathError("need at least two sample times")
        n, m = values.shape
        if n != times.size or second.shape != (n, m, m):
            raise PathError("times, values and second level disagree in shape")
        if not np.all(np.isfinite(times)) or not np.all(np.diff(times) > 0):
            raise PathError("sample times must be finite and strictly increasing")
        if times[0] != 0.0:
            raise PathError("sample times must start at 0")
        if np.any(values[0] != 0.0):
            raise PathError("path must start at W(0) = 0")
        if not 1.0 / 3.0 < self.alpha <= 0.5:
            raise PathError(f"alpha={self.alpha} outside (1/3, 1/2]")

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def T(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, GeometricRoughPath):
            return NotImplemented
        return (
            self.alpha == other.alpha
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.second_level, other.second_level)
        )

    __hash__ = None

    def _check_times(self, t):
        t = np.asarray(t, dtype=float)
        eps = 1e-12 * max(1.0, self.T)
        if np.any(t < -eps) or np.any(t > self.T + eps):
            raise PathError(f"time outside [0, {self.T}]")
        return np.clip(t, 0.0, self.T)

    def _locate(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(k, 0, self.times.size - 2)

    def value_at(self, t):
        """Piecewise-linear ``W(t)``; shape ``t.shape + (m,)``."""
        t = self._check_times(t)
        k = self._locate(t)
        t0, t1 = self.times[k], self.times[k + 1]
        lam = ((t - t0) / (t1 - t0))[..., None]
        return (1.0 - lam) * self.values[k] + lam * self.values[k + 1]

    def second_level_at(self, t):
        """Cumulative ``WW_{0,t}`` at arbitrary times; shape ``t.shape + (m, m)``."""
        t = self._check_times(t)
        k = self._locate(t)
        t0, t1 = self.times[k], self.times[k + 1]
        lam = ((t - t0) / (t1 - t0))[..., None, None]
        wk = self.values[k]
        full = self.values[k + 1] - wk
        area = _interval_area(self.second_level[k], self.second_level[k + 1], wk, full)
        d = lam[..., 0] * full
        return (
            self.second_level[k]
            + wk[..., :, None] * d[..., None, :]
            + 0.5 * d[..., :, None] * d[..., None, :]
            + lam * area
        )

    def increment(self, s, t):
        """``W_t - W_s``."""
        return self.value_at(t) - self.value_at(s)

    def second_level_between(self, s, t):
        """``WW_{s,t}`` reconstructed through Chen's relation."""
        ws = self.value_at(s)
        wt = self.value_at(t)
        return (
            self.second_level_at(t)
            - self.second_level_at(s)
            - ws[..., :, None] * (wt - ws)[..., None, :]
        )

    def partition(self, t0, t1):
        """Sorted sample times inside ``[min, max]`` of the pair, endpoints included."""
        a, b = sorted((float(t0), float(t1)))
        self._check_times([a, b])
        inner = self.times[(self.times > a) & (self.times < b)]
        return np.concatenate(([a], inner, [b])) if b > a else np.array([a])

    def interval_increments(self, grid):
        """First and second level increments over consecutive points of ``grid``."""
        grid = np.asarray(grid, dtype=float)
        return (
            self.increment(grid[:-1], grid[1:]),
            self.second_level_between(grid[:-1], grid[1:]),
        )

    def subsample(self, step):
        """Piecewise-linear lift through every ``step``-th sample (end kept)."""
        idx = np.arange(0, self.times.size, step)
        if idx[-1] != self.times.size - 1:
            idx = np.append(idx, self.times.size - 1)
        return piecewise_linear_lift(self.times[idx], self.values[idx], alpha=self.alpha)

    def scaled(self, lam):
        """The dilated path ``(lam W, lam^2 WW)``."""
        return GeometricRoughPath(
            self.times, lam * self.values, lam * lam * self.second_level, self.alpha
        )

    def levy_area(self):
        """Antisymmetric part of the cumulative second level."""
        ww = self.second_level
        return 0.5 * (ww - np.swapaxes(ww, -1, -2))


def _interval_area(c0, c1, w0, dw):
    """Antisymmetric part of ``WW`` over one sample interval."""
    inc = c1 - c0 - w0[..., :, None] * dw[..., None, :]
    return 0.5 * (inc - np.swapaxes(inc, -1, -2))


def piecewise_linear_lift(times, values, alpha=0.5):
    """Canonical lift of the piecewise-linear interpolant through the samples.

    ``values`` has shape (N,) or (N, m) and must start at zero. On each linear
    piece ``WW`` grows by ``W_{t_k} (x) dW + dW (x) dW / 2``, the exact
    Riemann-Stieltjes iterated integral.

    >>> p = piecewise_linear_lift([0.0, 1.0], [0.0, 1.0])
    >>> float(p.second_level[-1, 0, 0])
    0.5
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0 or values.size == 0:
        raise PathError("empty sample set")
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != times.size:
        raise PathError("times and values differ in length")
    if np.any(np.diff(times) <= 0):
        raise PathError("sample times must be strictly increasing")
    if np.any(values[0] != 0.0):
        raise PathError("path must start at W(0) = 0")
    dw = np.diff(values, axis=0)
    steps = values[:-1, :, None] * dw[:, None, :] + 0.5 * dw[:, :, None] * dw[:, None, :]
    second = np.concatenate(
        (np.zeros((1,) + steps.shape[1:]), np.cumsum(steps, axis=0)), axis=0
    )
    return GeometricRoughPath(times, values, second, alpha)


def brownian_samples(seed, m, T, resolution):
    """Brownian sample values on ``resolution + 1`` uniform times.

    Power-of-two resolutions are built by dyadic Brownian-bridge refinement,
    so the path at resolution ``2**k`` is exactly the even-indexed subsample
    of the path at ``2**(k+1)`` for the same seed. Other resolutions use
    independent Gaussian increments.
    """
    if resolution is None or int(resolution) < 2:
        raise PathError("resolution must be at least 2")
    if not T > 0:
        raise PathError("horizon T must be positive")
    resolution = int(resolution)
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, T, resolution + 1)
    levels = resolution.bit_length() - 1
    if resolution != 1 << levels:
        inc = rng.standard_normal((resolution, m)) * np.sqrt(T / resolution)
        return times, np.concatenate((np.zeros((1, m)), np.cumsum(inc, axis=0)))
    w = np.zeros((2, m))
    w[1] = np.sqrt(T) * rng.standard_normal(m)
    for level in range(levels):
        pieces = 1 << level
        dt = T / pieces
        mid = 0.5 * (w[:-1] + w[1:]) + np.sqrt(dt / 4.0) * rng.standard_normal((pieces, m))
        out = np.empty((2 * pieces + 1, m))
        out[0::2] = w
        out[1::2] = mid
        w = out
    return times, w


def brownian_lift(seed, m, T, resolution, alpha=0.4):
    """Piecewise-linear geometric lift of a seeded Brownian sample path."""
    times, values = brownian_samples(seed, m, T, resolution)
    return piecewise_linear_lift(times, values, alpha=alpha)


def chen_defect(path, s, u, t, second=None):
    """Max-norm defect of Chen's relation for the triple ``s <= u <= t``.

    Cumulative storage satisfies Chen's relation by construction, so the
    check is only informative when ``second``, a callable ``(s, t) -> WW_{st}``
    supplying two-parameter data, replaces the reconstruction.
    """
    if not s <= u <= t:
        raise PathError("chen_defect needs s <= u <= t")
    second = path.second_level_between if second is None else second
    ws, wu, wt = path.value_at(s), path.value_at(u), path.value_at(t)
    d = (
        np.asarray(second(s, t))
        - np.asarray(second(s, u))
        - np.asarray(second(u, t))
        - np.outer(wu - ws, wt - wu)
    )
    return float(np.max(np.abs(d)))


def geometric_defect(path, s, t):
    """Max-norm defect of ``Sym(WW_{st}) = (W_t - W_s)^{(x)2} / 2``."""
    ww = path.second_level_between(s, t)
    dw = path.increment(s, t)
    d = 0.5 * (ww + ww.T) - 0.5 * np.outer(dw, dw)
    return float(np.max(np.abs(d)))


def _pair_blocks(path, chunk=64):
    """Yield (i, j-slice, dW, WW) blocks over all sample pairs i < j."""
    w, c = path.values, path.second_level
    n = w.shape[0]
    for start in range(0, n - 1, chunk):
        rows = np.arange(start, min(start + chunk, n - 1))
        ws, cs = w[rows][:, None], c[rows][:, None]
        wt, ct = w[None, start + 1 :], c[None, start + 1 :]
        dw = wt - ws
        ww = ct - cs - ws[..., :, None] * dw[..., None, :]
        # only j > i is meaningful; mask the rest
        valid = np.arange(start + 1, n)[None, :] > rows[:, None]
        yield rows, valid, dw, ww


def max_geometric_defect(path, pairwise=False):
    """Largest geometric defect over every pair of sample times.

    With cumulative storage the pair defect equals ``G_t - G_s`` where
    ``G_t = Sym(WW_{0t}) - W_t (x) W_t / 2``, so the maximum over all pairs is
    the componentwise range of ``G``; that O(N) evaluation is the default.
    ``pairwise=True`` evaluates every pair directly (O(N^2)).
    """
    if not pairwise:
        w, c = path.values, path.second_level
        g = 0.5 * (c + np.swapaxes(c, -1, -2)) - 0.5 * w[:, :, None] * w[:, None, :]
        return float(np.max(np.max(g, axis=0) - np.min(g, axis=0)))
    worst = 0.0
    for _, valid, dw, ww in _pair_blocks(path):
        d = 0.5 * (ww + np.swapaxes(ww, -1, -2)) - 0.5 * dw[..., :, None] * dw[..., None, :]
        d = np.max(np.abs(d), axis=(-1, -2))
        worst = max(worst, float(np.max(np.where(valid, d, 0.0))))
    return worst


def max_chen_defect(path, max_points=128):
    """Largest Chen defect over sampled triples.

    All triples are checked when the path has at most ``max_points`` samples.
    Longer paths are checked on every consecutive triple plus all triples of
    an evenly strided subset of ``max_points`` indices (endpoints included).
    """
    w, c = path.values, path.second_level
    n = w.shape[0]

    def defect(i, j, k):
        def inc(a, b):
            return c[b] - c[a] - w[a][..., :, None] * (w[b] - w[a])[..., None, :]

        d = inc(i, k) - inc(i, j) - inc(j, k)
        d = d - (w[j] - w[i])[..., :, None] * (w[k] - w[j])[..., None, :]
        return float(np.max(np.abs(d))) if d.size else 0.0

    worst = 0.0
    if n >= 3:
        i = np.arange(n - 2)
        worst = defect(i, i + 1, i + 2)
    idx = np.arange(n) if n <= max_points else np.unique(np.linspace(0, n - 1, max_points).astype(int))
    for a in range(idx.size):
        j, k = np.meshgrid(idx[a:], idx[a:], indexing="ij")
        keep = j <= k
        j, k = j[keep], k[keep]
        worst = max(worst, defect(np.full(j.size, idx[a]), j, k))
    return worst


def validate(path, tol=VALIDATION_TOL):
    """Check both algebraic constraints; raise :class:`PathError` on failure.

    Returns the pair ``(chen, geometric)`` of observed maximal defects.
    """
    chen = max_chen_defect(path)
    geo = max_geometric_defect(path)
    if chen > tol:
        raise PathError(f"Chen defect {chen:.3e} exceeds {tol:.1e}")
    if geo > tol:
        raise PathError(f"geometric defect {geo:.3e} exceeds {tol:.1e}")
    return chen, geo


def holder_norm(path, parts=False):
    r"""Rough-path norm over sampled pairs.

    ``sup |W_t - W_s| / |t-s|^a + sup |WW_{st}| / |t-s|^{2a}`` with Euclidean
    norm on increments and Frobenius norm on the second level. With
    ``parts=True`` the two suprema are returned separately.
    """
    first = second = 0.0
    times = path.times
    for rows, valid, dw, ww in _pair_blocks(path):
        lag = times[None, rows[0] + 1 :] - times[rows][:, None]
        lag = np.where(valid, lag, 1.0)
        a = np.linalg.norm(dw, axis=-1) / lag**path.alpha
        b = np.linalg.norm(ww, axis=(-1, -2)) / lag ** (2 * path.alpha)
        first = max(first, float(np.max(np.where(valid, a, 0.0))))
        second = max(second, float(np.max(np.where(valid, b, 0.0))))
    return (first, second) if parts else first + second


def compensated_sum(f, fprime, dw, ww):
    r"""Sum of ``f_k . dW_k + sum_ij f'_k[i, j] WW_k[i, j]`` over intervals.

    ``f`` has shape (K, m) and ``fprime`` shape (K, m, m) with
    ``fprime[k, i, j] = d f_j / d W^i`` (the Gubinelli derivative).
    """
    return float(np.sum(f * dw) + np.sum(fprime * ww))


def rough_integral(integrand, path, t0, t1):
    r"""Second-order compensated Riemann sum of ``\int_{t0}^{t1} f dW``.

    ``integrand`` is either a callable ``times -> (f, fprime)`` or a pair of
    arrays sampled on ``path.partition(t0, t1)``; ``f`` has shape (K, m) and
    ``fprime`` shape (K, m, m). The left endpoint of every interval is used.
    A reversed interval (``t0 > t1``) returns minus the integral over
    ``[t1, t0]``.
    """
    grid = path.partition(t0, t1)
    if callable(integrand):
        integrand = integrand(grid)
    try:
        f, fprime = integrand
    except (TypeError, ValueError):
        raise ValueError("integrand must supply values and Gubinelli derivatives") from None
    if fprime is None:
        raise ValueError("missing Gubinelli derivative data")
    f = np.asarray(f, dtype=float).reshape(grid.size, path.m)
    fprime = np.asarray(fprime, dtype=float).reshape(grid.size, path.m, path.m)
    if grid.size < 2:
        return 0.0
    dw, ww = path.interval_increments(grid)
    total = compensated_sum(f[:-1], fprime[:-1], dw, ww)
    return -total if t0 > t1 else total


def csv_header(m):
    return (
        ["t"]
        + [f"W{i + 1}" for i in range(m)]
        + [f"WW{i + 1}{j + 1}" for i in range(m) for j in range(m)]
    )


def write_csv(path, filename):
    """Write ``t, W1..Wm, WW11..WWmm`` rows with 17 significant digits."""
    m = path.m
    rows = np.column_stack(
        (path.times, path.values, path.second_level.reshape(len(path), m * m))
    )
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(m))
        for row in rows:
            writer.writerow([f"{v:.17g}" for v in row])


def read_csv(filename, alpha=0.5, tol=VALIDATION_TOL):
    """Load a path written by :func:`write_csv` and validate it at ``tol``."""
    with open(filename, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    ncol = len(header)
    m = int(round((-1 + np.sqrt(1 + 4 * (ncol - 1))) / 2))
    if header != csv_header(m):
        raise PathError(f"unexpected header {header!r}")
    if data.ndim != 2 or data.shape[1] != ncol:
        raise PathError("ragged path file")
    path = GeometricRoughPath(
        data[:, 0], data[:, 1 : 1 + m], data[:, 1 + m :].reshape(-1, m, m), alpha
    )
    if tol is not None:
        validate(path, tol)
    return path
