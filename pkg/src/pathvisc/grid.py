"""Uniform rectangular grids, time-indexed grid fields and smooth initial data."""

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

from . import expressions
from .errors import MeshMismatch


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid over ``box = ((lo_1, hi_1), ..., (lo_n, hi_n))``."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if not len(self.lower) == len(self.upper) == len(self.shape):
            raise ValueError("box and shape disagree in dimension")
        if any(s < 2 for s in self.shape) or any(h <= l for l, h in zip(self.lower, self.upper)):
            raise ValueError("grid needs at least two nodes and a nondegenerate box per axis")

    @classmethod
    def from_box(cls, box, nodes):
        box = np.atleast_2d(np.asarray(box, dtype=float))
        nodes = np.broadcast_to(np.asarray(nodes, dtype=int), (box.shape[0],))
        return cls(tuple(box[:, 0]), tuple(box[:, 1]), tuple(nodes))

    @classmethod
    def from_spacing(cls, box, dx):
        box = np.atleast_2d(np.asarray(box, dtype=float))
        counts = np.rint((box[:, 1] - box[:, 0]) / dx).astype(int) + 1
        upper = box[:, 0] + (counts - 1) * dx
        return cls(tuple(box[:, 0]), tuple(upper), tuple(counts))

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.shape == other.shape
            and np.allclose(self.lower, other.lower, rtol=0, atol=1e-12)
            and np.allclose(self.upper, other.upper, rtol=0, atol=1e-12)
        )

    __hash__ = None

    @property
    def n(self):
        return len(self.shape)

    @property
    def spacing(self):
        return np.array([(h - l) / (s - 1) for l, h, s in zip(self.lower, self.upper, self.shape)])

    @property
    def dx(self):
        return float(np.min(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def axes(self):
        return tuple(np.linspace(l, h, s) for l, h, s in zip(self.lower, self.upper, self.shape))

    def mesh(self):
        """Node coordinates, shape ``shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def nodes(self):
        """Flat node coordinates, shape ``(size, n)`` in C order."""
        return self.mesh().reshape(-1, self.n)

    def padded(self, cells):
        """Grid with ``cells`` extra nodes on both sides of every axis."""
        h = self.spacing
        return Grid(
            tuple(np.array(self.lower) - cells * h),
            tuple(np.array(self.upper) + cells * h),
            tuple(s + 2 * cells for s in self.shape),
        )

    def crop(self, cells):
        """Grid with ``cells`` nodes removed on both sides."""
        h = self.spacing
        return Grid(
            tuple(np.array(self.lower) + cells * h),
            tuple(np.array(self.upper) - cells * h),
            tuple(s - 2 * cells for s in self.shape),
        )

    def index_of(self, points):
        """Nearest node multi-index for each point, shape ``(..., n)``."""
        pts = np.asarray(points, dtype=float)
        idx = np.rint((pts - np.array(self.lower)) / self.spacing).astype(int)
        return np.clip(idx, 0, np.array(self.shape) - 1)

    def contains(self, points, margin=0.0):
        pts = np.asarray(points, dtype=float)
        lo = np.array(self.lower) + margin
        hi = np.array(self.upper) - margin
        return np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=-1)

    def interpolate(self, values, points):
        """Multilinear interpolation of node ``values`` (shape ``shape + tail``).

        Points outside the box are clamped to the boundary cell (linear
        extrapolation); use :meth:`contains` to flag them.
        """
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        pts = pts.reshape(-1, self.n)
        h = self.spacing
        s = (pts - np.array(self.lower)) / h
        base = np.clip(np.floor(s).astype(int), 0, np.array(self.shape) - 2)
        frac = s - base
        tail = values.shape[self.n :]
        out = np.zeros((pts.shape[0],) + tail)
        for corner in itertools.product((0, 1), repeat=self.n):
            c = np.array(corner)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=-1)
            idx = tuple((base + c).T)
            out += w.reshape((-1,) + (1,) * len(tail)) * values[idx]
        return out.reshape(lead + tail)

    def interpolate_gradient(self, values, points):
        """Gradient of the multilinear interpolant; the last axis is the derivative."""
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        pts = pts.reshape(-1, self.n)
        h = self.spacing
        s = (pts - np.array(self.lower)) / h
        base = np.clip(np.floor(s).astype(int), 0, np.array(self.shape) - 2)
        frac = s - base
        tail = values.shape[self.n :]
        out = np.zeros((pts.shape[0],) + tail + (self.n,))
        for corner in itertools.product((0, 1), repeat=self.n):
            c = np.array(corner)
            w = np.where(c == 1, frac, 1.0 - frac)
            v = values[tuple((base + c).T)]
            for d in range(self.n):
                dw = np.prod(np.delete(w, d, axis=-1), axis=-1) * (1.0 if c[d] else -1.0) / h[d]
                out[..., d] += dw.reshape((-1,) + (1,) * len(tail)) * v
        return out.reshape(lead + tail + (self.n,))


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar field on ``grid`` at each of ``times``; ``values`` is ``(nt,) + shape``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.shape == self.grid.shape:
            values = values[None]
        if values.shape != (times.size,) + self.grid.shape:
            raise MeshMismatch(f"values of shape {values.shape} do not fit {times.size} x {self.grid.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def same_mesh(self, other):
        return self.grid == other.grid and np.array_equal(self.times, other.times)

    def require_same_mesh(self, other):
        if not self.same_mesh(other):
            raise MeshMismatch("fields live on different grids or time meshes")

    def time_index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the mesh")
        return k

    def at(self, t):
        return self.values[self.time_index(t)]

    def __sub__(self, other):
        if isinstance(other, GridField):
            self.require_same_mesh(other)
            other = other.values
        return GridField(self.grid, self.times, self.values - other)

    def __add__(self, other):
        if isinstance(other, GridField):
            self.require_same_mesh(other)
            other = other.values
        return GridField(self.grid, self.times, self.values + other)


# ---------------------------------------------------------------------------
# initial data with analytic derivatives


@dataclass(frozen=True)
class SmoothDatum:
    """A C^2 function given by value, gradient and Hessian callables on ``(..., n)``."""

    n: int
    value: Callable
    grad: Callable
    hess: Callable
    label: str = "custom"
    smooth: bool = True

    def __call__(self, x):
        return self.value(x)

    def evaluate(self, x):
        return self.value(x), self.grad(x), self.hess(x)

    def shifted(self, k):
        """The datum plus the constant ``k``."""
        v = self.value
        return SmoothDatum(self.n, lambda x: v(x) + k, self.grad, self.hess, f"{self.label}+{k:g}", self.smooth)

    def translated(self, c):
        """``x -> datum(x - c)``."""
        c = np.asarray(c, dtype=float)
        return SmoothDatum(
            self.n,
            lambda x: self.value(np.asarray(x) - c),
            lambda x: self.grad(np.asarray(x) - c),
            lambda x: self.hess(np.asarray(x) - c),
            f"{self.label}(x-{c.tolist()})",
            self.smooth,
        )

    def __add__(self, other):
        if np.isscalar(other):
            return self.shifted(float(other))
        return SmoothDatum(
            self.n,
            lambda x: self.value(x) + other.value(x),
            lambda x: self.grad(x) + other.grad(x),
            lambda x: self.hess(x) + other.hess(x),
            f"{self.label}+{other.label}",
            self.smooth and other.smooth,
        )

    def __neg__(self):
        return SmoothDatum(self.n, lambda x: -self.value(x), lambda x: -self.grad(x),
                           lambda x: -self.hess(x), f"-{self.label}", self.smooth)

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, a):
        return SmoothDatum(self.n, lambda x: a * self.value(x), lambda x: a * self.grad(x),
                           lambda x: a * self.hess(x), f"{a:g}*{self.label}", self.smooth)


def quadratic(A, b=0.0, c=0.0, center=0.0, n=None):
    """``c + <b, y> + <A y, y> / 2`` with ``y = x - center``; scalar ``A`` means ``A I``."""
    if n is None:
        n = np.atleast_1d(np.asarray(b)).size if np.ndim(A) == 0 else np.shape(A)[0]
    A = np.asarray(A, dtype=float) * np.eye(n) if np.ndim(A) == 0 else np.asarray(A, dtype=float)
    b = np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy()
    center = np.broadcast_to(np.asarray(center, dtype=float), (n,)).copy()

    def value(x):
        y = np.asarray(x, dtype=float) - center
        return c + y @ b + 0.5 * np.einsum("...i,ij,...j->...", y, A, y)

    def grad(x):
        y = np.asarray(x, dtype=float) - center
        return b + y @ A.T

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape[:-1] + (n, n)).copy()

    return SmoothDatum(n, value, grad, hess, "quadratic")


def linear(p0, c=0.0):
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    d = quadratic(np.zeros((p0.size, p0.size)), p0, c)
    return SmoothDatum(d.n, d.value, d.grad, d.hess, "linear")


def constant(c, n=1):
    d = quadratic(np.zeros((n, n)), np.zeros(n), c)
    return SmoothDatum(n, d.value, d.grad, d.hess, f"constant {c:g}")


def from_sympy(expr, n, label=None):
    _, x, _ = expressions.symbols(n)
    extra = expr.free_symbols - set(x)
    if extra:
        raise ValueError(f"datum depends on unknown symbols {sorted(map(str, extra))}")
    g = [sp.diff(expr, s) for s in x]
    h = [[sp.diff(e, s) for s in x] for e in g]
    fv = expressions.compile_scalar(expr, list(x))
    fg = expressions.compile_array(g, list(x))
    fh = expressions.compile_array(h, list(x))

    def wrap(f):
        def call(pts):
            pts = np.asarray(pts, dtype=float)
            return f(*np.moveaxis(pts, -1, 0))

        return call

    return SmoothDatum(n, wrap(fv), wrap(fg), wrap(fh), label or str(expr))


def expression(text, n=1):
    """Datum from the expression language in ``x1..xn``."""
    return from_sympy(expressions.parse(text, n, allow=("x",)), n, label=str(text))


def gaussian(amplitude=1.0, width=1.0, center=0.0, n=1):
    """``amplitude * exp(-|x - center|^2 / width^2)``."""
    _, x, _ = expressions.symbols(n)
    c = np.broadcast_to(np.asarray(center, dtype=float), (n,))
    r2 = sum((s - float(ci)) ** 2 for s, ci in zip(x, c))
    return from_sympy(float(amplitude) * sp.exp(-r2 / float(width) ** 2), n, label="gaussian")


def smooth_bump(amplitude=1.0, radius=1.0, center=0.0, n=1):
    """Compactly supported ``amplitude * exp(1 - 1 / (1 - |y|^2 / radius^2))``."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (n,)).copy()
    R2 = float(radius) ** 2

    def parts(x):
        y = np.asarray(x, dtype=float) - c
        s = np.sum(y * y, axis=-1) / R2
        inside = s < 1.0
        si = np.where(inside, s, 0.0)
        g = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - si)), 0.0) * amplitude
        # d/ds of exp(1 - 1/(1-s)) = -e /(1-s)^2 ; second derivative likewise
        d1 = np.where(inside, -g / (1.0 - si) ** 2, 0.0)
        d2 = np.where(inside, g * (1.0 - 2.0 * (1.0 - si)) / (1.0 - si) ** 4, 0.0)
        return y, g, d1, d2

    def value(x):
        return parts(x)[1]

    def grad(x):
        y, _, d1, _ = parts(x)
        return (2.0 / R2) * d1[..., None] * y

    def hess(x):
        y, _, d1, d2 = parts(x)
        eye = np.eye(n)
        return (2.0 / R2) * d1[..., None, None] * eye + (4.0 / R2**2) * d2[..., None, None] * (
            y[..., :, None] * y[..., None, :]
        )

    return SmoothDatum(n, value, grad, hess, "bump")


def concave_tent(slope=1.0, center=0.0, n=1):
    """Piecewise-linear ``-slope |x - center|_1``; not C^2 (PDE initial data only)."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (n,)).copy()

    def value(x):
        return -slope * np.sum(np.abs(np.asarray(x, dtype=float) - c), axis=-1)

    def grad(x):
        return -slope * np.sign(np.asarray(x, dtype=float) - c)

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n))

    return SmoothDatum(n, value, grad, hess, "concave_tent", smooth=False)


@dataclass(frozen=True, eq=False)
class GridDatum:
    """A datum known only at the nodes of ``grid`` (values, gradients, Hessians)."""

    grid: Grid
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    label: str = "grid"

    @property
    def n(self):
        return self.grid.n

    def shifted(self, k):
        return GridDatum(self.grid, self.value + k, self.grad, self.hess, f"{self.label}+{k:g}")


def hessian_from_gradient(grid, grad):
    """Centred differences of a gradient field (second order inside, one-sided at edges)."""
    n = grid.n
    h = grid.spacing
    out = np.empty(grid.shape + (n, n))
    for i in range(n):
        for j in range(n):
            out[..., i, j] = np.gradient(grad[..., i], h[j], axis=j, edge_order=2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))
