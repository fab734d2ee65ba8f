"""A small expression language for user-supplied Hamiltonians and data.

Expressions are ordinary arithmetic in the variables ``p1..pn`` (momentum),
``x1..xn`` (space) and ``t``; for ``n == 1`` the bare names ``p`` and ``x``
are accepted as well. Allowed functions are ``sqrt``, ``exp``, ``log``,
``sin``, ``cos`` and ``tanh``; ``**`` is the power operator. Expressions are
checked against this grammar before they reach sympy, then differentiated
symbolically and compiled to numpy.

>>> e = parse("0.5*p**2 - cos(x)", n=1)
>>> str(e)
'0.5*p1**2 - cos(x1)'
"""

import ast

import numpy as np
import sympy as sp

FUNCTIONS = {
    "sqrt": sp.sqrt,
    "exp": sp.exp,
    "log": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "tanh": sp.tanh,
}
_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def symbols(n):
    """Return ``(p, x, t)`` symbol tuples for dimension ``n``."""
    p = sp.symbols(f"p1:{n + 1}", real=True)
    x = sp.symbols(f"x1:{n + 1}", real=True)
    return p, x, sp.Symbol("t", real=True)


def parse(text, n, allow=("p", "x", "t")):
    """Parse ``text`` into a sympy expression, rejecting anything off-grammar."""
    if isinstance(text, (int, float)):
        return sp.Float(text) if isinstance(text, float) else sp.Integer(text)
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
    p, x, t = symbols(n)
    names = {}
    if "p" in allow:
        names.update({f"p{i + 1}": s for i, s in enumerate(p)})
        if n == 1:
            names["p"] = p[0]
    if "x" in allow:
        names.update({f"x{i + 1}": s for i, s in enumerate(x)})
        if n == 1:
            names["x"] = x[0]
    if "t" in allow:
        names["t"] = t
    names["pi"] = sp.pi
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"unsupported syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ValueError(f"unsupported function in {text!r}")
            if node.keywords or len(node.args) != 1:
                raise ValueError(f"functions take one positional argument in {text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in names and node.id not in FUNCTIONS:
                raise ValueError(f"unknown name {node.id!r} in {text!r}")
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"only numeric constants allowed in {text!r}")
    return sp.sympify(str(text), locals={**names, **FUNCTIONS})


def compile_scalar(expr, args):
    """Compile ``expr`` in ``args`` to a numpy function broadcasting its inputs."""
    f = sp.lambdify(args, expr, modules="numpy")

    def call(*values):
        out = f(*values)
        shape = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    return call


def compile_array(exprs, args):
    """Compile a nested list of expressions; the result stacks on trailing axes."""
    exprs = np.asarray(exprs, dtype=object)
    flat = [compile_scalar(e, args) for e in exprs.ravel()]

    def call(*values):
        parts = [f(*values) for f in flat]
        out = np.stack(parts, axis=-1)
        return out.reshape(out.shape[:-1] + exprs.shape)

    return call


def compile_bundle(blocks, args):
    """Compile several scalar or nested-list blocks into one numpy call.

    Returns a function giving a tuple with one array per block, shaped like
    :func:`compile_scalar` and :func:`compile_array` outputs.
    """
    shapes, flat, bounds = [], [], []
    for b in blocks:
        arr = np.asarray(b, dtype=object)
        shapes.append(arr.shape)
        bounds.append((len(flat), len(flat) + arr.size))
        flat.extend(arr.ravel())
    f = sp.lambdify(args, flat, modules="numpy", cse=True)
    width = len(flat)

    def call(*values):
        shape = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
        buf = np.empty(shape + (width,))
        for k, v in enumerate(f(*values)):
            buf[..., k] = v
        return tuple(
            buf[..., a] if s == () else buf[..., a:b].reshape(shape + s)
            for s, (a, b) in zip(shapes, bounds)
        )

    return call
