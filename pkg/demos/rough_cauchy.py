"""Dyadic Cauchy tables for a Brownian driver against the exact Hopf-Lax oracle.

For ``du = |Du|^2 / 2 dW`` with tent data each monotone piece of a
piecewise-linear path is a Hopf-Lax sup or inf, so the level-to-level
differences can be computed exactly and set beside the scheme's.

Run with ``python3 demos/rough_cauchy.py``.
"""

import numpy as np

from pathvisc import hamiltonians, pde_solver
from pathvisc.grid import Grid, concave_tent
from pathvisc.rough_path import brownian_lift

LEVELS = 3
times = np.arange(1, 8) / 8

for seed in range(6):
    problem = pde_solver.PDEProblem(
        F=hamiltonians.builtin_f("zero"),
        H=hamiltonians.builtin("x_independent"),
        path=brownian_lift(seed, 1, 1.0, 64),
        u0=concave_tent(1.0),
        grid=Grid.from_box([[-3.0, 3.0]], 769),
        T=1.0,
        dt=1 / 16,
        times=tuple(times),
    )
    _, report = pde_solver.solve_rough(problem, LEVELS)
    nodes = problem.grid.nodes()
    u0 = problem.initial_values().ravel()
    inner = np.abs(nodes[:, 0]) < 1.5
    exact = []
    for j in range(LEVELS + 1):
        p = problem.path.subsample(2 ** (LEVELS - j))
        values = pde_solver.hopf_lax_path(u0, nodes, np.diff(p.values[:, 0]))
        exact.append(values[[int(np.argmin(np.abs(p.times - t))) for t in times]])
    gaps = [np.max(np.abs(a - b)[:, inner]) for a, b in zip(exact[:-1], exact[1:])]
    print(f"seed {seed}: scheme {np.round(report['cauchy'], 4)}  exact {np.round(gaps, 4)}")
