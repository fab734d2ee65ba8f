"""Sandwich a monotone scheme between the constructed sub- and super-solutions.

Run with ``python3 demos/sandwich.py``.
"""

import numpy as np

from pathvisc import hamiltonians, pde_solver, perron_verify
from pathvisc.grid import Grid, gaussian
from pathvisc.rough_path import brownian_lift

problem = pde_solver.PDEProblem(
    F=hamiltonians.builtin_f("heat", nu=0.2),
    H=hamiltonians.builtin("x_independent"),
    path=brownian_lift(seed=3, m=1, T=1.0, resolution=64),
    u0=gaussian(0.5, 1.0),
    grid=Grid.from_box([[-6.0, 6.0]], 241),
    T=1.0,
    dt=1 / 256,
    times=tuple(np.arange(1, 8) / 8),
)
pair = pde_solver.build_sub_super(problem, problem.u0)
print("constants", {k: round(v, 4) if isinstance(v, float) else v for k, v in pair.constants().items()})

sol = pde_solver.solve_smooth(problem)
tol = pde_solver.scheme_tolerance(problem, sol)
mask = pair.trusted & sol.trusted
print(f"scheme tolerance {tol:.2e} on {mask.sum()} trusted nodes")
for t, lo, u, hi in zip(sol.field.times, pair.lower.values, sol.field.values, pair.upper.values):
    print(f"t = {t:.3f}  min(u - lower) {np.min((u - lo)[mask]):+.4f}  min(upper - u) {np.min((hi - u)[mask]):+.4f}")

# sup (u - v)_+ never grows for ordered pairs
rep = perron_verify.compare(pair.lower, sol.field, tol=tol, trusted=mask)
print("excess of lower over u:", np.round(rep.excess, 6))
