"""Lift a Brownian sample, move characteristics along it, and find the horizon.

Run with ``python3 demos/lift_and_flow.py``.
"""

import numpy as np

from pathvisc import hamiltonians, local_solver
from pathvisc.characteristics import flow, mode_equivalence_defect
from pathvisc.grid import Grid, quadratic
from pathvisc.rough_path import brownian_lift, holder_norm, max_chen_defect, max_geometric_defect

# A 2d Brownian sample on 1024 dyadic intervals, lifted piecewise linearly.
path = brownian_lift(seed=0, m=2, T=1.0, resolution=1024)
print(f"Chen defect      {max_chen_defect(path):.2e}")
print(f"geometric defect {max_geometric_defect(path):.2e}")
first, second = holder_norm(path, parts=True)
print(f"0.4-Holder parts {first:.3f} + {second:.3f}")

# Levy area of the dyadic lifts as the mesh is refined; piecewise-linear pieces carry none of their own.
for step in (256, 64, 16, 1):
    p = path.subsample(step)
    area = 0.5 * (p.second_level[-1, 0, 1] - p.second_level[-1, 1, 0])
    print(f"{p.times.size - 1:5d} intervals: Levy area {area:+.4f}")

# For H = |p|^2 / 2 the characteristics are straight lines in W.
H = hamiltonians.builtin("x_independent")
scalar = brownian_lift(seed=1, m=1, T=1.0, resolution=512)
x, p = np.array([[0.0], [1.0]]), np.array([[1.0], [-0.5]])
state = flow(H, scalar, x, p, 0.0, 1.0)
tau = scalar.increment(0.0, 1.0)[0]
print("X(1)", state.x.ravel(), "expected", (x - p * tau).ravel())

# Non-commuting components need the Davie step; time change and rough step agree when they commute.
Hc = hamiltonians.builtin("separated_potential", 1, f="0.5*cos(x1)")
print(f"mode gap {mode_equivalence_defect(Hc, scalar, x, p, 0.0, 1.0):.2e}")

# The flow of a convex quadratic loses invertibility once a (W_t - W_0) reaches 1 - theta.
for a in (1.0, 4.0, 8.0):
    rep = local_solver.horizon(H, scalar, quadratic(a), 0.0, Grid.from_box([[-1, 1]], 17))
    print(f"a = {a:3.0f}: horizon {rep.h:.4f}, min det {rep.min_det:.3f}")
