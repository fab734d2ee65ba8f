"""Check Perron's construction on a finite family: envelope and bump.

Run with ``python3 demos/perron.py``.
"""

import numpy as np

from pathvisc import hamiltonians, local_solver, pde_solver, perron_verify
from pathvisc.grid import Grid, GridDatum, gaussian
from pathvisc.rough_path import piecewise_linear_lift

t = np.linspace(0.0, 1.0, 41)
problem = pde_solver.PDEProblem(
    F=hamiltonians.builtin_f("heat", nu=0.2),
    H=hamiltonians.builtin("x_independent"),
    path=piecewise_linear_lift(t, 0.2 * t),
    u0=gaussian(0.5, 2.0),
    grid=Grid.from_box([[-3.0, 3.0]], 121),
    T=1.0,
    dt=0.005,
    times=tuple(np.arange(1, 40) / 40),
)
pair = pde_solver.build_sub_super(problem, problem.u0)

# Translated data give a family of sub-solutions; their max is again one.
subs, trusted = [], pair.trusted.copy()
for c in (-0.4, -0.2, 0.0, 0.2, 0.4):
    phi = problem.u0.translated([c])
    p = pde_solver.build_sub_super(problem.with_(u0=phi), phi)
    subs.append(p.lower)
    trusted &= p.trusted
probes = perron_verify.random_probes(problem.grid, pair.lower.times, 10, seed=0, trusted=trusted, r=0.6)
env, rep, members = perron_verify.envelope_check(subs, probes, problem.F, problem.H, problem.path, 1e-6, trusted)
print(f"envelope: {rep.interior} interior probes, max violation {rep.max_violation:.2e}")
print("members: ", [f"{m.max_violation:.1e}" for m in members])

# The lower field fails strictly against S(t,0)u0 + Ct near (0, 1/2); raising it there stays a sub-solution.
big = problem.grid.padded(10)
snap = local_solver.apply(problem.H, problem.path, problem.u0, 0.0, 0.5, big)
phi = GridDatum(big, snap.phi, snap.dphi, snap.d2phi, "S(t0,0)u0")
C = pair.C_lower
probe = perron_verify.TestFunctionProbe([0.0], 0.5, phi, (0.5 * C, C, 0.0), r=0.6, h=0.3)
spec = perron_verify.BumpSpec(gamma=0.1, r=0.4, s=0.2)
raised, cert = perron_verify.bump(pair.lower, probe, spec, 0.5, problem.F, problem.H, problem.path,
                                  trusted=pair.trusted)
print(cert.to_json())
print(f"largest raise {np.max(raised.values - pair.lower.values):.2e}")
