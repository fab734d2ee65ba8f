"""Command line driver: ``pathvisc <subcommand> --config run.toml``.

Subcommands ``lift``, ``flow``, ``local``, ``solve``, ``verify`` and ``all``
(``run`` is an alias of ``all``). Every run writes ``manifest.json`` (sorted
keys, no timestamps, config hash), a ``summary.txt`` table and plot-ready
CSV files into the output directory.

Exit codes: 0 when every check passes, 1 when an invariant check fails,
2 for an invalid configuration, 3 for a numerical abort.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import characteristics, expressions, hamiltonians, local_solver, pde_solver, perron_verify, rough_path
from .errors import (
    ConfigError,
    FlowDivergence,
    HamiltonianError,
    HorizonExceeded,
    InversionError,
    NumericalAbort,
    PathError,
    PreconditionError,
    StepRestrictionError,
)
from .grid import Grid, GridDatum, constant, gaussian, linear, quadratic, smooth_bump, concave_tent, expression

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUBCOMMANDS = ("lift", "flow", "local", "solve", "verify", "all", "run")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# configuration


def _get(section, key, prefix, default=None, kind=None, required=False, positive=False):
    name = f"{prefix}.{key}" if prefix else key
    if key not in section:
        if required:
            raise ConfigError(name, "missing")
        return default
    value = section[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        value = float(value)
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
    elif kind is str and not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    return value


def _table(doc, key, prefix="", required=True):
    name = f"{prefix}.{key}" if prefix else key
    if key not in doc:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    if not isinstance(doc[key], dict):
        raise ConfigError(name, "expected a section")
    return doc[key]


@dataclass
class RunConfig:
    """Validated run description; ``raw`` is the parsed document."""

    raw: dict
    digest: str
    base: str
    T: float
    H_spec: object
    F_spec: dict
    path_spec: dict
    u0_spec: dict
    box: list
    nodes: list
    dt: float
    theta_inv: float
    tol: float
    levels: int
    samples: int
    times: list
    out: str
    flow: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.box)

    @property
    def m(self):
        return len(self.H_spec) if isinstance(self.H_spec, list) else 1

    @property
    def seed(self):
        return self.path_spec.get("seed", 0)


def load_config(filename, seed=None, levels=None, out=None):
    """Parse and validate a TOML run configuration.

    Raises:
        ConfigError: naming the first offending key.
    """
    if not os.path.isfile(filename):
        raise ConfigError("config", f"file {filename!r} does not exist")
    with open(filename, "rb") as fh:
        data = fh.read()
    try:
        doc = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("config", f"not valid TOML: {exc}") from None
    base = os.path.dirname(os.path.abspath(filename))
    problem = _table(doc, "problem")
    numerics = _table(doc, "numerics")
    outputs = _table(doc, "outputs", required=False)
    T = _get(problem, "T", "problem", kind=float, required=True, positive=True)

    H = problem.get("H")
    if isinstance(H, dict):
        _get(H, "family", "problem.H", kind=str, required=True)
    elif isinstance(H, list):
        if not H:
            raise ConfigError("problem.H", "empty component list")
        for i, c in enumerate(H):
            if not isinstance(c, dict):
                raise ConfigError(f"problem.H[{i}]", "expected a table")
            _get(c, "family", f"problem.H[{i}]", kind=str, required=True)
    else:
        raise ConfigError("problem.H", "missing section")
    F = _table(problem, "F", "problem")
    _get(F, "family", "problem.F", kind=str, required=True)
    path = _table(problem, "path", "problem")
    source = _get(path, "source", "problem.path", kind=str, required=True)
    if source not in ("brownian", "file", "formula"):
        raise ConfigError("problem.path.source", f"unknown source {source!r}")
    path = dict(path)
    if source == "brownian":
        path["resolution"] = _get(path, "resolution", "problem.path", kind=int, required=True, positive=True)
        path["seed"] = _get(path, "seed", "problem.path", 0, kind=int)
    elif source == "file":
        f = _get(path, "file", "problem.path", kind=str, required=True)
        full = f if os.path.isabs(f) else os.path.join(base, f)
        if not os.path.isfile(full):
            raise ConfigError("problem.path.file", f"file {f!r} does not exist")
        path["file"] = full
    else:
        form = _get(path, "formula", "problem.path", required=True)
        if not isinstance(form, (str, list)):
            raise ConfigError("problem.path.formula", "expected an expression or a list of expressions")
        _get(path, "samples", "problem.path", kind=int, required=True, positive=True)
    if "scale" in path:
        _get(path, "scale", "problem.path", kind=float)
    if seed is not None:
        path["seed"] = int(seed)
    u0 = _table(problem, "u0", "problem")
    _get(u0, "kind", "problem.u0", kind=str, required=True)

    box = _get(numerics, "box", "numerics", required=True)
    if not (isinstance(box, list) and box and all(isinstance(b, list) and len(b) == 2 for b in box)):
        raise ConfigError("numerics.box", "expected a list of [lower, upper] pairs")
    for i, (lo, hi) in enumerate(box):
        if not hi > lo:
            raise ConfigError(f"numerics.box[{i}]", "upper must exceed lower")
    nodes = _get(numerics, "nodes", "numerics", required=True)
    nodes = [nodes] * len(box) if isinstance(nodes, int) else nodes
    if not (isinstance(nodes, list) and len(nodes) == len(box) and all(isinstance(k, int) and k >= 3 for k in nodes)):
        raise ConfigError("numerics.nodes", "expected an integer >= 3 per axis")
    dt = _get(numerics, "dt", "numerics", kind=float, required=True, positive=True)
    theta = _get(numerics, "theta_inv", "numerics", local_solver.THETA_INV, kind=float, positive=True)
    if not theta < 1:
        raise ConfigError("numerics.theta_inv", "must lie in (0, 1)")
    tol = _get(numerics, "tol", "numerics", 1e-6, kind=float, positive=True)
    lv = _get(numerics, "levels", "numerics", 0, kind=int)
    if levels is not None:
        lv = int(levels)
    if lv and lv < 2:
        raise ConfigError("numerics.levels", "rough mode needs at least 2 levels")
    samples = _get(numerics, "samples", "numerics", 2000, kind=int, positive=True)
    times = _get(outputs, "times", "outputs", [])
    every = _get(outputs, "every", "outputs", None, kind=float, positive=True)
    if every is not None:
        times = list(np.round(np.arange(1, int(round(T / every))) * every, 12))
    if not isinstance(times, list) or any(not isinstance(t, (int, float)) or not 0 <= t <= T for t in times):
        raise ConfigError("outputs.times", "expected times inside [0, T]")
    directory = out or _get(outputs, "directory", "outputs", "out", kind=str)
    flow = _table(doc, "flow", required=False)
    verify = _table(doc, "verify", required=False)
    return RunConfig(
        raw=doc,
        digest=hashlib.sha256(data).hexdigest(),
        base=base,
        T=T,
        H_spec=H,
        F_spec=dict(F),
        path_spec=path,
        u0_spec=dict(u0),
        box=[[float(a), float(b)] for a, b in box],
        nodes=list(nodes),
        dt=dt,
        theta_inv=theta,
        tol=tol,
        levels=lv,
        samples=samples,
        times=[float(t) for t in times],
        out=directory,
        flow=dict(flow),
        verify=dict(verify),
    )


# ---------------------------------------------------------------------------
# building blocks


def _params(spec, skip=("family", "kind")):
    return {k: v for k, v in spec.items() if k not in skip}


def build_hamiltonian(cfg):
    specs = cfg.H_spec if isinstance(cfg.H_spec, list) else [cfg.H_spec]
    comps = []
    for i, s in enumerate(specs):
        try:
            comps.extend(hamiltonians.builtin(s["family"], cfg.n, **_params(s)).components)
        except (HamiltonianError, ValueError, TypeError) as exc:
            key = "problem.H" if not isinstance(cfg.H_spec, list) else f"problem.H[{i}]"
            raise ConfigError(key, str(exc)) from None
    family = comps[0].label if len(comps) == 1 else "system"
    return hamiltonians.HamiltonianSystem(tuple(comps), family, {})


def build_f(cfg):
    try:
        return hamiltonians.builtin_f(cfg.F_spec["family"], cfg.n, **_params(cfg.F_spec))
    except (HamiltonianError, ValueError, TypeError) as exc:
        raise ConfigError("problem.F", str(exc)) from None


def build_path(cfg):
    spec = cfg.path_spec
    m = cfg.m
    try:
        if spec["source"] == "brownian":
            path = rough_path.brownian_lift(spec["seed"], m, cfg.T, spec["resolution"])
        elif spec["source"] == "file":
            path = rough_path.read_csv(spec["file"])
        else:
            forms = spec["formula"] if isinstance(spec["formula"], list) else [spec["formula"]]
            if len(forms) != m:
                raise ConfigError("problem.path.formula", f"need {m} components")
            ts = np.linspace(0.0, cfg.T, spec["samples"] + 1)
            cols = []
            _, _, tsym = expressions.symbols(1)
            for f in forms:
                fn = expressions.compile_scalar(expressions.parse(f, 1, allow=("t",)), [tsym])
                vals = np.asarray(fn(ts), dtype=float) * np.ones_like(ts)
                cols.append(vals - vals[0])
            path = rough_path.piecewise_linear_lift(ts, np.stack(cols, axis=1))
    except PathError as exc:
        raise ConfigError("problem.path", str(exc)) from None
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("problem.path", str(exc)) from None
    if path.m != m:
        raise ConfigError("problem.path", f"path has {path.m} channels but H has {m} components")
    if "scale" in spec:
        path = path.scaled(float(spec["scale"]))
    return path


DATA = {
    "gaussian": gaussian,
    "bump": smooth_bump,
    "quadratic": quadratic,
    "linear": linear,
    "constant": constant,
    "tent": concave_tent,
}


def build_datum(spec, n, key="problem.u0"):
    kind = spec["kind"]
    params = _params(spec)
    try:
        if kind == "expression":
            return expression(str(params["expr"]), n)
        if kind not in DATA:
            raise ConfigError(f"{key}.kind", f"unknown datum {kind!r}; expected one of {sorted(DATA) + ['expression']}")
        if kind in ("gaussian", "bump", "tent", "constant"):
            params.setdefault("n", n)
        return DATA[kind](**params)
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(key, str(exc)) from None


def build_grid(cfg):
    return Grid.from_box(cfg.box, cfg.nodes)


def build_problem(cfg):
    grid = build_grid(cfg)
    H = build_hamiltonian(cfg)
    if H.n != grid.n:
        raise ConfigError("numerics.box", f"box has {grid.n} axes but H acts on n = {H.n}")
    return pde_solver.PDEProblem(
        build_f(cfg), H, build_path(cfg), build_datum(cfg.u0_spec, grid.n), grid, cfg.T, cfg.dt,
        times=tuple(cfg.times), label=os.path.basename(cfg.out)
    )


# ---------------------------------------------------------------------------
# artifacts


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(data, filename):
    with open(filename, "w") as fh:
        json.dump(_clean(data), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_field_csv(field_, filename, mask=None):
    """Rows ``(t, x1.., u)`` for every node (and output time)."""
    grid = field_.grid
    nodes = grid.nodes()
    keep = np.ones(grid.size, dtype=bool) if mask is None else np.asarray(mask).reshape(-1)
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(grid.n)] + ["u"])
        for t, vals in zip(field_.times, field_.values):
            flat = vals.reshape(-1)
            for x, v in zip(nodes[keep], flat[keep]):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(v))])


class Run:
    """Collects results, checks and artifacts of one CLI invocation."""

    def __init__(self, cfg, out):
        self.cfg = cfg
        self.out = out
        self.sections = {}
        self.checks = []
        os.makedirs(out, exist_ok=True)

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def file(self, name):
        return os.path.join(self.out, name)

    def finish(self, command):
        manifest = {
            "command": command,
            "config_sha256": self.cfg.digest,
            "seed": self.cfg.seed,
            "levels": self.cfg.levels,
            "sections": self.sections,
            "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in self.checks],
            "passed": all(ok for _, ok, _ in self.checks),
        }
        write_json(manifest, self.file("manifest.json"))
        width = max([len(n) for n, _, _ in self.checks] + [5])
        lines = [f"{'check'.ljust(width)}  result  detail"]
        for n, ok, d in self.checks:
            lines.append(f"{n.ljust(width)}  {'pass' if ok else 'FAIL'}    {d}")
        text = "\n".join(lines) + "\n"
        with open(self.file("summary.txt"), "w") as fh:
            fh.write(text)
        print(text, end="")
        return EXIT_OK if manifest["passed"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# pipelines


def cmd_lift(cfg, run):
    path = build_path(cfg)
    rough_path.write_csv(path, run.file("path.csv"))
    chen = rough_path.max_chen_defect(path)
    geo = rough_path.max_geometric_defect(path)
    tol = rough_path.CONSTRUCTION_TOL if cfg.path_spec["source"] != "file" else rough_path.VALIDATION_TOL
    run.sections["lift"] = {
        "m": path.m,
        "samples": int(path.times.size),
        "T": path.T,
        "alpha": path.alpha,
        "chen_defect": chen,
        "geometric_defect": geo,
        "holder_norm": rough_path.holder_norm(path),
        "tolerance": tol,
    }
    run.check("lift.chen", chen <= tol, f"{chen:.3g}")
    run.check("lift.geometric", geo <= tol, f"{geo:.3g}")
    return path


def cmd_flow(cfg, run):
    H, path = build_hamiltonian(cfg), build_path(cfg)
    u0 = build_datum(cfg.u0_spec, cfg.n)
    count = int(cfg.flow.get("points", 5))
    mode = cfg.flow.get("mode", "auto")
    lo, hi = np.array(cfg.box).T
    pts = np.linspace(lo, hi, count + 2)[1:-1]
    p = u0.grad(pts)
    times = path.times
    states = characteristics.flow_times(H, path, pts, p, 0.0, times, mode=mode, hess=u0.hess(pts))
    with open(run.file("trajectories.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        n = cfg.n
        w.writerow(["point", "t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["z", "det_jx"])
        det = np.linalg.det(states.jx)
        for j in range(pts.shape[0]):
            for k, t in enumerate(times):
                w.writerow([j, repr(float(t))] + [repr(float(v)) for v in states.x[k, j]]
                           + [repr(float(v)) for v in states.p[k, j]] + [repr(float(states.z[k, j])), repr(float(det[k, j]))])
    info = {"mode": str(characteristics.auto_mode(H) if mode == "auto" else mode), "points": pts.tolist(),
            "min_det_jx": float(np.min(np.linalg.det(states.jx)))}
    if H.m == 1:
        d = characteristics.mode_equivalence_defect(H, path, pts, p, 0.0, path.T, hess=u0.hess(pts))
        info["mode_equivalence_defect"] = d
        run.check("flow.mode_equivalence", d <= float(cfg.flow.get("equivalence_tol", 1e-5)), f"{d:.3g}")
    run.sections["flow"] = info
    run.check("flow.finite", np.all(np.isfinite(states.x)) and np.all(np.isfinite(states.z)))


def _skip_nonsmooth(cfg, run, stage):
    u0 = build_datum(cfg.u0_spec, cfg.n)
    if u0.smooth:
        return False
    run.sections[stage] = {"skipped": f"initial datum {u0.label!r} is not C^2"}
    return True


def cmd_local(cfg, run):
    if _skip_nonsmooth(cfg, run, "local"):
        return
    H, path, grid = build_hamiltonian(cfg), build_path(cfg), build_grid(cfg)
    u0 = build_datum(cfg.u0_spec, cfg.n)
    rep = local_solver.horizon(H, path, u0, 0.0, grid, cfg.theta_inv, t_max=cfg.T)
    with open(run.file("horizon.json"), "w") as fh:
        fh.write(rep.to_json() + "\n")
    info = {"horizon": rep.to_dict()}
    ok = rep.h > 0
    run.check("local.horizon_positive", ok, f"h = {rep.h:.6g}")
    if ok:
        times = [t for t in cfg.times + [cfg.T] if t <= rep.h + 1e-12] or [rep.h]
        snaps = local_solver.apply_times(H, path, u0, 0.0, times, grid, cfg.theta_inv)
        with open(run.file("local.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(grid.n)] + ["phi"] + [f"dphi{i + 1}" for i in range(grid.n)])
            nodes = grid.nodes()
            for s in snaps:
                keep = s.trusted.reshape(-1)
                for x, v, g in zip(nodes[keep], s.phi.reshape(-1)[keep], s.dphi.reshape(-1, grid.n)[keep]):
                    w.writerow([repr(float(s.t))] + [repr(float(c)) for c in x] + [repr(float(v))] + [repr(float(c)) for c in g])
        props = local_solver.check_properties(
            H, path, u0, u0.shifted(-0.1), 0.0, times, grid, k=0.5, theta_inv=cfg.theta_inv
        )
        info["properties"] = props.__dict__
        dx = float(np.max(grid.spacing))
        worst = props.worst()
        run.check("local.shift", worst["shift"] <= 1e-10, f"{worst['shift']:.3g}")
        run.check("local.comparison", worst["comparison"] <= 5 * dx**2, f"{worst['comparison']:.3g}")
        run.check("local.semigroup", worst["semigroup"] <= 5 * dx**2, f"{worst['semigroup']:.3g}")
    run.sections["local"] = info


def cmd_solve(cfg, run):
    problem = build_problem(cfg)
    if cfg.levels:
        result, report = pde_solver.solve_rough(problem, cfg.levels)
        run.check("solve.cauchy_decreasing", report["decreasing"], str(np.round(report["cauchy"], 6).tolist()))
    else:
        result = pde_solver.solve_smooth(problem)
    write_field_csv(result.field, run.file("solution.csv"))
    run.sections["solve"] = result.manifest
    oracle = cfg.raw.get("solve", {}).get("oracle")
    if oracle is not None:
        err = oracle_error(problem, result, oracle)
        limit = float(cfg.raw["solve"].get("oracle_tol", 5e-3 if oracle == "heat" else 0.05))
        run.sections["solve"]["oracle"] = {"name": oracle, "sup_error": err, "tolerance": limit}
        run.check(f"solve.oracle_{oracle}", err <= limit, f"{err:.3g} <= {limit:g}")
    run.check("solve.finite", np.all(np.isfinite(result.field.values)))
    return problem, result


def oracle_error(problem, result, name):
    """Sup error against the heat or Hopf-Lax closed form over trusted nodes and output times."""
    grid, mask = problem.grid, result.trusted
    x = grid.mesh()
    errs = []
    for t, u in zip(result.field.times, result.field.values):
        if name == "heat":
            exact = pde_solver.heat_oracle(x, t, problem.F.params.get("nu", 1.0))
        elif name == "hopf_lax":
            tau = float(np.ravel(problem.path.value_at(t))[0])
            if tau <= 0:
                continue
            nodes = grid.nodes()
            exact = pde_solver.hopf_lax(problem.initial_values().reshape(-1), nodes, nodes, tau).reshape(grid.shape)
        else:
            raise ConfigError("solve.oracle", f"unknown oracle {name!r}; expected 'heat' or 'hopf_lax'")
        errs.append(float(np.max(np.abs(u - exact)[mask], initial=0.0)))
    return max(errs, default=0.0)


def _shift_family(pair, probes, problem, cfg):
    """Envelope of translated sub-solutions and its sub-solution report."""
    shifts = cfg.verify.get("translates", [])
    if not shifts:
        return None
    grid = problem.grid
    subs, trusted = [], pair.trusted.copy()
    u0 = build_datum(cfg.u0_spec, cfg.n)
    for c in shifts:
        phi = u0.translated(np.broadcast_to(np.asarray(c, dtype=float), (cfg.n,)))
        p = pde_solver.build_sub_super(problem.with_(u0=phi), phi, cfg.theta_inv, cfg.samples, cfg.seed)
        subs.append(p.lower)
        trusted &= p.trusted
    env, report, _ = perron_verify.envelope_check(
        subs, probes, problem.F, problem.H, problem.path, cfg.tol, trusted, theta_inv=cfg.theta_inv
    )
    data = [u0.translated(np.broadcast_to(np.asarray(c, dtype=float), (cfg.n,))) for c in shifts]

    def start(x):
        return np.max(np.stack([d.value(x) for d in data]), axis=0)

    return env, report, trusted, start


def cmd_verify(cfg, run):
    if _skip_nonsmooth(cfg, run, "verify"):
        return
    problem = build_problem(cfg)
    u0 = build_datum(cfg.u0_spec, cfg.n)
    grid = problem.grid
    pair = pde_solver.build_sub_super(problem, u0, cfg.theta_inv, cfg.samples, cfg.seed)
    sol = pde_solver.solve_smooth(problem)
    tol = pde_solver.scheme_tolerance(problem, sol)
    mask = pair.trusted & sol.trusted
    u = sol.field.values
    below = float(np.max((pair.lower.values - u)[:, mask], initial=-np.inf))
    above = float(np.max((u - pair.upper.values)[:, mask], initial=-np.inf))
    info = {"constants": pair.constants(), "scheme_tolerance": tol, "trusted_nodes": int(mask.sum()),
            "lower_minus_u": below, "u_minus_upper": above}
    run.check("verify.trusted_region", mask.any(), f"{int(mask.sum())} nodes")
    run.check("verify.sandwich", below <= tol and above <= tol, f"{max(below, above):.3g} <= {tol:.3g}")
    cmp_lu = perron_verify.compare(pair.lower, pair.upper, tol=tol, trusted=mask)
    cmp_su = perron_verify.compare(pair.lower, sol.field, tol=tol, trusted=mask)
    info["compare_lower_upper"] = cmp_lu.to_dict()
    info["compare_lower_solution"] = cmp_su.to_dict()
    run.check("verify.compare_lower_upper", not cmp_lu.exceeded)
    run.check("verify.compare_lower_solution", not cmp_su.exceeded)

    count = int(cfg.verify.get("probes", 8))
    probes = perron_verify.random_probes(
        grid, pair.lower.times, count, seed=cfg.seed, trusted=mask,
        r=float(cfg.verify.get("probe_r", 0.5)), h=float(cfg.verify.get("probe_h", 0.15)), data=(u0,)
    )
    rep = perron_verify.check_subsolution(pair.lower, probes, problem.F, problem.H, problem.path, cfg.tol, mask,
                                          theta_inv=cfg.theta_inv)
    write_json(rep.to_dict(), run.file("probes.json"))
    info["subsolution"] = {k: v for k, v in rep.to_dict().items() if k != "probes"}
    run.check("verify.subsolution", rep.passed(), f"max {rep.max_violation:.3g}, {rep.interior} interior")

    fam = _shift_family(pair, probes, problem, cfg)
    if fam is not None:
        env, erep, etrust, env0 = fam
        eprob = problem.with_(u0=env0)
        esol = pde_solver.solve_smooth(eprob)
        etol = pde_solver.scheme_tolerance(eprob, esol)
        m2 = etrust & esol.trusted
        gap = float(np.max((env.values - esol.field.values)[:, m2], initial=-np.inf))
        info["envelope"] = {"subsolution": {k: v for k, v in erep.to_dict().items() if k != "probes"},
                            "gap_to_solution": gap, "tolerance": etol}
        run.check("verify.envelope_subsolution", erep.passed(), f"max {erep.max_violation:.3g}")
        run.check("verify.envelope_below_solution", gap <= etol, f"{gap:.3g} <= {etol:.3g}")

    if "bump" in cfg.verify:
        info["bump"] = _bump(cfg, problem, pair, run)
    write_field_csv(pair.lower, run.file("lower.csv"))
    write_field_csv(pair.upper, run.file("upper.csv"))
    run.sections["verify"] = info


def _bump(cfg, problem, pair, run):
    spec_cfg = cfg.verify["bump"]
    key = "verify.bump"
    gamma = _get(spec_cfg, "gamma", key, kind=float, required=True, positive=True)
    r = _get(spec_cfg, "r", key, kind=float, required=True, positive=True)
    s = _get(spec_cfg, "s", key, kind=float, required=True, positive=True)
    kappa = _get(spec_cfg, "kappa", key, kind=float, required=True, positive=True)
    t0 = _get(spec_cfg, "t0", key, kind=float, required=True, positive=True)
    h = _get(spec_cfg, "h", key, kind=float, required=True, positive=True)
    x0 = np.broadcast_to(np.asarray(spec_cfg.get("x0", 0.0), dtype=float), (cfg.n,))
    grid = problem.grid
    pad = int(spec_cfg.get("pad", 10))
    big = grid.padded(pad)
    u0 = build_datum(cfg.u0_spec, cfg.n)
    snap = local_solver.apply(problem.H, problem.path, u0, 0.0, t0, big, cfg.theta_inv)
    phi = GridDatum(big, snap.phi, snap.dphi, snap.d2phi, "S(t0,0)u0")
    C = pair.C_lower
    probe = perron_verify.TestFunctionProbe(x0, t0, phi, (C * t0, C, 0.0), r=r * 1.5, h=h, label="bump")
    wk, cert = perron_verify.bump(
        pair.lower, probe, perron_verify.BumpSpec(gamma, r, s), kappa, problem.F, problem.H, problem.path,
        tol=cfg.tol, trusted=pair.trusted, theta_inv=cfg.theta_inv
    )
    with open(run.file("bump_certificate.json"), "w") as fh:
        fh.write(cert.to_json() + "\n")
    write_field_csv(wk, run.file("bump.csv"))
    for name, ok in sorted(cert.clauses.items()):
        run.check(f"verify.bump.{name}", ok)
    return cert.to_dict()


PIPELINE = {"lift": cmd_lift, "flow": cmd_flow, "local": cmd_local, "solve": cmd_solve, "verify": cmd_verify}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pathvisc", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", help="output directory (overrides outputs.directory)")
    parser.add_argument("--seed", type=int, help="Brownian seed (overrides the config)")
    parser.add_argument("--levels", type=int, help="dyadic levels for rough mode")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, levels=args.levels, out=args.out)
        out = cfg.out if os.path.isabs(cfg.out) or args.out else os.path.join(os.getcwd(), cfg.out)
        run = Run(cfg, out)
        steps = list(PIPELINE) if args.command in ("all", "run") else [args.command]
        for name in steps:
            PIPELINE[name](cfg, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepRestrictionError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        print(f"required dt <= {exc.required_dt:.6g}", file=sys.stderr)
        return EXIT_ABORT
    except (NumericalAbort, FlowDivergence, HorizonExceeded, InversionError, PreconditionError) as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT
    return run.finish(args.command)


if __name__ == "__main__":
    sys.exit(main())
