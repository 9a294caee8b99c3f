"""Scenario-driven command line front end.

A scenario is a JSON file::

    {
      "system": "quadratic-triplet",          # or {"builtin": name, "params": {...}}
                                              # or an inline definition
      "task": "simulate" | "verify" | "partition" | "lift",
      "integrator": {"method": "rk4", "dt": 1e-3, "steps": 1000},
      "partition": {"beta": 1.0, ...},
      "lift": {"extra": ["x^2 + z^2"]},
      "tolerance": 1e-8,
      "outputs": {"report": "report.json", "trajectory": "trajectory.csv"}
    }

Inline systems give coordinate names and expressions::

    {"coordinates": ["x", "y", "z"], "hamiltonian": "2*y",
     "constraints": ["(x^2 - y^2 + z^2)/2"],
     "map": {"chart": ["q", "p"], "components": ["(q^2-p^2)/4", ...]}}

Exit codes: 0 success, 2 residual above threshold, 1 I/O, parse or input error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dynamics, embedding, statmech, systems
from .brackets import Layout
from .expressions import ExpressionError, field_from_expression

__all__ = ["ScenarioError", "load_scenario", "run_scenario", "main"]

log = logging.getLogger("hiddennambu")

EXIT_OK, EXIT_ERROR, EXIT_RESIDUAL = 0, 1, 2
TASKS = ("simulate", "verify", "partition", "lift")


class ScenarioError(ValueError):
    pass


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc.msg} at line {exc.lineno}, column {exc.colno}")
    if not isinstance(data, dict) or "system" not in data:
        raise ScenarioError(f"{path}: scenario needs a 'system' entry")
    return data


# ---------------------------------------------------------------------------
# system construction
# ---------------------------------------------------------------------------

def _inline_system(spec):
    names = list(spec.get("coordinates", []))
    if not names:
        raise ScenarioError("inline system needs 'coordinates'")
    if "hamiltonian" not in spec:
        raise ScenarioError("inline system needs 'hamiltonian'")
    H = field_from_expression(spec["hamiltonian"], names)
    G = tuple(field_from_expression(e, names) for e in spec.get("constraints", []))
    arity = int(spec.get("arity", len(G) + 2))
    if len(names) % arity:
        raise ScenarioError("coordinate count is not a multiple of the arity")
    nsys = systems.NambuSystem(H, G, Layout.multiplets(arity, len(names) // arity))
    vmap = None
    if "map" in spec:
        m = spec["map"]
        chart = list(m["chart"])
        comps = tuple(field_from_expression(e, chart) for e in m["components"])
        if len(comps) != len(names):
            raise ScenarioError("map needs one component per coordinate")
        vmap = systems.VariableMap(len(chart) // 2, comps, nsys.layout)
    return {"name": spec.get("name", "inline"), "nambu": nsys, "varmap": vmap,
            "bundle": None}


def build_system(spec):
    if isinstance(spec, str):
        spec = {"builtin": spec}
    if "builtin" in spec:
        b = systems.make_builtin(spec["builtin"], **spec.get("params", {}))
        return {"name": b.name, "nambu": b.nambu, "varmap": b.varmap, "bundle": b}
    return _inline_system(spec)


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _chart_samples(sysd, count, seed):
    vmap = sysd["varmap"]
    if vmap is None:
        raise ScenarioError("constraint check needs inverse or embedding")
    return _rng(seed).uniform(-1.5, 1.5, size=(count, 2 * vmap.n))


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

def _task_verify(sysd, sc, seed):
    count = int(sc.get("points", 100))
    pts = _chart_samples(sysd, count, seed)
    report = {"task": "verify", "system": sysd["name"], "points": count}
    b = sysd["bundle"]
    if b is not None and b.generalized is not None:
        res = systems.verify_generalized_conditions(b.generalized, sysd["varmap"], pts)
        report.update(xx=res.xx, xz=res.xz, zz=res.zz)
        report["residual"] = res.max()
    else:
        nsys = sysd["nambu"]
        report["residual"] = systems.verify_induced_constraints(
            sysd["varmap"], nsys.constraints, pts)
    return report, report["residual"], None


def _start_point(sysd, sc):
    nsys = sysd["nambu"]
    if "start" in sc:
        x0 = np.asarray(sc["start"], dtype=float)
    elif "start_chart" in sc:
        x0 = sysd["varmap"].forward(sc["start_chart"])
    else:
        raise ScenarioError("simulate needs 'start' or 'start_chart'")
    if x0.shape != (nsys.dim,):
        raise ScenarioError(f"start point needs {nsys.dim} coordinates")
    return x0


def _task_simulate(sysd, sc, seed):
    nsys = sysd["nambu"]
    if nsys is None:
        raise ScenarioError("system has no Nambu form to simulate")
    cfg = dynamics.IntegratorConfig(**sc.get("integrator", {}))
    x0 = _start_point(sysd, sc)
    diags = {"H": nsys.hamiltonian.func}
    for i, g in enumerate(nsys.constraints):
        diags[f"G{i + 1}"] = g.func
    traj = dynamics.integrate(lambda s: dynamics.nambu_rhs(nsys, s), x0, cfg, diags)
    drift = max(traj.drift(k) for k in diags)
    report = {"task": "simulate", "system": sysd["name"], "steps": len(traj.times) - 1,
              "dt": cfg.dt, "method": cfg.method, "final": traj.final.tolist(),
              "drift": {k: traj.drift(k) for k in diags}, "residual": drift,
              "error": traj.error}
    return report, drift, traj


def _task_partition(sysd, sc, seed):
    b = sysd["bundle"]
    if b is None or b.branches is None:
        raise ScenarioError("partition needs a built-in system with a branch solver")
    p = dict(sc.get("partition", {}))
    if "beta" in sc:
        p.setdefault("beta", sc["beta"])
    p.setdefault("beta", 1.0)
    p["seed"] = int(p.get("seed", seed))
    cfg = statmech.PartitionConfig(**p)
    res = statmech.normalization_factor(b.nambu, b.branches, b.hamiltonian, cfg)
    report = {"task": "partition", "system": sysd["name"], "ratio": res.ratio,
              "ratio_stderr": res.error, "branch_count": res.branch_count,
              "predicted_ratio": res.predicted_ratio,
              "z_nambu": res.z_nambu.to_dict(),
              "z_hamiltonian": res.z_hamiltonian.to_dict()}
    return report, None, None


def _task_lift(sysd, sc, seed):
    nsys = sysd["nambu"]
    if nsys is None or len(nsys.layout.blocks) != 1:
        raise ScenarioError("lift needs a single-multiplet Nambu system")
    lift = sc.get("lift", {})
    names = list(lift.get("coordinates") or
                 [chr(ord("x") + i) if nsys.dim <= 3 else f"x{i + 1}" for i in range(nsys.dim)])
    extra = [field_from_expression(e, names) for e in lift.get("extra", [])]
    spec = embedding.graph_lift(nsys, extra)
    pts = _rng(seed).uniform(-1.5, 1.5, size=(int(sc.get("points", 20)), nsys.dim))
    residual = embedding.verify_lift_conditions(spec, pts)
    report = {"task": "lift", "system": sysd["name"], "r": spec.r, "residual": residual}
    traj = None
    if "start" in sc and residual <= sc.get("tolerance", 1e-8):
        lifted = embedding.lift_nambu_system(spec, pts)
        cfg = dynamics.IntegratorConfig(**sc.get("integrator", {}))
        x0 = np.asarray(sc["start"], dtype=float)
        a = dynamics.integrate(lambda s: dynamics.nambu_rhs(nsys, s), x0, cfg)
        traj = dynamics.integrate(lambda s: dynamics.nambu_rhs(lifted, s),
                                  spec.lift_point(x0), cfg)
        report["projection_error"] = float(np.max(np.abs(traj.states[:, :nsys.dim] - a.states)))
    return report, residual, traj


_RUNNERS = {"verify": _task_verify, "simulate": _task_simulate,
            "partition": _task_partition, "lift": _task_lift}


def _dump(obj):
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, float) and not np.isfinite(o):
            return None
        if isinstance(o, np.generic):
            return clean(o.item())
        return o
    return json.dumps(clean(obj), sort_keys=True, indent=2) + "\n"


def run_scenario(path, task=None, seed=None, out_dir=None, tolerance=None):
    """Run one scenario file; returns the process exit code."""
    try:
        sc = load_scenario(path)
        task = task or sc.get("task")
        if task not in TASKS:
            raise ScenarioError(f"unknown task {task!r}")
        seed = int(seed if seed is not None else sc.get("seed", 0))
        tol = float(tolerance if tolerance is not None else sc.get("tolerance", 1e-8))
        out_dir = out_dir or sc.get("out_dir") or os.path.dirname(os.path.abspath(path))
        outputs = sc.get("outputs", {})
        sysd = build_system(sc["system"])
        report, residual, traj = _RUNNERS[task](sysd, sc, seed)
        report["seed"] = seed
        report["tolerance"] = tol
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, outputs.get("report", f"{task}.json")), "w") as fh:
            fh.write(_dump(report))
        if traj is not None:
            dynamics.write_trajectory_csv(
                traj, os.path.join(out_dir, outputs.get("trajectory", f"{task}.csv")))
    except (OSError, ScenarioError, ExpressionError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if residual is not None and not residual <= tol:
        print(f"residual {residual:.3e} exceeds threshold {tol:.3e}", file=sys.stderr)
        return EXIT_RESIDUAL
    log.info("%s finished", task)
    return EXIT_OK


def _report(path):
    if path.endswith(".csv"):
        traj, names = dynamics.read_trajectory_csv(path)
        summary = {"rows": len(traj.times), "t_end": float(traj.times[-1]),
                   "coordinates": names, "final": traj.final.tolist()}
    else:
        with open(path, encoding="utf-8") as fh:
            summary = json.load(fh)
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def main(argv=None):
    ap = argparse.ArgumentParser(prog="hiddennambu")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out-dir", default=None)
    ap.add_argument("--tolerance", type=float, default=None)
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in TASKS:
        p = sub.add_parser(name, help=f"run a scenario as a {name} task")
        p.add_argument("scenario")
    p = sub.add_parser("report", help="summarize a JSON report or trajectory CSV")
    p.add_argument("path")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(asctime)s %(message)s")
    if args.command == "report":
        try:
            return _report(args.path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
    return run_scenario(args.scenario, args.command, args.seed, args.out_dir, args.tolerance)


if __name__ == "__main__":
    sys.exit(main())
