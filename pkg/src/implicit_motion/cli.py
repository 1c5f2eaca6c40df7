"""``implicit-motion`` command line front end.

Subcommands::

    check FILE                   validate a problem file, pin sign det d2 g,
                                 spot-check tangency and positivity of B^-1 C
    degree FILE [--map F|Phi]    degree of the augmented map on the degree box
    simulate FILE [--twin]       integrate the unforced motion (CSV)
    reactive FILE --x .. --u ..  reactive force at a chart state
    trace FILE [--origin auto]   follow a branch of periodic solutions (CSV)
    example NAME | --list | --verify [NAME]

Exit status: 0 on success, 1 on a numerical failure, 2 on bad input.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .continuation import PeriodicProblem, newton_correct, trace_branch
from .degree import (AugmentedMap, degree_sign_sum, find_zeros, mean_field, pin_sign,
                     tangent_field_degree)
from .dynamics import ForceField, Motion, compare_dae_ode, integrate, reactive_force
from .errors import ImplicitMotionError, InputError, NumericalError
from .expr import evaluate, parse
from .manifold import PhaseState, canonical_names
from .problem import BUILTIN, Problem, builtin, builtin_text, load_problem, parse_problem


class _Out:
    """Collects the text and JSON views of a command's result."""

    def __init__(self, args):
        self.json = getattr(args, "json", False)
        self.doc = {}
        self.lines = []

    def line(self, text=""):
        self.lines.append(text)

    def emit(self, stream):
        if self.json:
            stream.write(json.dumps(self.doc, indent=2, default=_jsonable) + "\n")
        else:
            stream.write("\n".join(self.lines) + ("\n" if self.lines else ""))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _load(name_or_path) -> Problem:
    p = Path(name_or_path)
    if not p.exists() and name_or_path in BUILTIN:
        return builtin(name_or_path)
    return load_problem(p)


def _floats(values, n, what):
    arr = np.array([float(evaluate(parse(v, []).root, {})) for v in values])
    if n is not None and arr.size != n:
        raise InputError(f"{what} needs {n} numbers, got {arr.size}")
    return arr


# ---------------------------------------------------------------------------
# check

def cmd_check(args, out):
    prob = _load(args.file)
    M = prob.manifold
    rng = np.random.default_rng(args.seed)
    xi0 = prob.seed_point()
    sign = pin_sign(M, [xi0])
    states = M.random_states(args.samples, rng, y_seed=xi0[M.m:])
    worst_asym, worst_eig = 0.0, np.inf
    for st in states:
        split = M.jacobians(st.xi)
        asym, eig = split.lemma_residuals()
        worst_asym, worst_eig = max(worst_asym, asym), min(worst_eig, eig)
    tangency = {}
    for label, fld in (("force", prob.force), ("perturbation", prob.perturbation)):
        if fld is None:
            continue
        if fld.tangency == "declared_tangent":
            tangency[label] = fld.check_tangent(M, states, t=0.3)
        if fld.kind == "periodic_h":
            fld.check_periodic(M, rng, n=5)
    out.doc = {"problem": prob.name, "m": M.m, "s": M.s, "s_sign": sign,
               "samples": len(states), "lemma_max_asymmetry": worst_asym,
               "lemma_min_eigenvalue": worst_eig, "tangency_defect": tangency, "status": "pass"}
    out.line(f"problem: {prob.name}")
    out.line(f"m: {M.m}")
    out.line(f"s: {M.s}")
    out.line(f"s_sign: {sign:+d}")
    out.line(f"lemma_min_eigenvalue: {worst_eig:.6g}")
    out.line(f"lemma_max_asymmetry: {worst_asym:.3g}")
    for k, v in tangency.items():
        out.line(f"tangency_defect_{k}: {v:.3g}")
    out.line("status: pass")
    return 0


# ---------------------------------------------------------------------------
# degree

def first_block(prob: Problem, kind: str):
    """The first block of the augmented map for ``kind`` F or Phi."""
    M = prob.manifold
    if kind == "F":
        if prob.force is None:
            raise InputError("map F needs a [force] section")
        return prob.force.rest_block(), "F_of_f"
    if prob.perturbation is None:
        raise InputError("map Phi needs a [perturbation] section")
    return mean_field(M, prob.perturbation), "Phi_of_wh"


def run_degree(prob: Problem, kind=None, box=None, grid=None, winding=False):
    kind = kind or prob.degree.get("map", "F")
    box = box if box is not None else prob.degree.get("box")
    if box is None:
        box = prob.manifold.box
    grid = grid or prob.degree.get("grid", 16)
    block, mkind = first_block(prob, kind)
    return tangent_field_degree(prob.manifold, block, box, kind=mkind, grid=grid,
                                winding_check=winding)


def cmd_degree(args, out):
    prob = _load(args.file)
    box = None
    if args.box:
        from .problem import _box_field
        box = _box_field(args.box, prob.manifold.k, "--box")
    t0 = time.perf_counter()
    rep = run_degree(prob, args.map, box, args.grid, args.winding)
    elapsed = time.perf_counter() - t0
    names = canonical_names(prob.m, prob.s)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(names))
    out.doc = dict(rep.as_dict(), problem=prob.name, seconds=elapsed)
    out.line(f"problem: {prob.name}")
    out.lines.extend(rep.to_text().rstrip("\n").split("\n"))
    out.line(f"seconds: {elapsed:.3f}")
    return 0


# ---------------------------------------------------------------------------
# simulate / reactive

def _initial_state(prob, x0=None, u0=None):
    M = prob.manifold
    seed = prob.seed_point()
    x0 = prob.integrate.get("x0", seed[:M.m]) if x0 is None else x0
    u0 = prob.integrate.get("u0", np.zeros(M.m)) if u0 is None else u0
    xi = M.chart_point(x0, seed[M.m:])
    return PhaseState(xi, M.tangent_velocity(xi, u0))


def _unforced_fields(prob):
    M = prob.manifold
    if prob.force is None:
        return [ForceField.zero(M.m, M.s, tangency="x_only")]
    return [prob.force]


def cmd_simulate(args, out):
    prob = _load(args.file)
    M = prob.manifold
    x0 = _floats(args.x, M.m, "--x") if args.x else None
    u0 = _floats(args.u, M.m, "--u") if args.u else None
    st = _initial_state(prob, x0, u0)
    opts = dict(prob.integrate)
    t0 = args.t0 if args.t0 is not None else opts.get("t0", 0.0)
    t1 = args.t1 if args.t1 is not None else opts.get("t1", 5.0)
    h = args.h if args.h is not None else opts.get("h", 1e-3)
    method = args.method or opts.get("method", "rk4_proj")
    fields = _unforced_fields(prob)
    out.doc = {"problem": prob.name, "t0": t0, "t1": t1, "h": h, "method": method}
    if args.twin:
        E = [ForceField(_first_block_func(f, M.m), M.m, M.m, M.s, tangency="x_only")
             if f.tangency != "x_only" else f for f in fields]
        gap, lifted, projected = compare_dae_ode(M, E, st, t0, t1, h=h)
        tr = lifted
        out.doc.update(twin_gap=gap, lifted_drift=lifted.stats["max_g"],
                       projected_drift=projected.stats["max_g"])
        out.line(f"twin_gap: {gap:.3e}")
        out.line(f"lifted_drift: {lifted.stats['max_g']:.3e}")
        out.line(f"projected_drift: {projected.stats['max_g']:.3e}")
    else:
        tr = integrate(M, Motion(M, fields), st, t0, t1, h=h, method=method,
                       potential=prob.potential)
    buf = io.StringIO()
    tr.to_csv(buf)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    out.doc.update(stats=tr.stats, steps=len(tr) - 1, output=args.out)
    for k, v in tr.stats.items():
        out.line(f"{k}: {v}")
    if not args.out and not out.json:
        out.line(buf.getvalue().rstrip("\n"))
    return 0


def _first_block_func(fld, m):
    return lambda t, xi, eta: fld(t, xi, eta)[:m]


def cmd_reactive(args, out):
    prob = _load(args.file)
    M = prob.manifold
    exp = prob.expected
    x = _floats(args.x, M.m, "--x") if args.x else _floats(exp.get("reactive_x", "").split(),
                                                                 M.m, "--x")
    u = _floats(args.u, M.m, "--u") if args.u else _floats(exp.get("reactive_u", "").split(),
                                                                 M.m, "--u")
    seed = prob.seed_point()
    xi = M.chart_point(x, seed[M.m:])
    st = PhaseState(xi, M.tangent_velocity(xi, u))
    r = reactive_force(M, st)
    names = canonical_names(M.m, M.s)
    header = names + [n.replace("x", "u").replace("y", "v") for n in names] \
        + [f"r{i + 1}" for i in range(M.k)]
    row = np.concatenate([st.xi, st.eta, r])
    out.doc = {"problem": prob.name, "xi": st.xi, "eta": st.eta, "r": r}
    out.line(",".join(header))
    out.line(",".join(repr(float(v)) for v in row))
    return 0


# ---------------------------------------------------------------------------
# trace

def _periodic_problem(prob: Problem, origin, n_steps=None):
    if prob.perturbation is None:
        raise InputError("trace needs a [perturbation] section")
    M = prob.manifold
    T = prob.perturbation.period
    n = n_steps or prob.continuation.get("n_steps", 256)
    return PeriodicProblem(M, prob.force, prob.perturbation, T, origin, n_steps=n)


def _trace_one(job):
    text, name, origin, opts, force, degree = job
    prob = parse_problem(text, name)
    M = prob.manifold
    if origin.size == M.m:
        origin = M.chart_point(origin, prob.seed_point()[M.m:])
    P = _periodic_problem(prob, origin, opts.pop("n_steps", None))
    curve = trace_branch(P, origin, degree=degree, force=force, **opts)
    buf = io.StringIO()
    curve.to_csv(buf)
    return {"origin": origin.tolist(), "termination": curve.termination,
            "points": len(curve), "degenerate": curve.degenerate, "folds": curve.folds,
            "message": curve.message, "csv": buf.getvalue(),
            "max_residual": float(curve.residuals.max())}


def cmd_trace(args, out):
    prob = _load(args.file)
    M = prob.manifold
    opts = {k: v for k, v in prob.continuation.items() if k != "origin"}
    if args.max_points is not None:
        opts["max_points"] = args.max_points
    if args.ds is not None:
        opts["ds"] = args.ds
    degree = None
    if args.origin == "auto":
        rep = run_degree(prob)
        degree = rep.degree
        origins = [z.point for z in rep.zeros]
        if not origins:
            raise NumericalError("no zeros of the augmented map in the degree box")
    elif args.origin is None:
        if "origin" not in prob.continuation:
            raise InputError("no origin: give --origin or [continuation] origin")
        origins = [prob.continuation["origin"]]
    else:
        origins = [_floats(args.origin.replace(",", " ").split(), None, "--origin")]
    for o in origins:
        if o.size not in (M.m, M.k):
            raise InputError(f"origin needs {M.m} or {M.k} numbers")
    jobs = [(prob.text, prob.name, np.asarray(o, dtype=float), dict(opts), args.force, degree)
            for o in origins]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_trace_one, jobs))
    else:
        results = [_trace_one(j) for j in jobs]
    out.doc = {"problem": prob.name, "branches": []}
    for i, res in enumerate(results):
        if args.out:
            path = Path(args.out)
            if len(results) > 1:
                path = path.with_name(f"{path.stem}_{i + 1}{path.suffix}")
            path.write_text(res["csv"])
            res["output"] = str(path)
        out.doc["branches"].append(res)
        out.line(f"branch_{i + 1}_origin: {res['origin']}")
        out.line(f"branch_{i + 1}_points: {res['points']}")
        out.line(f"branch_{i + 1}_termination: {res['termination']}")
        out.line(f"branch_{i + 1}_max_residual: {res['max_residual']:.3e}")
        if res["degenerate"]:
            out.line(f"branch_{i + 1}_warning: d(residual)/d(lambda) vanishes; "
                     "continuation is degenerate (trivial family)")
        if res["message"]:
            out.line(f"branch_{i + 1}_message: {res['message']}")
        if not args.out and not out.json:
            out.line(res["csv"].rstrip("\n"))
    return 0


# ---------------------------------------------------------------------------
# example

def verify_problem(prob: Problem):
    """Compare a problem's computed results with its [expected] section.

    Returns a list of ``(check, ok, detail)``.
    """
    exp = prob.expected
    checks = []
    M = prob.manifold
    if "degree" in exp or "zeros" in exp or "tangent_degree" in exp:
        t0 = time.perf_counter()
        try:
            rep = run_degree(prob)
        except NumericalError as exc:
            checks.append(("degree", False, str(exc)))
            rep = None
        el = time.perf_counter() - t0
        if rep is not None:
            if "degree" in exp:
                want = int(exp["degree"])
                checks.append(("degree", rep.degree == want,
                               f"computed {rep.degree}, expected {want} ({el:.2f}s)"))
            if "tangent_degree" in exp:
                want = int(exp["tangent_degree"])
                checks.append(("tangent_degree", rep.tangent_degree == want,
                               f"computed {rep.tangent_degree}, expected {want}"))
            if "zeros" in exp:
                want = [np.array([float(evaluate(parse(v, []).root, {})) for v in z.split()])
                        for z in exp["zeros"].split("|")]
                got = [z.point for z in rep.zeros]
                ok = len(got) == len(want) and all(
                    min(np.abs(g - w).max() for g in got) <= 1e-8 for w in want)
                checks.append(("zeros", ok, f"computed {[g.tolist() for g in got]}"))
    if "s_sign" in exp:
        sign = pin_sign(M, [prob.seed_point()])
        want = int(exp["s_sign"])
        checks.append(("s_sign", sign == want, f"computed {sign:+d}, expected {want:+d}"))
    if "reactive" in exp:
        x = np.array([float(v) for v in exp["reactive_x"].split()])
        u = np.array([float(v) for v in exp["reactive_u"].split()])
        xi = M.chart_point(x, prob.seed_point()[M.m:])
        r = reactive_force(M, PhaseState(xi, M.tangent_velocity(xi, u)))
        want = np.array([float(v) for v in exp["reactive"].split()])
        checks.append(("reactive", bool(np.allclose(r, want, rtol=1e-12, atol=1e-12)),
                       f"computed {r.tolist()}"))
    return checks


def cmd_example(args, out):
    if args.list:
        out.doc = {"examples": list(BUILTIN)}
        out.lines.extend(BUILTIN)
        return 0
    if args.verify:
        names = [args.name] if args.name else list(BUILTIN)
        status = 0
        out.doc = {"examples": {}}
        for name in names:
            checks = verify_problem(builtin(name))
            out.doc["examples"][name] = [{"check": c, "pass": ok, "detail": d}
                                         for c, ok, d in checks]
            for c, ok, d in checks:
                out.line(f"{'PASS' if ok else 'FAIL'} {name} {c}: {d}")
                if not ok:
                    status = 1
        return status
    if not args.name:
        raise InputError("give an example name, --list or --verify")
    text = builtin_text(args.name)
    if args.out:
        Path(args.out).write_text(text)
        out.doc = {"example": args.name, "output": args.out}
        out.line(f"wrote {args.out}")
    else:
        out.doc = {"example": args.name, "text": text}
        out.lines.append(text.rstrip("\n"))
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="implicit-motion",
                                description="Constrained motion on implicit manifolds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print one JSON document")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (trace)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="validate a problem file")
    c.add_argument("file")
    c.add_argument("--samples", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)

    d = sub.add_parser("degree", parents=[common], help="degree of the augmented map")
    d.add_argument("file")
    d.add_argument("--map", choices=("F", "Phi"))
    d.add_argument("--box", help="'lo hi, lo hi, ...'")
    d.add_argument("--grid", type=int)
    d.add_argument("--winding", action="store_true", help="cross-check by winding (2-D)")
    d.add_argument("--csv", help="write the zero table here")
    d.set_defaults(func=cmd_degree)

    s = sub.add_parser("simulate", parents=[common], help="integrate the motion")
    s.add_argument("file")
    s.add_argument("--x", nargs="+")
    s.add_argument("--u", nargs="+")
    s.add_argument("--t0", type=float)
    s.add_argument("--t1", type=float)
    s.add_argument("--h", type=float)
    s.add_argument("--method", choices=("rk4_proj", "rk45_proj"))
    s.add_argument("--twin", action="store_true",
                   help="integrate lifted DAE and projected ODE and report their gap")
    s.add_argument("--out", help="CSV output path")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reactive", parents=[common], help="reactive force at a state")
    r.add_argument("file")
    r.add_argument("--x", nargs="+")
    r.add_argument("--u", nargs="+")
    r.set_defaults(func=cmd_reactive)

    t = sub.add_parser("trace", parents=[common], help="trace a branch of periodic solutions")
    t.add_argument("file")
    t.add_argument("--origin", help="'auto' or a point 'x1 .. [y1 ..]'")
    t.add_argument("--max-points", type=int)
    t.add_argument("--ds", type=float)
    t.add_argument("--force", action="store_true", help="trace even if the degree is zero")
    t.add_argument("--out", help="CSV output path")
    t.set_defaults(func=cmd_trace)

    e = sub.add_parser("example", parents=[common], help="built-in example problems")
    e.add_argument("name", nargs="?")
    e.add_argument("--list", action="store_true")
    e.add_argument("--verify", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_example)
    return p


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = _Out(args)
    try:
        code = args.func(args, out)
    except InputError as exc:
        stderr.write(f"error: {exc}\n")
        return 2
    except (NumericalError, ImplicitMotionError) as exc:
        stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return 1
    try:
        out.emit(stdout)
    except BrokenPipeError:
        # reader went away, e.g. piped into head
        sys.stdout = None
    return code


if __name__ == "__main__":
    sys.exit(main())
