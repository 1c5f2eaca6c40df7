"""Plain-text problem files.

A problem file is an INI-style document::

    [problem]
    name = parabolamolla

    [manifold]
    m = 1
    s = 1
    g1 = x1^2/2 - y1 - 2
    box = -3 3, -10 10
    seed = 1.4142135623730951 -1

    [force]
    kind = tangent            ; or x_only (right-hand side of x'' = f)
    f1 = ...
    potential = (x1^2 + y1^2)/2

    [perturbation]
    kind = tangent
    period = 2*pi
    h1 = ...

    [degree]
    map = F                   ; F uses the force, Phi the mean of the perturbation
    box = -3 3, -3 3
    grid = 16

    [continuation]
    origin = 1.4142135623730951 -1
    max_points = 60

    [integrate]
    t0 = 0
    t1 = 5
    h = 1e-3
    method = rk4_proj

    [expected]
    degree = 1

Expressions use the canonical names ``t, x1..xm, y1..ys, u1..um, v1..vs``.
Number fields (box bounds, period, seed, ...) may be constant expressions
such as ``2*pi``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import ForceField, potential_from_text
from .errors import ExprSyntaxError, InputError
from .expr import ExprAst, evaluate, parse
from .manifold import ImplicitManifold

BUILTIN = ("gravita", "parabolamolla", "parabola1", "paraboloid", "mostro", "parabola2",
           "sindae", "dae3d")
_SECTIONS = {"problem", "manifold", "force", "perturbation", "degree", "continuation",
             "integrate", "expected"}


def _number(text, what):
    try:
        return float(evaluate(parse(text, []).root, {}))
    except (ExprSyntaxError, ArithmeticError) as exc:
        raise InputError(f"{what}: cannot read {text!r} as a number ({exc})") from exc


def _numbers(text, what):
    return np.array([_number(t, what) for t in text.replace(",", " ").split()])


def _box_field(text, k, what):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != k:
        raise InputError(f"{what}: expected {k} intervals 'lo hi', got {len(parts)}")
    out = []
    for p in parts:
        pair = _numbers(p, what)
        if pair.size != 2:
            raise InputError(f"{what}: each interval needs exactly two numbers")
        out.append(pair)
    out = np.array(out)
    if np.any(out[:, 0] >= out[:, 1]):
        raise InputError(f"{what}: intervals must have lo < hi")
    return out


def _components(sec, prefix, n, what):
    comps = []
    i = 1
    while f"{prefix}{i}" in sec:
        comps.append(sec[f"{prefix}{i}"])
        i += 1
    extra = [k for k in sec if k.startswith(prefix) and k[len(prefix):].isdigit()
             and int(k[len(prefix):]) > len(comps)]
    if extra:
        raise InputError(f"{what}: components must be numbered {prefix}1, {prefix}2, ...")
    if n is not None and len(comps) not in n:
        raise InputError(f"{what}: expected {' or '.join(map(str, n))} components "
                         f"{prefix}1..., got {len(comps)}")
    return comps


@dataclass
class Problem:
    name: str
    manifold: ImplicitManifold
    force: Optional[ForceField] = None
    potential: Optional[ExprAst] = None
    perturbation: Optional[ForceField] = None
    seed: Optional[np.ndarray] = None
    degree: dict = field(default_factory=dict)
    continuation: dict = field(default_factory=dict)
    integrate: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    text: str = ""

    @property
    def m(self):
        return self.manifold.m

    @property
    def s(self):
        return self.manifold.s

    @property
    def period(self):
        return None if self.perturbation is None else self.perturbation.period

    def seed_point(self) -> np.ndarray:
        """A point of M on the sheet the problem is about."""
        M = self.manifold
        if self.seed is not None:
            return M.chart_point(self.seed[:M.m], self.seed[M.m:])
        x = np.where(np.isfinite(M.box[:M.m]).all(axis=1), M.box[:M.m].mean(axis=1), 0.0)
        return M.chart_point(x, np.zeros(M.s))


def _field(sec, prefix, M, what, periodic):
    m, s = M.m, M.s
    kind = sec.get("kind", "").strip() or None
    comps = _components(sec, prefix, (m, m + s), what)
    if kind is None:
        kind = "x_only" if len(comps) == m else "tangent"
    if kind not in ("tangent", "x_only"):
        raise InputError(f"{what}: kind must be 'tangent' or 'x_only'")
    want = m if kind == "x_only" else m + s
    if len(comps) != want:
        raise InputError(f"{what}: kind {kind} needs {want} components, got {len(comps)}")
    period = None
    if periodic:
        if "period" not in sec:
            raise InputError(f"{what}: missing period")
        period = _number(sec["period"], f"{what} period")
        if not period > 0:
            raise InputError(f"{what}: period must be positive")
    tangency = "x_only" if kind == "x_only" else "declared_tangent"
    return ForceField.from_text(comps, m, s, kind="periodic_h" if periodic else "autonomous_f",
                                period=period, tangency=tangency)


def parse_problem(text: str, name: str = "problem") -> Problem:
    """Parse problem-file text; raises :class:`InputError` on any defect."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"malformed problem file: {exc}") from exc
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise InputError(f"unknown section(s) {sorted(unknown)}")
    if "manifold" not in cp:
        raise InputError("problem file needs a [manifold] section")
    ms = cp["manifold"]
    try:
        m, s = int(ms["m"]), int(ms["s"])
    except (KeyError, ValueError) as exc:
        raise InputError("[manifold] needs integer m and s") from exc
    if m < 1 or s < 1:
        raise InputError("[manifold] m and s must be at least 1")
    gs = _components(ms, "g", (s,), "[manifold]")
    box = _box_field(ms["box"], m + s, "[manifold] box") if "box" in ms else None
    on_tol = _number(ms["on_tol"], "[manifold] on_tol") if "on_tol" in ms else 1e-10
    M = ImplicitManifold.from_text(gs, m, s, box=box, on_tol=on_tol)
    seed = None
    if "seed" in ms:
        seed = _numbers(ms["seed"], "[manifold] seed")
        if seed.size != m + s:
            raise InputError(f"[manifold] seed needs {m + s} numbers")
    if "problem" in cp:
        name = cp["problem"].get("name", name)
    prob = Problem(name, M, seed=seed, text=text)
    if "force" in cp:
        prob.force = _field(cp["force"], "f", M, "[force]", periodic=False)
        if "potential" in cp["force"]:
            prob.potential = potential_from_text(cp["force"]["potential"], m, s)
    if "perturbation" in cp:
        prob.perturbation = _field(cp["perturbation"], "h", M, "[perturbation]", periodic=True)
        if prob.force is not None and \
                (prob.force.tangency == "x_only") != (prob.perturbation.tangency == "x_only"):
            raise InputError("[force] and [perturbation] must be of the same kind")
    if "degree" in cp:
        d = cp["degree"]
        prob.degree["map"] = d.get("map", "F").strip()
        if prob.degree["map"] not in ("F", "Phi"):
            raise InputError("[degree] map must be F or Phi")
        if "box" in d:
            prob.degree["box"] = _box_field(d["box"], m + s, "[degree] box")
        if "grid" in d:
            prob.degree["grid"] = int(d["grid"])
    if "continuation" in cp:
        c = cp["continuation"]
        for key in ("max_points", "n_steps", "max_folds"):
            if key in c:
                prob.continuation[key] = int(c[key])
        for key in ("ds", "ds_min", "ds_max", "tol"):
            if key in c:
                prob.continuation[key] = _number(c[key], f"[continuation] {key}")
        if "origin" in c:
            o = _numbers(c["origin"], "[continuation] origin")
            if o.size not in (m, m + s):
                raise InputError(f"[continuation] origin needs {m} or {m + s} numbers")
            prob.continuation["origin"] = o
    if "integrate" in cp:
        it = cp["integrate"]
        for key in ("t0", "t1", "h"):
            if key in it:
                prob.integrate[key] = _number(it[key], f"[integrate] {key}")
        if "method" in it:
            prob.integrate["method"] = it["method"].strip()
            if prob.integrate["method"] not in ("rk4_proj", "rk45_proj"):
                raise InputError("[integrate] method must be rk4_proj or rk45_proj")
        for key in ("x0", "u0"):
            if key in it:
                prob.integrate[key] = _numbers(it[key], f"[integrate] {key}")
                if prob.integrate[key].size != m:
                    raise InputError(f"[integrate] {key} needs {m} numbers")
    if "expected" in cp:
        prob.expected = dict(cp["expected"])
    return prob


def load_problem(path) -> Problem:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return parse_problem(text, path.stem)


def builtin_text(name: str) -> str:
    if name not in BUILTIN:
        raise InputError(f"unknown example {name!r}; choose from {', '.join(BUILTIN)}")
    return resources.files(__package__).joinpath("problems", f"{name}.prob").read_text("utf-8")


def builtin(name: str) -> Problem:
    return parse_problem(builtin_text(name), name)
