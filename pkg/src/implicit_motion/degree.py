"""Brouwer degree of maps on boxes and degree of tangent fields on M.

Maps passed in here are objects with ``__call__(p) -> ndarray`` and
``value_and_jacobian(p) -> (F, DF)``; :class:`~implicit_motion.expr.VectorExpr`
qualifies, as do :class:`AugmentedMap` and :class:`MeanField`.

The degree of a regular map is the sum of ``sign det DF`` over its zeros.
Zeros are enumerated by multistart damped Newton, which is a heuristic: in
2-D the boundary winding number gives an independent count.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import (DegenerateZero, InputError, NotAdmissible, NoConvergence,
                     QuadratureNotConverged, SingularB)
from .expr import VectorExpr
from .manifold import ImplicitManifold, canonical_names

ADMISSIBLE_MIN = 1e-8
DEGENERATE_RTOL = 1e-8
MISSED_ZERO_NOTE = ("zeros were enumerated by multistart Newton; a zero whose basin "
                    "misses every start point would be lost")


def _box(box, k=None):
    box = np.array(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise InputError("box must be a list of (lo, hi) pairs")
    if k is not None and box.shape[0] != k:
        raise InputError(f"box has {box.shape[0]} axes, map has {k}")
    if not np.all(np.isfinite(box)):
        raise InputError("box must be bounded")
    if np.any(box[:, 0] >= box[:, 1]):
        raise InputError("box intervals must have lo < hi")
    return box


def _dim(F):
    n = getattr(F, "n_in", None)
    if n is None:
        raise InputError("map must expose n_in")
    n_out = getattr(F, "n_out", n)
    if n_out != n:
        raise InputError(f"map must be square, got {n} -> {n_out}")
    return n


# ---------------------------------------------------------------------------
# zeros

@dataclass
class Zero:
    point: np.ndarray
    residual: float
    det: float
    cond: float  # condition number of the row-equilibrated DF
    degenerate: bool

    @property
    def index(self) -> Optional[int]:
        if self.degenerate:
            return None
        return 1 if self.det > 0 else -1


@dataclass
class ZeroSearch:
    interior: List[Zero]
    near_boundary: List[Zero]
    starts: int


def _newton(F, p0, box, tol, max_iter=60):
    lo, hi = box[:, 0], box[:, 1]
    slack = 0.25 * (hi - lo)
    p = p0.copy()
    try:
        v, J = F.value_and_jacobian(p)
    except ArithmeticError:
        return None
    nv = np.linalg.norm(v)
    polish = 0
    for _ in range(max_iter):
        if nv <= tol:
            # a couple of extra steps to reach full precision
            polish += 1
            if polish > 2:
                break
        try:
            step = np.linalg.solve(J, -v)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -v, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return None
        t = 1.0
        while True:
            q = p + t * step
            try:
                w, Jq = F.value_and_jacobian(q)
                nw = np.linalg.norm(w)
            except ArithmeticError:
                nw = np.inf
            if nw < nv or (nv <= tol and nw <= 2 * tol) or t < 1e-6:
                break
            t *= 0.5
        if not np.isfinite(nw):
            return None
        if nv <= tol and nw >= nv:
            break
        p, v, J, nv = q, w, Jq, nw
        if np.any(p < lo - slack) or np.any(p > hi + slack):
            return None
    return p, nv, J


def _classify(p, res, J, F=None, radius=0.0):
    """Index data at a computed zero.

    Besides the relative determinant test, a zero is only called regular when
    ``DF`` provably stays invertible on a small ball around it: the largest
    sampled change of ``DF`` over the ball must stay below half of
    ``sigma_min(DF(p))``. This catches multiple zeros, where Newton stalls at
    a point whose Jacobian is small but not tiny relative to its own norm.
    """
    k = len(p)
    det = float(np.linalg.det(J))
    # both tests run on the row-equilibrated Jacobian, so that rescaling a
    # component of F by a positive factor changes neither verdict
    rows = np.linalg.norm(J, axis=1)
    if np.any(rows == 0) or not np.all(np.isfinite(rows)):
        return Zero(p, float(res), det, np.inf, True)
    D = 1.0 / rows[:, None]
    Js = D * J
    sv = np.linalg.svd(Js, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    degenerate = abs(np.linalg.det(Js)) < DEGENERATE_RTOL * max(sv[0], 1e-300) ** k \
        or not np.isfinite(cond)
    if not degenerate and F is not None and radius > 0:
        var = 0.0
        for i in range(k):
            for sgn in (-1.0, 1.0):
                q = p.copy()
                q[i] += sgn * radius
                try:
                    dJ = D * (F.value_and_jacobian(q)[1] - J)
                    var = max(var, float(np.linalg.norm(dJ, 2)))
                except ArithmeticError:
                    var = np.inf
        degenerate = var >= 0.5 * sv[-1]
    return Zero(p, float(res), det, cond, bool(degenerate))


def find_zeros(F, box, grid=16, tol=1e-12, cluster_radius=1e-7, accept=1e-10,
               seed=0) -> ZeroSearch:
    """Multistart damped Newton from the centres of a ``grid``-per-axis
    lattice of cells (plus a few jittered starts, fixed ``seed``).

    Converged points with ``|F| <= accept`` are clustered within
    ``cluster_radius``; each cluster is confirmed by restarting Newton from a
    perturbed copy. Zeros within ``1e-6 * diam`` of the boundary are reported
    separately.
    """
    k = _dim(F)
    box = _box(box, k)
    lo, hi = box[:, 0], box[:, 1]
    axes = [lo[i] + (np.arange(grid) + 0.5) * (hi[i] - lo[i]) / grid for i in range(k)]
    starts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(k, -1).T
    rng = np.random.default_rng(seed)
    jitter = lo + rng.random((max(4, grid), k)) * (hi - lo)
    starts = np.vstack([starts, jitter])
    diam = float(np.linalg.norm(hi - lo))
    ball = 1e-4 * diam
    found = []
    for p0 in starts:
        out = _newton(F, p0, box, tol)
        if out is None:
            continue
        p, res, J = out
        if res > accept:
            continue
        if any(np.linalg.norm(p - q.point) <= (ball if q.degenerate else cluster_radius)
               for q in found):
            continue
        z = _classify(p, res, J, F, ball)
        if z.degenerate:
            # Newton stalls anywhere near a multiple zero: keep one representative
            found = [q for q in found if np.linalg.norm(p - q.point) > ball]
        found.append(z)
    confirmed = []
    for z in found:
        back = _newton(F, z.point + 1e-6 * diam * np.sign(np.sin(np.arange(k) + 1.0)),
                       box, tol)
        if back is not None and np.linalg.norm(back[0] - z.point) > cluster_radius \
                and not z.degenerate:
            continue
        confirmed.append(z)
    margin = 1e-6 * diam
    interior, edge = [], []
    for z in confirmed:
        p = z.point
        if np.any(p < lo - margin) or np.any(p > hi + margin):
            continue
        if np.any(p - lo <= margin) or np.any(hi - p <= margin):
            edge.append(z)
        else:
            interior.append(z)
    interior.sort(key=lambda z: tuple(z.point))
    edge.sort(key=lambda z: tuple(z.point))
    return ZeroSearch(interior, edge, len(starts))


def index_at(F, zero) -> int:
    """``sign det DF`` at a nondegenerate zero."""
    p = np.asarray(getattr(zero, "point", zero), dtype=float)
    _, J = F.value_and_jacobian(p)
    z = _classify(p, 0.0, J)
    if z.degenerate:
        raise DegenerateZero(f"degenerate zero at {p.tolist()} (det DF = {z.det:.3g})")
    return z.index


# ---------------------------------------------------------------------------
# boundary evidence and winding number

def _face_points(box, n):
    """Sample points on the boundary of ``box``: each face gets an n-per-axis
    lattice including its edges."""
    k = len(box)
    pts = []
    for i in range(k):
        others = [j for j in range(k) if j != i]
        if others:
            grids = np.meshgrid(*[np.linspace(box[j, 0], box[j, 1], n) for j in others],
                                indexing="ij")
            flat = np.array([g.ravel() for g in grids]).T
        else:
            flat = np.zeros((1, 0))
        for side in (0, 1):
            P = np.empty((len(flat), k))
            P[:, others] = flat
            P[:, i] = box[i, side]
            pts.append(P)
    return np.vstack(pts)


def boundary_min_norm(F, box, n0=None, max_points=200_000, rtol=1e-3):
    """Smallest sampled ``|F|`` on the boundary, doubling the lattice until
    the minimum changes by less than ``rtol`` (relative) or the budget ends."""
    box = _box(box)
    k = len(box)
    n = n0 or (65 if k <= 2 else 17)
    prev = None
    while True:
        vals = []
        for p in _face_points(box, n):
            try:
                vals.append(np.linalg.norm(F(p)))
            except ArithmeticError:
                vals.append(0.0)
        cur = float(min(vals))
        if prev is not None and abs(cur - prev) <= rtol * max(prev, 1e-300):
            return cur
        nxt = 2 * n - 1
        if 2 * k * nxt ** (k - 1) > max_points:
            return cur
        prev, n = cur, nxt


def degree_winding2d(F, box, segments=64, min_norm=ADMISSIBLE_MIN, max_depth=40) -> int:
    """Winding number of ``F`` along the counterclockwise boundary of a 2-D box.

    Each edge starts with ``segments`` pieces; a piece is bisected until the
    argument of ``F`` changes by less than ``pi/2`` across it.
    """
    if _dim(F) != 2:
        raise InputError("winding number needs a map R^2 -> R^2")
    box = _box(box, 2)
    (x0, x1), (y0, y1) = box
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]

    def value(p):
        try:
            v = F(np.array(p))
        except ArithmeticError as exc:
            raise NotAdmissible(f"map undefined on the boundary at {p}: {exc}") from exc
        nv = np.hypot(v[0], v[1])
        if not nv > min_norm:
            raise NotAdmissible(f"|F| = {nv:.3g} on the boundary at {list(p)}")
        return np.arctan2(v[1], v[0])

    def piece(a, b, ta, tb, depth):
        d = (tb - ta + np.pi) % (2 * np.pi) - np.pi
        if abs(d) < np.pi / 2:
            return d
        if depth >= max_depth:
            raise NotAdmissible("argument of F varies too fast along the boundary")
        mid = (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]))
        tm = value(mid)
        return piece(a, mid, ta, tm, depth + 1) + piece(mid, b, tm, tb, depth + 1)

    total = 0.0
    for (ax, ay), (bx, by) in zip(corners[:-1], corners[1:]):
        s = np.linspace(0.0, 1.0, segments + 1)
        pts = [(ax + t * (bx - ax), ay + t * (by - ay)) for t in s]
        thetas = [value(p) for p in pts]
        for i in range(segments):
            total += piece(pts[i], pts[i + 1], thetas[i], thetas[i + 1], 0)
    return int(round(total / (2 * np.pi)))


# ---------------------------------------------------------------------------
# degree reports

@dataclass
class DegreeReport:
    zeros: List[Zero]
    degree: Optional[int]
    boundary_min_norm: float
    method: str
    admissible: bool
    s_sign: Optional[int] = None
    tangent_degree: Optional[int] = None
    near_boundary: List[Zero] = field(default_factory=list)
    winding: Optional[int] = None
    kind: str = "map"
    note: str = MISSED_ZERO_NOTE

    def zero_rows(self):
        return [(z.point, z.index, abs(z.det), z.cond) for z in self.zeros]

    def as_dict(self):
        return {
            "kind": self.kind,
            "degree": self.degree,
            "s_sign": self.s_sign,
            "tangent_degree": self.tangent_degree,
            "method": self.method,
            "admissible": self.admissible,
            "boundary_min_norm": self.boundary_min_norm,
            "winding": self.winding,
            "zeros": [{"point": z.point.tolist(), "index": z.index, "detDF": z.det,
                       "cond": z.cond, "residual": z.residual} for z in self.zeros],
            "near_boundary": [z.point.tolist() for z in self.near_boundary],
            "note": self.note,
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self):
        d = self.as_dict()
        lines = [f"{key}: {d[key]}" for key in ("kind", "degree", "s_sign", "tangent_degree",
                                                "method", "admissible", "boundary_min_norm",
                                                "winding")]
        lines.append(f"zeros: {len(self.zeros)}")
        for i, z in enumerate(self.zeros):
            lines.append(f"zero_{i + 1}: point={z.point.tolist()} index={z.index} "
                         f"detDF={z.det:.6g} cond={z.cond:.3g}")
        if self.near_boundary:
            lines.append(f"near_boundary: {d['near_boundary']}")
        lines.append(f"note: {self.note}")
        return "\n".join(lines) + "\n"

    def to_csv(self, names=None):
        k = len(self.zeros[0].point) if self.zeros else (len(names) if names else 0)
        names = list(names) if names is not None else [f"p{i + 1}" for i in range(k)]
        out = [",".join(names + ["index", "detDF", "cond"])]
        for z in self.zeros:
            idx = "" if z.index is None else str(z.index)
            out.append(",".join([repr(float(c)) for c in z.point]
                                + [idx, repr(z.det), repr(z.cond)]))
        return "\n".join(out) + "\n"


def degree_sign_sum(F, box, grid=16, tol=1e-12, cluster_radius=1e-7, winding_check=False,
                    min_norm=ADMISSIBLE_MIN) -> DegreeReport:
    """Degree as the sum of ``sign det DF`` over the zeros in ``box``.

    Raises :class:`NotAdmissible` when the map (nearly) vanishes on the
    boundary, and :class:`DegenerateZero` when a zero has no index and the
    winding fallback (2-D only) is unavailable.
    """
    k = _dim(F)
    box = _box(box, k)
    bmin = boundary_min_norm(F, box)
    search = find_zeros(F, box, grid=grid, tol=tol, cluster_radius=cluster_radius)
    if bmin <= min_norm or search.near_boundary:
        raise NotAdmissible(f"map too small on the boundary (min |F| = {bmin:.3g}, "
                            f"{len(search.near_boundary)} zero(s) at the edge)")
    zeros = search.interior
    method = "sign_sum"
    winding = None
    if any(z.degenerate for z in zeros):
        if k != 2:
            bad = [z.point.tolist() for z in zeros if z.degenerate]
            raise DegenerateZero(f"degenerate zero(s) {bad}; no index without winding (k={k})")
        winding = degree_winding2d(F, box, min_norm=min_norm)
        degree, method = winding, "winding2d"
    else:
        degree = int(sum(z.index for z in zeros))
        if winding_check and k == 2:
            winding = degree_winding2d(F, box, min_norm=min_norm)
            method = "both"
    return DegreeReport(zeros, degree, bmin, method, True, winding=winding)


# ---------------------------------------------------------------------------
# augmented maps

class MeanField:
    """Time average ``w(xi) = (1/T) int_0^T h(t, xi, 0) dt`` of a periodic field.

    ``block`` is an expression over ``(t, x1..xm, y1..ys)`` (see
    :meth:`ForceField.rest_block`). Gauss-Legendre with ``nodes`` points,
    doubled until two successive rules agree to ``rtol`` relative.
    """

    def __init__(self, block: VectorExpr, period: float, nodes=32, rtol=1e-12,
                 max_nodes=4096):
        if not period > 0:
            raise InputError("mean field needs a period T > 0")
        self.block = block
        self.period = float(period)
        self.nodes = nodes
        self.rtol = rtol
        self.max_nodes = max_nodes
        self.n_in = block.n_in - 1
        self.n_out = block.n_out
        self._rules = {}

    def _rule(self, n):
        if n not in self._rules:
            x, w = np.polynomial.legendre.leggauss(n)
            self._rules[n] = (0.5 * self.period * (x + 1.0), 0.5 * w)
        return self._rules[n]

    def _average(self, p, n, jac):
        ts, ws = self._rule(n)
        p = list(map(float, p))
        val = np.zeros(self.n_out)
        J = np.zeros((self.n_out, self.n_in)) if jac else None
        for t, w in zip(ts, ws):
            if jac:
                v, G = self.block.value_and_jacobian([t] + p)
                J += w * G[:, 1:]
            else:
                v = self.block([t] + p)
            val += w * v
        return val, J

    def _converged(self, p, jac):
        n = self.nodes
        prev = self._average(p, n, jac)
        while True:
            n *= 2
            if n > self.max_nodes:
                raise QuadratureNotConverged(f"mean field not converged with {n // 2} nodes")
            cur = self._average(p, n, jac)
            scale = max(1.0, float(np.abs(cur[0]).max()))
            dv = float(np.abs(cur[0] - prev[0]).max())
            if jac:
                dv = max(dv, float(np.abs(cur[1] - prev[1]).max()) / max(1.0, np.abs(cur[1]).max()))
            if dv <= self.rtol * scale:
                return cur
            prev = cur

    def __call__(self, p) -> np.ndarray:
        return self._converged(p, False)[0]

    def value_and_jacobian(self, p):
        return self._converged(p, True)


def mean_field(M: ImplicitManifold, h, nodes=32, rtol=1e-12) -> MeanField:
    """Mean-value field of a periodic force over one period, at zero velocity."""
    if h.kind != "periodic_h":
        raise InputError("mean_field expects a periodic_h field")
    block = h.rest_block() if h.tangency == "x_only" else h.rest_block()
    if block.n_in != M.k + 1:
        raise InputError("mean field block does not match the manifold dimensions")
    return MeanField(block, h.period, nodes=nodes, rtol=rtol)


class AugmentedMap:
    """``(first_block(x, y), g(x, y))``: a square map whose zeros are the
    zeros of the tangent field on M."""

    def __init__(self, first_block, M: ImplicitManifold, kind="F_of_f"):
        if kind not in ("F_of_f", "Phi_of_wh"):
            raise InputError(f"unknown augmented map kind {kind!r}")
        if first_block.n_in != M.k or first_block.n_out != M.m:
            raise InputError(f"first block must map R^{M.k} -> R^{M.m}, got "
                             f"{first_block.n_in} -> {first_block.n_out}")
        self.first_block = first_block
        self.constraint = M.g
        self.M = M
        self.kind = kind
        self.n_in = self.n_out = M.k

    def __call__(self, p):
        return np.concatenate([self.first_block(p), self.constraint(p)])

    def value_and_jacobian(self, p):
        f, Jf = self.first_block.value_and_jacobian(p)
        g, Jg = self.constraint.value_and_jacobian(p)
        return np.concatenate([f, g]), np.vstack([Jf, Jg])


def pin_sign(M: ImplicitManifold, points=(), box=None) -> int:
    """Pin ``sign det d2 g`` using the given points (zeros on M), falling back
    to the box centre and then to a few lattice points of the box."""
    if M.s_sign is not None:
        for p in points:
            M.check_B(M.value_and_jacobian(p)[1][:, M.m:])
        return M.s_sign
    cands = list(points)
    if box is not None:
        box = np.asarray(box, dtype=float)
        cands.append(box.mean(axis=1))
        rng = np.random.default_rng(0)
        cands.extend(box[:, 0] + rng.random((32, len(box))) * (box[:, 1] - box[:, 0]))
    sign = None
    for i, p in enumerate(cands):
        try:
            s = M.check_B(M.value_and_jacobian(p)[1][:, M.m:])
        except SingularB:
            if i < len(points):
                raise
            continue
        sign = s if sign is None else sign
    if sign is None:
        raise SingularB("could not find a point where d2 g is invertible")
    return sign


def tangent_field_degree(M: ImplicitManifold, first_block, box, kind="F_of_f",
                         **opts) -> DegreeReport:
    """Degree of the tangent field on ``M`` inside ``box`` from the
    augmented map: ``deg(field, M) = sign(det d2 g) * deg(F, box)``."""
    F = AugmentedMap(first_block, M, kind)
    rep = degree_sign_sum(F, box, **opts)
    s = pin_sign(M, [z.point for z in rep.zeros], box)
    rep.s_sign = s
    rep.tangent_degree = s * rep.degree
    rep.kind = kind
    return rep
