"""Branches of T-periodic solutions of ``xi''_pi = f + lam*h`` (or ``lam*h``).

Periodic orbits are found by single shooting in chart coordinates: the
unknowns are the x-position and x-velocity at ``t = 0``; ``y`` follows from
the chart solve and ``v = -B^{-1} A u`` from tangency. Branches in ``lam``
are followed by pseudo-arclength continuation with a finite-difference
Jacobian of the shooting map.

Without an unforced field ``f`` every constant is a solution at ``lam = 0``.
In that case the unknowns are ``(x0, a)`` with ``u0 = lam * a`` and the
residual is divided by ``lam``; its limit at ``lam = 0`` is computed by
quadrature, so the trivial solution at a zero of the mean field is a
regular starting point.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import (BudgetExceeded, DegreeIsZero, InputError, NoConvergence,
                     NumericalError, SingularShootJacobian, StepUnderflow)
from .dynamics import ForceField, Motion, Trajectory, integrate
from .manifold import ImplicitManifold, PhaseState

SHOOT_TOL = 1e-8
FD_STEP = 1e-6
TERMINATIONS = ("budget", "box_exit", "step_underflow", "fold_count_limit", "lambda_zero")


class PeriodicProblem:
    """Data of a forced periodic problem on M.

    ``f`` may be ``None`` (pure perturbation). Tangent fields (``m + s``
    components) move on M as ``xi''_pi = f + lam*h``; ``x_only`` fields are
    read as the DAE ``x'' = f + lam*h, g = 0`` and integrated through its
    lift.
    """

    def __init__(self, manifold: ImplicitManifold, f: Optional[ForceField], h: ForceField,
                 T: float, chart_seed, n_steps: int = 256, box=None):
        if not T > 0:
            raise InputError("period T must be positive")
        if h.kind == "periodic_h" and h.period is not None \
                and abs(h.period - T) > 1e-12 * max(1.0, T):
            raise InputError(f"h has period {h.period}, problem has T = {T}")
        fields = [h] if f is None else [f, h]
        kinds = {fl.tangency == "x_only" for fl in fields}
        if len(kinds) > 1:
            raise InputError("f and h must both be tangent fields or both x_only")
        self.M = manifold
        self.f = f
        self.h = h
        self.T = float(T)
        self.n_steps = int(n_steps)
        self.mode = "lifted" if kinds.pop() else "manifold"
        seed = chart_seed.xi if isinstance(chart_seed, PhaseState) else chart_seed
        seed = np.asarray(seed, dtype=float)
        self.y_seed = seed[manifold.m:] if seed.size == manifold.k else seed
        if self.y_seed.size != manifold.s:
            raise InputError("chart_seed must be a point of M or a y value")
        box = manifold.box[:manifold.m] if box is None else np.asarray(box, dtype=float)
        self.box = np.asarray(box, dtype=float).reshape(manifold.m, 2)

    @property
    def scaled(self) -> bool:
        return self.f is None

    def motion(self, lam) -> Motion:
        if self.f is None:
            return Motion(self.M, [self.h], [lam], mode=self.mode)
        return Motion(self.M, [self.f, self.h], [1.0, lam], mode=self.mode)

    def state(self, x0, u0, y_seed=None) -> PhaseState:
        M = self.M
        xi = M.chart_point(x0, self.y_seed if y_seed is None else y_seed)
        return PhaseState(xi, M.tangent_velocity(xi, u0))

    def orbit(self, lam, x0, u0, y_seed=None, record=True) -> Trajectory:
        st = self.state(x0, u0, y_seed)
        return integrate(self.M, self.motion(lam), st, 0.0, self.T, h=self.T / self.n_steps,
                         method="rk4_proj", project=True, record=record, check=False)


def _split(P, w):
    m = P.M.m
    return w[:m], w[m:]


def shoot_residual(P: PeriodicProblem, lam: float, chart_ic, y_seed=None,
                   return_orbit=False):
    """``(x(T) - x0, u(T) - u0)`` for the orbit starting at ``chart_ic = (x0, u0)``."""
    w = np.asarray(chart_ic, dtype=float)
    x0, u0 = _split(P, w)
    tr = P.orbit(lam, x0, u0, y_seed, record=return_orbit)
    m = P.M.m
    res = np.concatenate([tr.xi[-1, :m] - x0, tr.eta[-1, :m] - u0])
    return (res, tr) if return_orbit else res


def _limit_residual(P, x0, a, y_seed):
    """Limit of ``R(lam, x0, lam*a) / lam`` as ``lam -> 0``."""
    M, T, m = P.M, P.T, P.M.m
    xi = M.chart_point(x0, P.y_seed if y_seed is None else y_seed)
    zero = np.zeros(M.k)
    nodes, weights = np.polynomial.legendre.leggauss(64)
    ts = 0.5 * T * (nodes + 1.0)
    ws = 0.5 * T * weights
    E = np.array([P.h(t, xi, zero)[:m] for t in ts])
    first = ws @ E
    second = (ws * (T - ts)) @ E
    return np.concatenate([T * a + second, first])


def _system_residual(P, lam, w, y_seed=None, orbit=False):
    """Residual of the unknowns ``w``; with ``orbit`` also the trajectory
    (``None`` for the scaled limit at ``lam = 0``)."""
    x0, second = _split(P, w)
    if not P.scaled:
        return shoot_residual(P, lam, w, y_seed, return_orbit=orbit)
    if lam == 0.0:
        res = _limit_residual(P, x0, second, y_seed)
        return (res, None) if orbit else res
    out = shoot_residual(P, lam, np.concatenate([x0, lam * second]), y_seed, return_orbit=orbit)
    if orbit:
        return out[0] / lam, out[1]
    return out / lam


def _central_jacobian(fun, z):
    J = []
    for j in range(len(z)):
        dz = FD_STEP * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += dz
        zm[j] -= dz
        J.append((fun(zp) - fun(zm)) / (2 * dz))
    return np.array(J).T


def _check_regular(J):
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-6 * max(1.0, sv[0]):
        raise SingularShootJacobian(
            f"shooting Jacobian singular (sigma_min = {sv[-1]:.3g}); fold or resonance")


def _fd_jacobian(fun, z, r0):
    J = np.empty((len(r0), len(z)))
    for j in range(len(z)):
        dz = FD_STEP * max(1.0, abs(z[j]))
        zp = z.copy()
        zp[j] += dz
        J[:, j] = (fun(zp) - r0) / dz
    return J


@dataclass
class BranchPoint:
    lam: float
    chart_ic: np.ndarray
    residual: float
    amplitude: float
    ambient_gap: float = 0.0
    orbit: Optional[Trajectory] = None
    iterations: int = 0


@dataclass
class BranchCurve:
    points: List[BranchPoint]
    origin: np.ndarray
    termination: str
    degenerate: bool = False
    folds: int = 0
    message: str = ""
    m: int = 1

    def __len__(self):
        return len(self.points)

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.points])

    @property
    def amplitudes(self):
        return np.array([p.amplitude for p in self.points])

    @property
    def residuals(self):
        return np.array([p.residual for p in self.points])

    def header(self):
        m = self.m
        return (["lambda"] + [f"x0_{i + 1}" for i in range(m)]
                + [f"u0_{i + 1}" for i in range(m)] + ["residual", "amplitude"])

    def to_array(self):
        return np.array([[p.lam, *p.chart_ic, p.residual, p.amplitude] for p in self.points])

    def to_csv(self, path_or_file):
        np.savetxt(path_or_file, self.to_array().reshape(-1, 2 * self.m + 3), delimiter=",",
                   header=",".join(self.header()), comments="", fmt="%.17g")


def _amplitude(tr: Trajectory):
    xi = tr.xi[:-1] if len(tr) > 1 else tr.xi
    return float(np.linalg.norm(xi - xi.mean(axis=0), axis=1).max())


def _make_point(P, lam, w, y_seed, iterations=0, res=None, tr=None):
    """Build (and check) an accepted solution from its orbit; ``chart_ic`` is
    returned in physical ``(x0, u0)`` coordinates. The orbit is recomputed
    when not supplied."""
    x0, second = _split(P, w)
    u0 = lam * second if P.scaled else second
    if tr is None:
        res, tr = shoot_residual(P, lam, np.concatenate([x0, u0]), y_seed, return_orbit=True)
    elif P.scaled:
        res = res * lam
    gap = max(float(np.abs(tr.xi[-1] - tr.xi[0]).max()),
              float(np.abs(tr.eta[-1] - tr.eta[0]).max()))
    return BranchPoint(lam, np.concatenate([x0, u0]), float(np.linalg.norm(res)),
                       _amplitude(tr), gap, tr, iterations)


def newton_correct(P: PeriodicProblem, lam: float, guess, tol=SHOOT_TOL, max_iter=25,
                   y_seed=None, check_jacobian=True) -> BranchPoint:
    """Solve the shooting equations at fixed ``lam`` starting from ``guess``
    (chart coordinates ``(x0, u0)``) by damped Newton.

    With ``check_jacobian`` the Jacobian at the accepted point is recomputed
    by central differences; a solution where it is singular (a fold, or a
    period in resonance with the linearization) raises
    :class:`SingularShootJacobian` instead of being returned.
    """
    w = np.array(guess, dtype=float)
    if P.scaled:
        x0, u0 = _split(P, w)
        w = np.concatenate([x0, u0 / lam if lam else np.zeros_like(u0)])
    fun = lambda z: _system_residual(P, lam, z, y_seed)
    r, tr = _system_residual(P, lam, w, y_seed, orbit=True)
    nr = np.linalg.norm(r)
    it = 0
    scale = max(1.0, lam) if P.scaled else 1.0
    while nr * scale > tol:
        if it >= max_iter:
            raise NoConvergence(f"shooting Newton did not converge (|R| = {nr:.3g})")
        it += 1
        J = _fd_jacobian(fun, w, r)
        _check_regular(J)
        step = np.linalg.solve(J, -r)
        t = 1.0
        while True:
            w_try = w + t * step
            try:
                r_try = fun(w_try)
                n_try = np.linalg.norm(r_try)
            except NumericalError:
                n_try = np.inf
            if n_try < nr or t < 1e-4:
                break
            t *= 0.5
        if not n_try < nr:
            raise NoConvergence(f"shooting Newton stalled at |R| = {nr:.3g}")
        w, r, nr = w_try, r_try, n_try
        tr = None
    if check_jacobian:
        _check_regular(_central_jacobian(fun, w))
    return _make_point(P, lam, w, y_seed, it, r, tr)


def _tangent(J, prev=None):
    _, _, Vt = np.linalg.svd(J)
    tau = Vt[-1]
    if prev is None:
        if tau[0] < 0:
            tau = -tau
    elif tau @ prev < 0:
        tau = -tau
    return tau


def trace_branch(P: PeriodicProblem, origin, max_points=100, ds=0.05, ds_min=1e-10,
                 ds_max=0.5, max_folds=10, tol=SHOOT_TOL, degree=None, force=False,
                 max_corrector=8, lam_max=np.inf) -> BranchCurve:
    """Follow the branch of periodic solutions leaving the zero ``origin``.

    ``origin`` is a zero of the augmented map (a point of M, or its x part).
    The curve starts with the trivial solution at ``lam = 0`` and moves
    initially towards ``lam > 0``; it stops when ``max_points`` have been
    accepted (``budget``), the x-part leaves the problem box, the step falls
    below ``ds_min``, too many folds were passed, or the branch returns to
    ``lam = 0``.

    If ``degree`` is given and zero, :class:`DegreeIsZero` is raised unless
    ``force`` is set, in which case a warning is issued.
    """
    if degree is not None and degree == 0:
        msg = "degree is zero: no branch is guaranteed to leave this zero"
        if not force:
            raise DegreeIsZero(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    M, m = P.M, P.M.m
    origin = np.asarray(origin, dtype=float)
    x_origin = origin[:m]
    y_seed = origin[m:] if origin.size == M.k else P.y_seed
    # polish the trivial solution at lam = 0
    w = np.concatenate([x_origin, np.zeros(m)])
    fun0 = lambda z: _system_residual(P, 0.0, z, y_seed)
    r = fun0(w)
    for _ in range(25):
        if np.linalg.norm(r) <= 1e-3 * tol:
            break
        J = _fd_jacobian(fun0, w, r)
        w = w + np.linalg.solve(J, -r)
        r = fun0(w)
    if np.linalg.norm(r) > tol:
        raise NoConvergence(f"origin is not a solution at lam = 0 (|R| = {np.linalg.norm(r):.3g})")
    first = _make_point(P, 0.0, w, y_seed)
    if np.linalg.norm(first.chart_ic[:m] - x_origin) > 1e-8:
        raise NoConvergence("lam = 0 solution drifted away from the origin")
    points = [first]

    def full(z, seed, orbit=False):
        return _system_residual(P, z[0], z[1:], seed, orbit)

    z = np.concatenate([[0.0], w])
    r = full(z, y_seed)
    Jz = _fd_jacobian(lambda q: full(q, y_seed), z, r)
    degenerate = bool(np.linalg.norm(Jz[:, 0]) <= 1e-9 * max(1.0, np.linalg.norm(Jz[:, 1:])))
    tau = _tangent(Jz)
    folds = 0
    termination = "budget"
    message = ""
    seed = points[-1].orbit.xi[0][m:]
    while len(points) < max_points:
        accepted = False
        while not accepted:
            if ds < ds_min:
                termination = "step_underflow"
                message = f"arclength step fell below {ds_min:g} at lam = {z[0]:.6g}"
                break
            zp = z + ds * tau
            zc = zp.copy()
            Jc = Jz
            try:
                for it in range(max_corrector):
                    rc, tr = full(zc, seed, True)
                    scale = max(1.0, zc[0]) if P.scaled else 1.0
                    if np.linalg.norm(rc) * scale <= tol:
                        accepted = True
                        break
                    dz = np.linalg.solve(np.vstack([Jc, tau]),
                                         -np.concatenate([rc, [tau @ (zc - zp)]]))
                    zc = zc + dz
                    if np.linalg.norm(dz) > 2 * ds:
                        break
            except (NumericalError, np.linalg.LinAlgError):
                accepted = False
            if not accepted:
                ds *= 0.5
        if not accepted:
            break
        if zc[0] < 0.0:
            termination = "lambda_zero"
            message = f"branch returned to lam = 0 near x0 = {zc[1:1 + m].tolist()}"
            break
        pt = _make_point(P, float(zc[0]), zc[1:], seed, it, rc, tr)
        x0 = pt.chart_ic[:m]
        if np.any(x0 < P.box[:, 0]) or np.any(x0 > P.box[:, 1]) \
                or not M.in_box(pt.orbit.xi.min(axis=0)) or not M.in_box(pt.orbit.xi.max(axis=0)):
            termination = "box_exit"
            message = f"orbit left the box at lam = {pt.lam:.6g}"
            break
        points.append(pt)
        seed = pt.orbit.xi[0][m:]
        z = zc
        Jz = _fd_jacobian(lambda q: full(q, seed), z, rc)
        new_tau = _tangent(Jz, tau)
        if np.sign(new_tau[0]) != np.sign(tau[0]) and new_tau[0] != 0.0:
            folds += 1
            if folds >= max_folds:
                termination = "fold_count_limit"
                break
        tau = new_tau
        if it <= 1:
            ds = min(ds_max, 1.5 * ds)
        elif it >= 4:
            ds *= 0.7
        if z[0] > lam_max:
            message = f"lam exceeded {lam_max}"
            break
    return BranchCurve(points, origin, termination, degenerate, folds, message, m)


def trace_or_raise(P, origin, **opts) -> BranchCurve:
    """Like :func:`trace_branch` but raises :class:`BudgetExceeded` (carrying
    the partial curve) when the budget ran out before any other stop."""
    curve = trace_branch(P, origin, **opts)
    if curve.termination == "budget":
        raise BudgetExceeded("point budget exhausted", curve=curve)
    return curve
