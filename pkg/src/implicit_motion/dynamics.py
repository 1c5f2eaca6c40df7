"""Second-order motion constrained to an implicit manifold.

A state is ``(xi, eta)`` with ``xi`` on M and ``eta`` tangent. The reactive
force ``r(xi, eta)`` is the unique normal vector with
``g'(xi) r = -g''(xi)(eta, eta)``; with ``A, B`` the x/y blocks of ``g'`` and
``C = A A^T B^{-T} + B`` it is ``(A^T B^{-T} C^{-1} sigma, C^{-1} sigma)``
where ``sigma = -g''(eta, eta)``.

Two ways of moving on M are supported:

* the second-order field ``(eta, r + phi)`` of a tangent force ``phi``;
* the lift of a semi-explicit DAE ``x'' = E, g(x, y) = 0`` to the ambient
  acceleration ``(E, -B^{-1}(A E + g''(eta, eta)))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (InputError, IntegrationFailure, StepUnderflow,
                     TangencyViolation)
from .expr import ExprAst, VectorExpr, parse
from .manifold import ImplicitManifold, PhaseState, canonical_names

TANGENCY_TOL = 1e-8
KINDS = ("autonomous_f", "periodic_h")
TANGENCIES = ("declared_tangent", "x_only", "ambient")


class ForceField:
    """A force ``phi(t, xi, eta)``.

    ``tangency`` says how the values relate to M:

    ``declared_tangent``
        ``n_out = m + s`` and values lie in ``T_xi M`` (checked on demand).
    ``x_only``
        ``n_out = m``: the right-hand side of ``x'' = E`` of a DAE.
    ``ambient``
        ``n_out = m + s`` with no tangency claim (e.g. a lifted DAE field);
        projected onto ``T_xi M`` when used as a force on M.
    """

    def __init__(self, func: Callable, n_out: int, m: int, s: int, kind="autonomous_f",
                 period: Optional[float] = None, tangency="declared_tangent",
                 expr: Optional[VectorExpr] = None):
        if kind not in KINDS:
            raise InputError(f"unknown force kind {kind!r}")
        if tangency not in TANGENCIES:
            raise InputError(f"unknown tangency {tangency!r}")
        expected = m if tangency == "x_only" else m + s
        if n_out != expected:
            raise InputError(f"{tangency} field needs {expected} components, got {n_out}")
        if kind == "periodic_h" and not (period and period > 0):
            raise InputError("periodic_h fields need a period T > 0")
        self.func = func
        self.n_out = n_out
        self.m, self.s = m, s
        self.kind = kind
        self.period = period
        self.tangency = tangency
        self.expr = expr

    @classmethod
    def from_text(cls, sources: Sequence[str], m: int, s: int, kind="autonomous_f",
                  period=None, tangency=None) -> "ForceField":
        """Parse components over ``t, x1..xm, y1..ys, u1..um, v1..vs``."""
        if tangency is None:
            tangency = "x_only" if len(sources) == m else "declared_tangent"
        expr = VectorExpr.parse(sources, canonical_names(m, s, time=True, velocities=True))
        fn = expr._fn(0)

        def func(t, xi, eta):
            return np.array(fn([t] + list(xi) + list(eta)), dtype=float)

        return cls(func, len(sources), m, s, kind=kind, period=period,
                   tangency=tangency, expr=expr)

    @classmethod
    def zero(cls, m, s, tangency="declared_tangent"):
        n = m if tangency == "x_only" else m + s
        return cls(lambda t, xi, eta: np.zeros(n), n, m, s, tangency=tangency)

    def __call__(self, t, xi, eta) -> np.ndarray:
        return self.func(t, xi, eta)

    value = __call__

    def __repr__(self):
        body = self.expr.texts if self.expr is not None else self.func
        return f"ForceField({body}, kind={self.kind}, tangency={self.tangency})"

    def rest_block(self) -> VectorExpr:
        """First ``m`` components at zero velocity (and ``t = 0`` when
        autonomous), as an expression over ``x, y`` (``t, x, y`` for periodic
        fields). This is the extension used to build degree maps."""
        if self.expr is None:
            raise InputError("rest_block needs an expression-backed field")
        m, s = self.m, self.s
        zeros = {f"u{i + 1}": 0.0 for i in range(m)}
        zeros.update({f"v{i + 1}": 0.0 for i in range(s)})
        names = canonical_names(m, s)
        if self.kind == "autonomous_f":
            zeros["t"] = 0.0
        else:
            names = ["t"] + names
        return self.expr.block(0, m).substitute(zeros, names)

    def check_periodic(self, M: ImplicitManifold, rng, n=10, tol=1e-9):
        """Spot-check ``phi(t + T) = phi(t)`` at random states."""
        if self.kind != "periodic_h":
            return 0.0
        worst = 0.0
        for st in M.random_states(n, rng):
            t = rng.uniform(0.0, self.period)
            a = self(t, st.xi, st.eta)
            b = self(t + self.period, st.xi, st.eta)
            worst = max(worst, float(np.abs(a - b).max() / max(1.0, np.abs(a).max())))
        if worst > tol:
            raise InputError(f"field is not {self.period}-periodic in t (defect {worst:.3g})")
        return worst

    def check_tangent(self, M: ImplicitManifold, states, tol=TANGENCY_TOL, t=0.0):
        """Largest ``|g'(xi) phi|`` over ``states``; raises above ``tol``."""
        if self.tangency != "declared_tangent":
            return 0.0
        worst = 0.0
        for st in states:
            _, G = M.value_and_jacobian(st.xi)
            worst = max(worst, float(np.abs(G @ self(t, st.xi, st.eta)).max()))
        if worst > tol:
            raise TangencyViolation(f"field declared tangent has |g' phi| = {worst:.3g}")
        return worst


# ---------------------------------------------------------------------------
# reactive force and the second-order field

def _reactive(M, G, H, eta):
    A, B = M.split(G)
    sigma = -((H @ eta) @ eta)
    if M.s == 1:
        # scalar B: C = |A|^2 / B + B
        b = B[0, 0]
        a = A[0]
        v = sigma[0] / (a @ a / b + b)
        return np.append(a * (v / b), v)
    BinvT = np.linalg.inv(B).T
    C = A @ A.T @ BinvT + B
    v = np.linalg.solve(C, sigma)
    return np.concatenate([A.T @ (BinvT @ v), v])


def reactive_force(M: ImplicitManifold, state: PhaseState) -> np.ndarray:
    """Constraint reaction ``r(xi, eta)``: normal to M, quadratic in ``eta``."""
    _, G, H = M.derivatives(state.xi)
    return _reactive(M, G, H, np.asarray(state.eta, dtype=float))


def reactive_force_lstsq(M: ImplicitManifold, state: PhaseState) -> np.ndarray:
    """Minimum-norm solution of ``g'(xi) r = -g''(xi)(eta, eta)``.

    The minimum-norm solution lies in the row space of ``g'``, i.e. in the
    normal space, so this is an independent route to the reaction.
    """
    _, G, H = M.derivatives(state.xi)
    eta = np.asarray(state.eta, dtype=float)
    sigma = -((H @ eta) @ eta)
    return np.linalg.lstsq(G, sigma, rcond=None)[0]


def second_order_field(M: ImplicitManifold, phi: ForceField, t, state: PhaseState,
                       check=True):
    """``(eta, r(xi, eta) + phi(t, xi, eta))``, a tangent vector to TM."""
    xi, eta = state.xi, np.asarray(state.eta, dtype=float)
    _, G, H = M.derivatives(xi)
    force = phi(t, xi, eta)
    if phi.tangency == "x_only":
        raise InputError("second_order_field needs a field with m + s components")
    if phi.tangency == "ambient":
        force = force - M._normal_part(G, force)
    elif check:
        defect = float(np.abs(G @ force).max())
        if defect > TANGENCY_TOL * max(1.0, np.abs(force).max()):
            raise TangencyViolation(f"|g' phi| = {defect:.3g} at t={t}")
    return eta.copy(), _reactive(M, G, H, eta) + force


def _lift(M, G, H, E, eta):
    A, B = M.split(G)
    sig = (H @ eta) @ eta
    if M.s == 1:
        return np.append(E, -(A[0] @ E + sig[0]) / B[0, 0])
    return np.concatenate([E, -np.linalg.solve(B, A @ E + sig)])


def dae_lift(M: ImplicitManifold, E: ForceField) -> ForceField:
    """Lift ``x'' = E(t, x, y, u, v)`` to a full acceleration consistent with
    the twice differentiated constraint."""
    if E.tangency != "x_only":
        raise InputError("dae_lift expects an x_only field")

    def func(t, xi, eta):
        eta = np.asarray(eta, dtype=float)
        _, G, H = M.derivatives(xi)
        return _lift(M, G, H, E(t, xi, eta), eta)

    return ForceField(func, M.k, M.m, M.s, kind=E.kind, period=E.period, tangency="ambient")


class Motion:
    """Acceleration law ``xi'' = a(t, xi, eta)`` built from weighted fields.

    ``mode="manifold"``: ``a = r(xi, eta) + sum_i w_i phi_i`` over tangent
    and ambient fields (ambient ones projected onto the tangent space), plus
    the tangential part of the lift of ``sum_i w_i E_i`` over the x_only
    fields. The motion is the second-order ODE on M.

    ``mode="lifted"``: all fields are x_only; ``a`` is the lift of
    ``sum_i w_i E_i`` (the DAE itself, written in ambient coordinates).
    """

    def __init__(self, M: ImplicitManifold, fields: Sequence[ForceField], weights=None,
                 mode="manifold"):
        if mode not in ("manifold", "lifted"):
            raise InputError(f"unknown motion mode {mode!r}")
        fields = list(fields)
        if mode == "lifted" and any(f.tangency != "x_only" for f in fields):
            raise InputError("lifted motion needs x_only fields")
        self.M = M
        self.fields = fields
        self.weights = list(weights) if weights is not None else [1.0] * len(fields)
        self.mode = mode

    def accel(self, t, xi, eta) -> np.ndarray:
        M = self.M
        _, G, H = M.derivatives(xi)
        if self.mode == "lifted":
            E = np.zeros(M.m)
            for w, f in zip(self.weights, self.fields):
                if w != 0.0:
                    E = E + w * f(t, xi, eta)
            return _lift(M, G, H, E, eta)
        a = _reactive(M, G, H, eta)
        E = None
        for w, f in zip(self.weights, self.fields):
            if f.tangency == "x_only":
                # the DAE right-hand sides add up before the (affine) lift
                E = np.zeros(M.m) if E is None else E
                if w != 0.0:
                    E = E + w * f(t, xi, eta)
                continue
            if w == 0.0:
                continue
            phi = f(t, xi, eta)
            if f.tangency == "ambient":
                phi = phi - M._normal_part(G, phi)
            a = a + w * phi
        if E is not None:
            lifted = _lift(M, G, H, E, eta)
            a = a + lifted - M._normal_part(G, lifted)
        return a


# ---------------------------------------------------------------------------
# integration

@dataclass
class Trajectory:
    """Sampled solution; ``xi`` and ``eta`` are ``(n, m + s)`` arrays."""

    t: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    m: int
    s: int
    g_res: np.ndarray
    tan_res: np.ndarray
    energy: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def samples(self):
        return [(t, PhaseState(x, e)) for t, x, e in zip(self.t, self.xi, self.eta)]

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.xi[-1].copy(), self.eta[-1].copy())

    def header(self):
        m, s = self.m, self.s
        names = ["t"] + [f"x{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(s)]
        names += [f"u{i + 1}" for i in range(m)] + [f"v{i + 1}" for i in range(s)]
        return names + ["g_res_max"]

    def to_array(self):
        return np.column_stack([self.t, self.xi, self.eta, self.g_res])

    def to_csv(self, path_or_file):
        np.savetxt(path_or_file, self.to_array(), delimiter=",",
                   header=",".join(self.header()), comments="", fmt="%.17g")


_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


def _rk4_step(accel, t, xi, eta, h):
    a1 = accel(t, xi, eta)
    xi2, eta2 = xi + 0.5 * h * eta, eta + 0.5 * h * a1
    a2 = accel(t + 0.5 * h, xi2, eta2)
    xi3, eta3 = xi + 0.5 * h * eta2, eta + 0.5 * h * a2
    a3 = accel(t + 0.5 * h, xi3, eta3)
    xi4, eta4 = xi + h * eta3, eta + h * a3
    a4 = accel(t + h, xi4, eta4)
    xi_new = xi + (h / 6.0) * (eta + 2.0 * eta2 + 2.0 * eta3 + eta4)
    eta_new = eta + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return xi_new, eta_new


def _dp_step(accel, t, xi, eta, h):
    """One Dormand-Prince 5(4) step; returns the 5th order state and the
    embedded error estimate."""
    k = len(xi)
    z = np.concatenate([xi, eta])
    ks = []
    for i in range(7):
        zi = z.copy()
        for j, a in enumerate(_DP_A[i]):
            if a:
                zi += h * a * ks[j]
        ks.append(np.concatenate([zi[k:], accel(t + _DP_C[i] * h, zi[:k], zi[k:])]))
    K = np.array(ks)
    z5 = z + h * (_DP_B5 @ K)
    err = h * ((_DP_B5 - _DP_B4) @ K)
    return z5[:k], z5[k:], err


def _as_motion(M, field_or_motion):
    if isinstance(field_or_motion, Motion):
        return field_or_motion
    if isinstance(field_or_motion, ForceField):
        return Motion(M, [field_or_motion])
    if isinstance(field_or_motion, (list, tuple)):
        return Motion(M, field_or_motion)
    raise InputError("integrate expects a Motion, a ForceField or a list of fields")


def integrate(M: ImplicitManifold, fields, state0: PhaseState, t0: float, t1: float,
              h: float = 1e-3, method: str = "rk4_proj", project: bool = True,
              rtol: float = 1e-9, atol: float = 1e-12, potential: Optional[ExprAst] = None,
              record: bool = True, check: bool = True) -> Trajectory:
    """Integrate the motion from ``state0`` over ``[t0, t1]``.

    ``method="rk4_proj"`` takes fixed steps of (at most) ``h``;
    ``"rk45_proj"`` is Dormand-Prince with error control (``h`` is the first
    trial step). With ``project`` on, every accepted step is followed by the
    closest-point projection of ``xi`` onto M (seeded at the previous point)
    and the tangent projection of ``eta``.
    """
    motion = _as_motion(M, fields)
    if method not in ("rk4_proj", "rk45_proj"):
        raise InputError(f"unknown method {method!r}")
    if not h > 0:
        raise InputError("step h must be positive")
    if t1 < t0:
        raise InputError("t1 must not precede t0")
    xi = np.array(state0.xi, dtype=float)
    eta = np.array(state0.eta, dtype=float)
    if check:
        state0.validate(M, tol=max(10 * M.on_tol, 1e-8))
    accel = motion.accel
    ts, xis, etas = [t0], [xi], [eta]
    t = t0

    def finish_step(xi_old, xi_new, eta_new):
        if not (np.all(np.isfinite(xi_new)) and np.all(np.isfinite(eta_new))):
            raise IntegrationFailure(f"non-finite state at t={t:.6g}")
        if project:
            xi_new = M.project_to_manifold(xi_new, seed=xi_old)
            eta_new = M.tangent_project(xi_new, eta_new)
        return xi_new, eta_new

    if method == "rk4_proj":
        n = max(1, int(np.ceil((t1 - t0) / h - 1e-9)))
        step = (t1 - t0) / n
        for i in range(n):
            xi_new, eta_new = _rk4_step(accel, t, xi, eta, step)
            t = t0 + (i + 1) * step
            xi, eta = finish_step(xi, xi_new, eta_new)
            if record or i == n - 1:
                ts.append(t)
                xis.append(xi)
                etas.append(eta)
    else:
        step = min(h, t1 - t0) if t1 > t0 else h
        while t < t1:
            step = min(step, t1 - t)
            if step < 1e-14 * max(1.0, abs(t)):
                raise StepUnderflow(f"rk45 step underflow at t={t:.6g}")
            xi5, eta5, err = _dp_step(accel, t, xi, eta, step)
            scale = atol + rtol * np.maximum(np.abs(np.concatenate([xi, eta])),
                                             np.abs(np.concatenate([xi5, eta5])))
            enorm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if enorm <= 1.0:
                t = t + step
                xi, eta = finish_step(xi, xi5, eta5)
                if record or t >= t1:
                    ts.append(t)
                    xis.append(xi)
                    etas.append(eta)
            factor = 0.9 * enorm ** -0.2 if enorm > 0 else 5.0
            step *= min(5.0, max(0.2, factor))

    return _make_trajectory(M, np.array(ts), np.array(xis), np.array(etas), potential)


def _make_trajectory(M, ts, xis, etas, potential=None):
    g_res = np.empty(len(ts))
    tan_res = np.empty(len(ts))
    for i, (x, e) in enumerate(zip(xis, etas)):
        g, G = M.value_and_jacobian(x)
        g_res[i] = np.abs(g).max()
        tan_res[i] = np.abs(G @ e).max()
    energy = None
    stats = {"max_g": float(g_res.max()), "max_tangency": float(tan_res.max()),
             "steps": len(ts) - 1}
    if potential is not None:
        V = np.array([potential(x) for x in xis])
        energy = 0.5 * np.sum(etas ** 2, axis=1) + V
        stats["energy_drift"] = float(np.abs(energy - energy[0]).max())
    return Trajectory(ts, xis, etas, M.m, M.s, g_res, tan_res, energy, stats)


def potential_from_text(source: str, m: int, s: int) -> ExprAst:
    """Potential energy ``V(x, y)`` in the canonical names."""
    return parse(source, canonical_names(m, s))


def compare_dae_ode(M: ImplicitManifold, E: Sequence[ForceField], state0: PhaseState,
                    t0: float, t1: float, h: float = 1e-3, weights=None, project=True):
    """Integrate the DAE lift and the projected ODE on M from the same state.

    Returns ``(gap, lifted, projected)`` where ``gap`` is the sup-norm
    distance between the two sampled phase trajectories.
    """
    lifted = integrate(M, Motion(M, E, weights, mode="lifted"), state0, t0, t1, h=h,
                       project=project)
    projected = integrate(M, Motion(M, E, weights, mode="manifold"), state0, t0, t1, h=h,
                          project=project)
    gap = max(np.abs(lifted.xi - projected.xi).max(), np.abs(lifted.eta - projected.eta).max())
    return float(gap), lifted, projected
