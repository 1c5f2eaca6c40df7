"""Implicitly defined manifolds ``M = g^{-1}(0)`` in R^m x R^s.

The last ``s`` coordinates are the ones the constraint can be solved for:
the partial Jacobian ``B = d g / d y`` must be invertible wherever the
manifold is used. Its sign of determinant is pinned on first use and any
later disagreement raises :class:`SignFlip`; a numerically singular ``B`` is
a hard error (never regularised).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, NoConvergence, SignFlip, SingularB
from .expr import VectorExpr

COND_LIMIT = 1e12
LEMMA_TOL = 1e-8


def canonical_names(m: int, s: int, time=False, velocities=False):
    """Variable names ``t, x1..xm, y1..ys, u1..um, v1..vs`` (optionally trimmed)."""
    names = [f"x{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(s)]
    if velocities:
        names += [f"u{i + 1}" for i in range(m)] + [f"v{i + 1}" for i in range(s)]
    if time:
        names = ["t"] + names
    return names


@dataclass(frozen=True)
class JacobianSplit:
    """``A = d1 g`` (s x m), ``B = d2 g`` (s x s) and ``C = A A^T B^{-T} + B``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def lemma_residuals(self):
        """Asymmetry and smallest eigenvalue of ``B^{-1} C``.

        ``B^{-1} C = X X^T + I`` with ``X = B^{-1} A``, so it must be
        symmetric positive definite.
        """
        K = np.linalg.solve(self.B, self.C)
        scale = max(1.0, np.abs(K).max())
        asym = np.abs(K - K.T).max() / scale
        min_eig = np.linalg.eigvalsh(0.5 * (K + K.T)).min()
        return asym, min_eig


@dataclass(frozen=True)
class PhaseState:
    """A point ``xi = (x, y)`` on M and a tangent velocity ``eta = (u, v)``."""

    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    def residuals(self, M: "ImplicitManifold"):
        """``(max |g(xi)|, max |g'(xi) eta|)``."""
        g, G = M.value_and_jacobian(self.xi)
        return float(np.abs(g).max()), float(np.abs(G @ self.eta).max())

    def validate(self, M: "ImplicitManifold", tol: Optional[float] = None):
        tol = M.on_tol if tol is None else tol
        on, tan = self.residuals(M)
        if on > tol or tan > tol:
            raise InputError(f"state is not in TM: |g|={on:.3g}, |g' eta|={tan:.3g} > {tol:.1g}")
        return self


class ImplicitManifold:
    """``M = {(x, y) : g(x, y) = 0}`` with ``g: R^{m+s} -> R^s``.

    Parameters
    ----------
    g : VectorExpr
        Constraint with ``n_in = m + s`` and ``n_out = s``; the first ``m``
        inputs are the x block.
    m, s : int
        Dimension and codimension.
    box : array_like, optional
        ``(m + s, 2)`` working box; defaults to the whole space.
    on_tol : float
        Membership tolerance on ``|g|``.
    """

    def __init__(self, g: VectorExpr, m: int, s: int, box=None, on_tol: float = 1e-10):
        if m < 1 or s < 1:
            raise InputError("m and s must be at least 1")
        if g.n_in != m + s or g.n_out != s:
            raise InputError(f"g must map R^{m + s} -> R^{s}, got arity {g.arity}")
        self.g = g
        self.m = m
        self.s = s
        self.k = m + s
        if box is None:
            box = [[-np.inf, np.inf]] * self.k
        box = np.array(box, dtype=float).reshape(self.k, 2)
        if np.any(box[:, 0] >= box[:, 1]):
            raise InputError("box intervals must have lo < hi")
        self.box = box
        self.on_tol = float(on_tol)
        self._sign = None
        self._sign_lock = threading.Lock()

    @classmethod
    def from_text(cls, sources: Sequence[str], m: int, s: int, box=None, on_tol=1e-10):
        """Build from expression strings in the canonical names ``x1.., y1..``."""
        if len(sources) != s:
            raise InputError(f"expected {s} constraint expressions, got {len(sources)}")
        g = VectorExpr.parse(sources, canonical_names(m, s))
        return cls(g, m, s, box=box, on_tol=on_tol)

    def __repr__(self):
        return f"ImplicitManifold(g={self.g.texts}, m={self.m}, s={self.s})"

    # -- raw evaluations ---------------------------------------------------

    def value(self, xi) -> np.ndarray:
        return self.g(xi)

    def value_and_jacobian(self, xi):
        return self.g.value_and_jacobian(xi)

    def derivatives(self, xi):
        """``g``, ``g'`` (s x k) and the stacked Hessians (s x k x k)."""
        return self.g.eval2(xi)

    def residual(self, xi) -> float:
        return float(np.abs(self.g(xi)).max())

    def contains(self, xi, tol=None) -> bool:
        tol = self.on_tol if tol is None else tol
        return self.residual(xi) <= tol

    def in_box(self, xi, margin=0.0) -> bool:
        xi = np.asarray(xi)
        return bool(np.all(xi >= self.box[:, 0] - margin) and np.all(xi <= self.box[:, 1] + margin))

    # -- the y-block Jacobian and the pinned sign ----------------------------

    @property
    def s_sign(self) -> Optional[int]:
        """Pinned sign of det B, or None before the first evaluation."""
        return self._sign

    def check_B(self, B) -> int:
        """Raise unless ``B`` is well conditioned; pin/compare its sign."""
        if not np.all(np.isfinite(B)):
            raise SingularB("non-finite entries in d2 g")
        if self.s == 1:
            det = B[0, 0]
            if det == 0.0:
                raise SingularB("d2 g vanishes")
        else:
            if np.linalg.cond(B) > COND_LIMIT:
                raise SingularB(f"d2 g is ill-conditioned (cond > {COND_LIMIT:.0e})")
            det = np.linalg.det(B)
        sign = 1 if det > 0 else -1
        if self._sign is None:
            with self._sign_lock:
                if self._sign is None:
                    self._sign = sign
        if sign != self._sign:
            raise SignFlip(f"sign det d2 g changed from {self._sign:+d} to {sign:+d}")
        return sign

    def split(self, G):
        """``(A, B)`` blocks of a full Jacobian ``g'``; validates ``B``."""
        A, B = G[:, :self.m], G[:, self.m:]
        self.check_B(B)
        return A, B

    def jacobians(self, xi) -> JacobianSplit:
        _, G = self.value_and_jacobian(xi)
        A, B = self.split(G)
        Binv = np.linalg.inv(B)
        C = A @ A.T @ Binv.T + B
        split = JacobianSplit(A, B, C)
        asym, min_eig = split.lemma_residuals()
        if asym > LEMMA_TOL or min_eig <= 0.0:
            raise SingularB(f"B^-1 C not symmetric positive definite (asym={asym:.2g}, "
                            f"min eig={min_eig:.2g})")
        return split

    # -- tangent / normal spaces --------------------------------------------

    def _normal_part(self, G, w):
        self.split(G)
        if self.s == 1:
            n = G[0]
            return n * ((n @ w) / (n @ n))
        return G.T @ np.linalg.solve(G @ G.T, G @ w)

    def normal_project(self, xi, w) -> np.ndarray:
        """Orthogonal projection of ``w`` onto the normal space at ``xi``."""
        _, G = self.value_and_jacobian(xi)
        return self._normal_part(G, np.asarray(w, dtype=float))

    def tangent_project(self, xi, w) -> np.ndarray:
        """Orthogonal projection of ``w`` onto ``T_xi M = ker g'(xi)``."""
        w = np.asarray(w, dtype=float)
        _, G = self.value_and_jacobian(xi)
        return w - self._normal_part(G, w)

    def tangent_velocity(self, xi, u) -> np.ndarray:
        """Complete an x-velocity ``u`` to the tangent vector ``(u, -B^{-1} A u)``."""
        _, G = self.value_and_jacobian(xi)
        A, B = self.split(G)
        u = np.asarray(u, dtype=float)
        return np.concatenate([u, -np.linalg.solve(B, A @ u)])

    # -- solves ---------------------------------------------------------------

    def chart_solve_y(self, x, y_seed, max_iter=50, max_step=1.0) -> np.ndarray:
        """Solve ``g(x, y) = 0`` for y, staying on the sheet through ``y_seed``.

        Newton on y with the y-block Jacobian, step length capped by
        ``max_step * (1 + |y|)`` and monotone backtracking on ``|g|``.
        """
        x = np.asarray(x, dtype=float).reshape(self.m)
        y = np.array(y_seed, dtype=float).reshape(self.s)
        gv, G = self.value_and_jacobian(np.concatenate([x, y]))
        res = np.abs(gv).max()
        polished = False
        for _ in range(max_iter):
            if res <= self.on_tol:
                if polished or res <= 1e-3 * self.on_tol:
                    return y
                polished = True
            _, B = self.split(G)
            dy = -np.linalg.solve(B, gv)
            cap = max_step * (1.0 + np.linalg.norm(y))
            nd = np.linalg.norm(dy)
            if nd > cap:
                dy *= cap / nd
            alpha = 1.0
            while True:
                y_try = y + alpha * dy
                g_try, G_try = self.value_and_jacobian(np.concatenate([x, y_try]))
                r_try = np.abs(g_try).max()
                if r_try < res or (res <= self.on_tol and r_try <= self.on_tol):
                    break
                alpha *= 0.5
                if alpha < 1e-6:
                    if res <= self.on_tol:
                        return y
                    raise NoConvergence(f"chart solve stalled at |g|={res:.3g}")
            y, gv, G, res = y_try, g_try, G_try, r_try
        if res <= self.on_tol:
            return y
        raise NoConvergence(f"chart solve did not converge in {max_iter} iterations (|g|={res:.3g})")

    def chart_point(self, x, y_seed) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.m)
        return np.concatenate([x, self.chart_solve_y(x, y_seed)])

    def project_to_manifold(self, p, seed=None, max_iter=50) -> np.ndarray:
        """Closest point of M to ``p`` near ``seed``.

        Gauss-Newton with minimum-norm steps (in the row space of ``g'``)
        brings the point onto M; if ``q - p`` is then not orthogonal to
        ``T_q M`` to 1e-8 a Newton solve of the Lagrange conditions
        ``q - p = g'(q)^T mu, g(q) = 0`` finishes the job. ``seed`` (a point
        of M) guards the sheet: no point of M is farther from ``p`` than the
        seed is.
        """
        p = np.asarray(p, dtype=float)
        q = p.copy()
        gq, G = self.value_and_jacobian(q)
        res = np.abs(gq).max()
        if res <= self.on_tol:
            return q
        polished = False
        for _ in range(max_iter):
            self.split(G)
            step = G.T @ np.linalg.solve(G @ G.T, gq)
            alpha = 1.0
            while True:
                q_try = q - alpha * step
                g_try, G_try = self.value_and_jacobian(q_try)
                r_try = np.abs(g_try).max()
                if r_try < res:
                    break
                alpha *= 0.5
                if alpha < 1e-3:
                    break
            if r_try >= res:
                if res <= self.on_tol:
                    break
                raise NoConvergence(f"projection diverging at |g|={res:.3g}")
            q, gq, G, res = q_try, g_try, G_try, r_try
            # one extra step past the tolerance keeps the map smooth in p
            if res <= 1e-3 * self.on_tol or (res <= self.on_tol and polished):
                break
            polished = res <= self.on_tol
        else:
            if res > self.on_tol:
                raise NoConvergence(f"projection did not converge (|g|={res:.3g})")
        d = q - p
        if np.linalg.norm(d - self._normal_part(G, d)) > 1e-8:
            q = self._closest_point(p, q, max_iter)
        if seed is not None:
            seed = np.asarray(seed, dtype=float)
            bound = np.linalg.norm(seed - p)
            if np.linalg.norm(q - p) > bound * (1 + 1e-6) + 10 * self.on_tol:
                if np.linalg.norm(seed - p) == 0.0:
                    return seed.copy()
                q = self._closest_point(p, seed.copy(), max_iter)
        return q

    def _closest_point(self, p, q, max_iter):
        """Newton on the Lagrange system for ``min |q - p|`` s.t. ``g(q) = 0``."""
        k, s = self.k, self.s
        _, G = self.value_and_jacobian(q)
        mu = np.linalg.lstsq(G.T, q - p, rcond=None)[0]
        for _ in range(max_iter):
            gq, G, H = self.derivatives(q)
            r1 = q - p - G.T @ mu
            if np.abs(gq).max() <= self.on_tol and np.linalg.norm(r1) <= 1e-12 * (1 + np.linalg.norm(p)):
                return q
            J = np.zeros((k + s, k + s))
            J[:k, :k] = np.eye(k) - np.tensordot(mu, H, axes=1)
            J[:k, k:] = -G.T
            J[k:, :k] = G
            delta = np.linalg.solve(J, -np.concatenate([r1, gq]))
            q = q + delta[:k]
            mu = mu + delta[k:]
            if not np.all(np.isfinite(q)):
                break
        raise NoConvergence("closest-point Newton did not converge")

    # -- sampling -------------------------------------------------------------

    def random_states(self, n, rng, u_scale=1.0, y_seed=None, x_box=None):
        """``n`` random states on TM: uniform x in the box, chart-solved y,
        Gaussian x-velocity completed to a tangent vector."""
        if x_box is None:
            x_box = self.box[:self.m]
        x_box = np.asarray(x_box, dtype=float)
        if not np.all(np.isfinite(x_box)):
            raise InputError("random_states needs a finite x box")
        if y_seed is None:
            yb = self.box[self.m:]
            finite = np.isfinite(yb).all(axis=1)
            y_seed = np.where(finite, np.where(finite[:, None], yb, 0.0).mean(axis=1), 0.0)
        states = []
        tries = 0
        while len(states) < n:
            tries += 1
            if tries > 20 * n + 100:
                raise NoConvergence("could not sample enough points on M")
            x = rng.uniform(x_box[:, 0], x_box[:, 1])
            try:
                xi = self.chart_point(x, y_seed)
                eta = self.tangent_velocity(xi, u_scale * rng.standard_normal(self.m))
            except (NoConvergence, SingularB):
                continue
            states.append(PhaseState(xi, eta))
        return states
