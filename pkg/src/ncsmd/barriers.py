"""Self-concordant barriers for the ball and the box.

The module also holds the time-varying regularized barrier used by the
mirror-descent loop, the symmetric Hessian square root used to place the
probe point, and a numerical self-concordance checker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryViolation, NotPositiveDefinite

# "strictly interior" means distance to the boundary above this fraction of the diameter
INTERIOR_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Barrier:
    """Log barrier of a Euclidean ball or an axis-aligned box.

    Build instances with :meth:`ball` or :meth:`box`. ``nu`` defaults to the
    exact self-concordance parameter of the barrier; it can be overridden,
    which is only useful for exercising the validator.
    """

    kind: str
    dim: int
    center: np.ndarray
    radius: float = np.nan
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    nu: float = np.nan

    @classmethod
    def ball(cls, center, radius=1.0, nu=None):
        center = np.asarray(center, dtype=float).reshape(-1)
        if radius <= 0:
            raise ValueError("radius must be positive")
        b = cls("ball", center.size, center, float(radius))
        return b if nu is None else b.with_nu(nu)

    @classmethod
    def box(cls, lower, upper, nu=None):
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or np.any(upper <= lower):
            raise ValueError("box needs lower < upper coordinatewise")
        b = cls("box", lower.size, 0.5 * (lower + upper), lower=lower, upper=upper)
        return b if nu is None else b.with_nu(nu)

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if np.isnan(self.nu):
            object.__setattr__(self, "nu", barrier_nu(self))
        object.__setattr__(self, "_eye", np.eye(self.dim))
        object.__setattr__(self, "_min_gap", INTERIOR_RTOL * self.diameter)

    def with_nu(self, nu):
        return Barrier(self.kind, self.dim, self.center, self.radius,
                       self.lower, self.upper, float(nu))

    # geometry

    @property
    def diameter(self):
        if self.kind == "ball":
            return 2.0 * self.radius
        return float(np.linalg.norm(self.upper - self.lower))

    def boundary_distance(self, a):
        """Euclidean distance from ``a`` to the boundary; negative outside."""
        a = np.asarray(a, dtype=float)
        if self.kind == "ball":
            off = a - self.center
            return self.radius - math.sqrt(off @ off)
        return float(min(np.min(a - self.lower), np.min(self.upper - a)))

    def is_interior(self, a):
        return self.boundary_distance(a) > self._min_gap

    def interior_mask(self, points):
        """Vectorized :meth:`is_interior` over the rows of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "ball":
            dist = self.radius - np.linalg.norm(pts - self.center, axis=1)
        else:
            dist = np.minimum((pts - self.lower).min(axis=1), (self.upper - pts).min(axis=1))
        return dist > self._min_gap

    def check_interior(self, a):
        if not self.is_interior(a):
            raise BoundaryViolation(
                f"point {np.asarray(a).tolist()} is not strictly inside the {self.kind}"
            )

    def minimizer(self):
        """argmin of the barrier; both sets are symmetric about their center."""
        return self.center.copy()

    def project(self, a):
        """Euclidean projection onto the closed set."""
        a = np.asarray(a, dtype=float)
        if self.kind == "ball":
            off = a - self.center
            n = np.linalg.norm(off)
            if n <= self.radius:
                return a.copy()
            return self.center + off * (self.radius / n)
        return np.clip(a, self.lower, self.upper)

    def sample_uniform(self, rng, n):
        """``n`` points uniform over the set."""
        d = self.dim
        if self.kind == "ball":
            x = rng.standard_normal((n, d))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            return self.center + self.radius * x * rng.random((n, 1)) ** (1.0 / d)
        return self.lower + (self.upper - self.lower) * rng.random((n, d))

    def sample_interior(self, rng, n):
        """Draw ``n`` interior points.

        Half are uniform over the set; the other half sit at log-uniform
        distances (1e-6 to 1 of the set scale) from the boundary so that
        near-boundary behaviour is exercised.
        """
        d = self.dim
        n_uni = (n + 1) // 2
        n_edge = n - n_uni
        if self.kind == "ball":
            dirs = rng.standard_normal((n, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            r_uni = self.radius * rng.random(n_uni) ** (1.0 / d)
            gap = self.radius * 10.0 ** rng.uniform(-6, 0, n_edge)
            r = np.concatenate([r_uni, self.radius - gap])
            pts = self.center + dirs * r[:, None]
        else:
            width = self.upper - self.lower
            pts = self.lower + width * rng.random((n, d))
            if n_edge:
                rows = np.arange(n_uni, n)
                cols = rng.integers(0, d, n_edge)
                gap = width[cols] * 10.0 ** rng.uniform(-6, -0.31, n_edge)
                side = rng.random(n_edge) < 0.5
                pts[rows, cols] = np.where(side, self.lower[cols] + gap, self.upper[cols] - gap)
        keep = np.array([self.is_interior(p) for p in pts], dtype=bool)
        return pts[keep]

    # barrier calculus

    def evaluate(self, a, with_value=True):
        """Return ``(value, gradient, hessian)`` at a strictly interior point.

        With ``with_value=False`` the value slot is None.
        """
        a = np.asarray(a, dtype=float)
        if self.kind == "ball":
            off = a - self.center
            nn = off @ off
            if self.radius - math.sqrt(nn) <= self._min_gap:
                self.check_interior(a)
            s = self.radius ** 2 - nn
            g = (2.0 / s) * off
            h = (2.0 / s) * self._eye + (4.0 / (s * s)) * np.multiply.outer(off, off)
            return (-math.log(s) if with_value else None), g, h
        lo = a - self.lower
        hi = self.upper - a
        if min(lo.min(), hi.min()) <= self._min_gap:
            self.check_interior(a)
        value = -float(np.sum(np.log(lo)) + np.sum(np.log(hi))) if with_value else None
        g = 1.0 / hi - 1.0 / lo
        h = np.diag(1.0 / lo ** 2 + 1.0 / hi ** 2)
        return value, g, h

    def value(self, a):
        return self.evaluate(a)[0]

    def gradient(self, a):
        return self.evaluate(a)[1]

    def hessian(self, a):
        return self.evaluate(a)[2]

    def bregman(self, x, y):
        """D(x, y) = R(x) - R(y) - grad R(y).(x - y), summed in a cancellation-free form."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.check_interior(x)
        self.check_interior(y)
        if self.kind == "ball":
            dy = y - self.center
            diff = x - y
            s_y = self.radius ** 2 - dy @ dy
            rho = -(2.0 * (dy @ diff) + diff @ diff) / s_y
            return max(rho - np.log1p(rho), 0.0) + (diff @ diff) / s_y
        total = 0.0
        for num, den in ((x - self.lower, y - self.lower), (self.upper - x, self.upper - y)):
            r = num / den - 1.0
            total += float(np.sum(np.maximum(r - np.log1p(r), 0.0)))
        return total


def barrier_nu(b):
    """Self-concordance parameter: 1 for the ball, 2d for the box."""
    if b.kind == "ball":
        return 1.0
    return 2.0 * b.dim


def eval_barrier(b, a):
    return b.evaluate(a)


@dataclass(eq=False)
class RegularizedBarrierState:
    """The barrier plus the quadratic terms accumulated over past actions.

    Represents ``R(a) + (lambda_eta/2) sum_i ||a - a_i||^2 + mu ||a||^2`` using
    only the running sum of actions and of their squared norms.
    """

    base: Barrier
    lambda_eta: float
    mu: float
    t: int = 0
    action_sum: np.ndarray = field(default=None)
    action_sq_sum: float = 0.0

    def __post_init__(self):
        if self.lambda_eta < 0 or self.mu < 0:
            raise ValueError("lambda_eta and mu must be nonnegative")
        if self.action_sum is None:
            self.action_sum = np.zeros(self.base.dim)

    @property
    def dim(self):
        return self.base.dim

    @property
    def curvature(self):
        """Coefficient of the identity added to the barrier Hessian."""
        return self.lambda_eta * self.t + 2.0 * self.mu

    def push_action(self, a):
        a = np.asarray(a, dtype=float)
        self.t += 1
        self.action_sum = self.action_sum + a
        self.action_sq_sum += float(a @ a)
        return self

    def copy(self):
        return RegularizedBarrierState(self.base, self.lambda_eta, self.mu, self.t,
                                       self.action_sum.copy(), self.action_sq_sum)

    def is_interior(self, a):
        return self.base.is_interior(a)

    def evaluate(self, a, with_value=True):
        a = np.asarray(a, dtype=float)
        value, g, h = self.base.evaluate(a, with_value)
        le, t = self.lambda_eta, self.t
        k = self.curvature
        if with_value:
            aa = a @ a
            value += 0.5 * le * (t * aa - 2.0 * (a @ self.action_sum) + self.action_sq_sum)
            value += self.mu * aa
        g = g + k * a - le * self.action_sum
        h = h + k * self.base._eye
        return value, g, h

    def gradient(self, a):
        return self.evaluate(a, False)[1]

    def bregman(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        diff = x - y
        return self.base.bregman(x, y) + 0.5 * self.curvature * float(diff @ diff)


def regularized_eval(st, a):
    return st.evaluate(a)


def push_action(st, a):
    return st.push_action(a)


@dataclass(frozen=True, eq=False)
class HessianFactor:
    """Symmetric square root ``S`` of an SPD matrix and its inverse."""

    dim: int
    S: np.ndarray
    S_inv: np.ndarray

    @property
    def hessian(self):
        return self.S @ self.S


def hessian_factor(hess):
    """Symmetric positive-definite square root via eigendecomposition."""
    hess = np.asarray(hess, dtype=float)
    w, v = np.linalg.eigh(0.5 * (hess + hess.T))
    if w[0] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
    root = np.sqrt(w)
    S = (v * root) @ v.T
    S_inv = (v / root) @ v.T
    return HessianFactor(hess.shape[0], S, S_inv)


def dikin_probe(factor, u):
    """Offset ``S^-1 u``: unit length in the local norm of the factored Hessian."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValueError("u must be a unit vector")
    return factor.S_inv @ u


@dataclass
class SelfConcordanceReport:
    max_ratio_cond2: float
    max_ratio_cond3: float
    passed: bool
    n_points: int

    @property
    def pass_(self):
        return self.passed


def verify_self_concordance(fn, n_samples, rng_seed=0, check_nu=None,
                            fd_tol=1e-4, nu_tol=1e-10, n_directions=4):
    """Sample interior points and directions and test the two concordance bounds.

    ``fn`` is a :class:`Barrier` or a :class:`RegularizedBarrierState`. The
    third directional derivative is taken by central differences of
    ``h' H(x + s h) h`` with a step of 1e-4 in the local norm. The gradient
    bound is checked in closed form, including its worst direction
    ``H^-1 grad``. For regularized states the gradient bound is skipped by
    default, since those are not nu-self-concordant.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    base = fn.base if isinstance(fn, RegularizedBarrierState) else fn
    if check_nu is None:
        check_nu = isinstance(fn, Barrier)
    nu = base.nu
    rng = np.random.default_rng(rng_seed)

    pts = base.sample_interior(rng, n_samples)
    while len(pts) < n_samples:
        pts = np.vstack([pts, base.sample_interior(rng, n_samples - len(pts))])

    worst2 = 0.0
    worst3 = 0.0 if check_nu else np.nan
    d = base.dim
    for x in pts[:n_samples]:
        _, g, h = fn.evaluate(x)
        dirs = rng.standard_normal((n_directions, d))
        dirs = np.vstack([dirs, np.linalg.solve(h, g)[None, :]])
        for hv in dirs:
            nrm = np.linalg.norm(hv)
            if nrm < 1e-300:
                continue
            hv = hv / nrm
            q0 = hv @ h @ hv
            local = np.sqrt(q0)
            step = 1e-4 / local
            try:
                qp = hv @ fn.evaluate(x + step * hv)[2] @ hv
                qm = hv @ fn.evaluate(x - step * hv)[2] @ hv
            except BoundaryViolation:
                continue
            third = (qp - qm) / (2.0 * step)
            worst2 = max(worst2, abs(third) / (2.0 * q0 ** 1.5))
            if check_nu:
                worst3 = max(worst3, abs(g @ hv) / (np.sqrt(nu) * local))

    passed = worst2 <= 1.0 + fd_tol
    if check_nu:
        passed = passed and worst3 <= 1.0 + nu_tol
    return SelfConcordanceReport(float(worst2), float(worst3), bool(passed), int(n_samples))
