"""Simulated comparison environment.

A quadratic cost, a rotation-symmetric link function and a compact action
set together define the probability that one action beats another. This
module computes the constants the regret analysis needs and draws the
one-bit feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .barriers import Barrier
from .errors import AssumptionViolation, InvalidRange, WrongLink

LINK_KINDS = ("logistic", "gaussian_cdf_var2", "linear")

_SQRT2 = math.sqrt(2.0)
_GAUSS2_PDF0 = 1.0 / math.sqrt(4.0 * math.pi)


@dataclass(frozen=True)
class LinkFunction:
    """sigma with its first three derivatives in closed form.

    ``gaussian_cdf_var2`` is the CDF of N(0, 2), the law of the difference
    of two independent standard Gaussians.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {LINK_KINDS}")

    def sigma(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logistic":
            return special.expit(x)
        if self.kind == "gaussian_cdf_var2":
            return special.ndtr(x / _SQRT2)
        return 0.5 * (1.0 + x)

    def centered(self, x):
        """sigma(x) - 1/2, evaluated without cancellation near 0."""
        x = np.asarray(x, dtype=float)
        if self.kind == "logistic":
            return 0.5 * np.tanh(0.5 * x)
        if self.kind == "gaussian_cdf_var2":
            return 0.5 * special.erf(0.5 * x)
        return 0.5 * x

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logistic":
            return special.expit(x) * special.expit(-x)
        if self.kind == "gaussian_cdf_var2":
            return _GAUSS2_PDF0 * np.exp(-0.25 * x * x)
        return np.full_like(x, 0.5)

    def d2(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logistic":
            return -self.d1(x) * np.tanh(0.5 * x)
        if self.kind == "gaussian_cdf_var2":
            return -0.5 * x * self.d1(x)
        return np.zeros_like(x)

    def d3(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logistic":
            p = self.d1(x)
            return p * (1.0 - 6.0 * p)
        if self.kind == "gaussian_cdf_var2":
            return (0.25 * x * x - 0.5) * self.d1(x)
        return np.zeros_like(x)

    @property
    def d2_peak(self):
        """Location x > 0 of the global maximum of |sigma''|."""
        if self.kind == "logistic":
            return math.log(2.0 + math.sqrt(3.0))  # sigma' = 1/6 there
        if self.kind == "gaussian_cdf_var2":
            return _SQRT2
        return 0.0


def link_eval(link, x):
    return float(link.sigma(x)), float(link.d1(x)), float(link.d2(x))


def link_constants(link, B):
    """(l0, L0, B2, L2) on [-B, B].

    l0 = sigma'(B) and L0 = sigma'(0) follow from sigma' being even and
    non-increasing on [0, B]. |sigma''| increases up to its peak, so B2 is
    read at min(B, peak). |sigma'''| is largest at 0 for both curved links.
    """
    if B <= 0:
        raise ValueError("B must be positive")
    if link.kind == "linear":
        if B > 1:
            raise InvalidRange(f"linear link maps outside [0, 1] when B = {B} > 1")
        return 0.5, 0.5, 0.0, 0.0
    l0 = float(link.d1(B))
    L0 = float(link.d1(0.0))
    B2 = float(abs(link.d2(min(B, link.d2_peak))))
    L2 = float(abs(link.d3(0.0)))
    return l0, L0, B2, L2


@dataclass(frozen=True, eq=False)
class CostFunction:
    """f(a) = 1/2 (a - c)' Q (a - c) + offset."""

    Q: np.ndarray
    center: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric square matrix")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))

    @classmethod
    def isotropic(cls, center, scale=1.0, offset=0.0):
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls(scale * np.eye(center.size), center, offset)

    @property
    def alpha(self):
        return float(np.linalg.eigvalsh(self.Q)[0])

    @property
    def beta(self):
        return float(np.linalg.eigvalsh(self.Q)[-1])

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        diff = a - self.center
        return 0.5 * np.einsum("...i,ij,...j->...", diff, self.Q, diff) + self.offset

    def gradient(self, a):
        return (np.asarray(a, dtype=float) - self.center) @ self.Q

    def hessian(self, a=None):
        return self.Q


def _max_quadratic_on_ball(M, p, radius):
    """max over ||x|| <= radius of (x - p)' M (x - p) for PSD M.

    A convex function peaks on the sphere. Stationarity gives
    x = -(theta I - M)^-1 M p with theta >= lambda_max(M); the norm of x
    decreases in theta, so the root of ||x(theta)|| = radius is unique.
    """
    w, V = np.linalg.eigh(M)
    b = V.T @ (M @ p)
    top = w[-1]
    if top <= 0:
        return max(float(p @ M @ p), 0.0), -p
    lead = np.abs(w - top) <= 1e-12 * max(1.0, abs(top))

    def x_of(theta):
        return -b / (theta - w)

    candidates = []
    if np.linalg.norm(b[lead]) > 1e-14 * max(1.0, np.linalg.norm(b)):
        def gap(theta):
            return np.linalg.norm(x_of(theta)) - radius
        lo = top + 1e-15 * max(1.0, top)
        while gap(lo) < 0:
            lo = top + 0.5 * (lo - top)
            if lo - top < 1e-300:
                break
        hi = top + np.linalg.norm(b) / radius + 1.0
        while gap(hi) > 0:
            hi = top + 2.0 * (hi - top)
        theta = optimize.brentq(gap, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
        y = x_of(theta)
        candidates.append(y * (radius / np.linalg.norm(y)))
    else:
        # degenerate case: fill the remaining radius along the top eigenspace
        y = np.zeros_like(b)
        y[~lead] = -b[~lead] / (top - w[~lead])
        rest = radius ** 2 - y @ y
        if rest >= 0:
            k = np.flatnonzero(lead)[0]
            for sgn in (1.0, -1.0):
                z = y.copy()
                z[k] = sgn * math.sqrt(rest)
                candidates.append(z)
        else:
            candidates.append(y * (radius / np.linalg.norm(y)))
    best_val, best_x = -np.inf, None
    for y in candidates:
        x = V @ y
        val = float((x - p) @ M @ (x - p))
        if val > best_val:
            best_val, best_x = val, x
    return best_val, best_x


def max_quadratic_on_set(geometry, M, c):
    """max over the closed set of (a - c)' M (a - c), with the maximizer."""
    M = np.asarray(M, dtype=float)
    c = np.asarray(c, dtype=float)
    if geometry.kind == "ball":
        val, x = _max_quadratic_on_ball(M, c - geometry.center, geometry.radius)
        return val, geometry.center + x
    d = geometry.dim
    if d > 20:
        raise ValueError("vertex enumeration is limited to d <= 20")
    best_val, best_a = -np.inf, None
    for mask in range(1 << d):
        bits = np.array([(mask >> i) & 1 for i in range(d)], dtype=bool)
        a = np.where(bits, geometry.upper, geometry.lower)
        val = float((a - c) @ M @ (a - c))
        if val > best_val:
            best_val, best_a = val, a
    return best_val, best_a


def minimize_on_set(geometry, cost, tol=1e-12, max_iter=1_000_000):
    """Projected gradient descent with step 1/beta.

    Stops once the gradient-mapping residual ||a - P(a - grad/beta)|| is at
    most ``tol``.
    """
    step = 1.0 / cost.beta
    a = geometry.project(cost.center)
    for _ in range(max_iter):
        nxt = geometry.project(a - step * cost.gradient(a))
        if np.linalg.norm(nxt - a) <= tol:
            return nxt
        a = nxt
    raise AssumptionViolation("projected gradient descent did not reach the residual tolerance")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Action set, cost and link with every constant the analysis uses."""

    geometry: Barrier
    cost: CostFunction
    link: LinkFunction
    alpha: float
    beta: float
    L: float
    B: float
    R_diam: float
    l0: float
    L0: float
    B2: float
    L2: float
    a_star: np.ndarray
    f_star: float

    @property
    def dim(self):
        return self.geometry.dim

    def f(self, a):
        return self.cost(a)

    def gap(self, a):
        """f(a) - f_star, clipped at 0 against solver round-off."""
        return np.maximum(self.cost(a) - self.f_star, 0.0)

    def win_probability(self, a, b):
        """P(a beats b) = sigma(f(b) - f(a))."""
        p = self.link.sigma(self.cost(b) - self.cost(a))
        return np.clip(p, 0.0, 1.0)


def _check_link_shape(link, B, n_grid=2001):
    xs = np.linspace(0.0, B, n_grid)
    d1 = link.d1(xs)
    if np.any(d1 <= 0):
        raise AssumptionViolation("sigma' must be positive on [0, B]")
    if np.any(np.diff(d1) > 1e-15):
        raise AssumptionViolation("sigma' must be non-increasing on [0, B]")
    s = link.sigma(np.concatenate([-xs, xs]))
    if np.any(s < 0) or np.any(s > 1):
        raise AssumptionViolation("sigma must map [-B, B] into [0, 1]")


def build_instance(geometry, cost, link):
    """Derive every constant for (set, cost, link).

    ``link`` may be a :class:`LinkFunction` or its kind string.
    """
    if isinstance(link, str):
        link = LinkFunction(link)
    if cost.center.size != geometry.dim:
        raise ValueError("cost and action set dimensions differ")
    alpha, beta = cost.alpha, cost.beta
    if not 0 < alpha <= beta:
        raise ValueError("cost must be strongly convex (0 < alpha <= beta)")
    a_star = minimize_on_set(geometry, cost)
    f_star = float(cost(a_star))
    qmax, _ = max_quadratic_on_set(geometry, cost.Q, cost.center)
    B = 0.5 * qmax + cost.offset - f_star
    lip2, _ = max_quadratic_on_set(geometry, cost.Q @ cost.Q, cost.center)
    L = math.sqrt(lip2)
    l0, L0, B2, L2 = link_constants(link, B)
    _check_link_shape(link, B)
    return ProblemInstance(geometry, cost, link, alpha, beta, L, float(B), geometry.diameter,
                           l0, L0, B2, L2, a_star, f_star)


class ComparisonOracle:
    """Draws feedback bits for one trajectory from a private random stream."""

    def __init__(self, instance, rng):
        self.instance = instance
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.query_count = 0

    def compare(self, a, b, size=None):
        """1 with probability sigma(f(b) - f(a)), the event that ``a`` wins.

        Each bit consumes one uniform variate. ``size`` draws that many
        independent bits for the same pair.
        """
        p = float(self.instance.win_probability(a, b))
        if size is None:
            self.query_count += 1
            return int(self.rng.random() < p)
        self.query_count += int(size)
        return (self.rng.random(size) < p).astype(np.int8)


def compare(oracle, a, b, size=None):
    return oracle.compare(a, b, size)


def min_win_probability(inst, a):
    """P*(a) = sigma(f_star - f(a)); the infimum is attained at a_star."""
    return float(inst.link.sigma(inst.f_star - inst.cost(a)))


def noisy_value(inst, a, rng, size=None):
    """f(a) plus standard Gaussian noise, one independent draw per value."""
    if size is None:
        return float(inst.cost(a)) + float(rng.standard_normal())
    return float(inst.cost(a)) + rng.standard_normal(size)


def comparison_from_noisy(inst, a, b, rng, size=None):
    """Comparison bit built from two noisy evaluations.

    The bit is 1 when the noisy cost of ``a`` does not exceed that of ``b``
    (ties resolve to 1). The noise difference is N(0, 2), so under the
    ``gaussian_cdf_var2`` link the bit has the law of
    :meth:`ComparisonOracle.compare`.
    """
    if inst.link.kind != "gaussian_cdf_var2":
        raise WrongLink("the noisy-value reduction matches only the gaussian_cdf_var2 link")
    fa = noisy_value(inst, a, rng, size)
    fb = noisy_value(inst, b, rng, size)
    if size is None:
        return int(fa - fb <= 0.0)
    return (fa - fb <= 0.0).astype(np.int8)
