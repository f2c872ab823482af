"""Regret accounting, theoretical bounds and growth-rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateInput


@dataclass
class RegretSeries:
    """Per-round regret increments in both frameworks.

    ``db`` holds the win-probability increments, ``fo`` the cost gaps.
    """

    db: np.ndarray
    fo: np.ndarray
    l0: float
    L0: float

    @property
    def cum_db(self):
        return np.cumsum(self.db)

    @property
    def cum_fo(self):
        return np.cumsum(self.fo)

    @property
    def total_db(self):
        return float(self.db.sum())

    @property
    def total_fo(self):
        return float(self.fo.sum())


def db_regret(traj, inst):
    """(sigma(f(a_t) - f*) - 1/2) + (sigma(f(a'_t) - f*) - 1/2) per round."""
    link = inst.link
    return link.centered(inst.gap(traj.a)) + link.centered(inst.gap(traj.a_prime))


def fo_regret(traj, inst):
    """(f(a_t) - f*) + (f(a'_t) - f*) per round."""
    return inst.gap(traj.a) + inst.gap(traj.a_prime)


def regret_series(traj, inst):
    return RegretSeries(db_regret(traj, inst), fo_regret(traj, inst), inst.l0, inst.L0)


@dataclass
class SandwichResult:
    passed: bool
    n_violations: int
    min_ratio: float
    max_ratio: float


def sandwich_check(series, rtol=1e-12):
    """Check l0 * fo <= db <= L0 * fo round by round.

    Ratios db/fo are reported over rounds with a nonzero cost gap; rounds
    where both increments vanish satisfy the bounds trivially.
    """
    db, fo = np.asarray(series.db), np.asarray(series.fo)
    if db.shape != fo.shape:
        raise ValueError("series lengths differ")
    slack = rtol * np.abs(fo)
    low_ok = series.l0 * fo <= db + slack
    high_ok = db <= series.L0 * fo + slack
    bad = int(np.count_nonzero(~(low_ok & high_ok)))
    pos = fo > 0
    if np.any(pos):
        ratios = db[pos] / fo[pos]
        lo, hi = float(ratios.min()), float(ratios.max())
    else:
        lo = hi = float("nan")
    return SandwichResult(bad == 0, bad, lo, hi)


def online_to_batch_gap(traj, inst):
    """(f(a_bar) - f*, cumulative FO regret / 2T)."""
    series_fo = fo_regret(traj, inst)
    return float(inst.gap(traj.a_bar)), float(series_fo.sum() / (2 * traj.n_steps))


def theorem1_bound(inst, config, T):
    """4 d sqrt(C T log T) + 2 L L0 R."""
    if T < 2:
        raise ValueError("T must be at least 2")
    return 4.0 * inst.dim * math.sqrt(config.C * T * math.log(T)) + 2.0 * inst.L * inst.L0 * inst.R_diam


def theorem2_bound(inst, nu, C, T):
    """Bound on E[f(a_bar) - f*]: (2 d sqrt((nu log T + C)/T) + L L0 R / T) / l0."""
    if T < 2:
        raise ValueError("T must be at least 2")
    d = inst.dim
    return (2.0 * d * math.sqrt((nu * math.log(T) + C) / T) + inst.L * inst.L0 * inst.R_diam / T) / inst.l0


def lower_bound_line(d, T):
    """0.004 min(1, d / sqrt(2T)); drawn for reference only."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return 0.004 * min(1.0, d / math.sqrt(2.0 * T))


@dataclass
class GrowthFit:
    exponent: float
    intercept: float
    r2: float
    stderr: float
    ci_low: float
    ci_high: float


def fit_growth_exponent(points, confidence=0.95):
    """OLS of log value on log T; returns slope, intercept, r^2 and a t-interval."""
    pts = [(float(T), float(v)) for T, v in points]
    if len(pts) < 3:
        raise DegenerateInput("need at least 3 points")
    if any(v <= 0 or T <= 0 for T, v in pts):
        raise DegenerateInput("T and values must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0:
        raise DegenerateInput("all T values coincide")
    if np.ptp(y) == 0:
        return GrowthFit(0.0, float(y[0]), 1.0, 0.0, 0.0, 0.0)
    res = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + confidence / 2, len(pts) - 2)
    return GrowthFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2),
                     float(res.stderr), float(res.slope - q * res.stderr),
                     float(res.slope + q * res.stderr))


def hessian_Pb(inst, a, b):
    """Hessian of a -> sigma(f(a) - f(b)) at each row of ``a``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    z = inst.cost(a) - inst.cost(b)
    g = inst.cost.gradient(a)
    Q = inst.cost.Q
    return (inst.link.d1(z)[:, None, None] * Q
            + inst.link.d2(z)[:, None, None] * g[:, :, None] * g[:, None, :])


def local_radius(inst):
    """delta = l0 alpha / (4 max(L, L0)^3 L2); infinite for a linear link."""
    if inst.L2 == 0:
        return math.inf
    return inst.l0 * inst.alpha / (4.0 * max(inst.L, inst.L0) ** 3 * inst.L2)


@dataclass
class CurvatureReport:
    smooth_bound: float
    max_eig: float
    smooth_pass: bool
    convex_bound: float
    min_eig: float
    convex_pass: bool
    delta: float
    n_samples: int

    @property
    def passed(self):
        return self.smooth_pass and self.convex_pass


def _sample_local_region(inst, b, delta, rng):
    """One point per row of ``b`` from the delta-tube around [a_star, b], within the set."""
    geo = inst.geometry
    n, d = b.shape
    radius = min(delta, geo.diameter)
    out = np.empty_like(b)
    todo = np.arange(n)
    s = rng.random(n)
    seg = inst.a_star + s[:, None] * (b - inst.a_star)
    while todo.size:
        y = rng.standard_normal((todo.size, d))
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        y *= radius * rng.random((todo.size, 1)) ** (1.0 / d)
        cand = seg[todo] + y
        ok = np.array([geo.boundary_distance(p) >= 0 for p in cand], dtype=bool)
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return out


def lemma2_lemma3_validator(inst, n_samples, rng):
    """Check the global smoothness and the local strong convexity of P_b.

    Smoothness is tested at uniform pairs (a, b). Strong convexity is tested
    at uniform b with a drawn from the delta-tube around the segment from
    a_star to b.
    """
    geo = inst.geometry
    smooth_bound = inst.L0 * inst.beta + inst.B2 * inst.L ** 2
    convex_bound = 0.5 * inst.l0 * inst.alpha
    a = geo.sample_uniform(rng, n_samples)
    b = geo.sample_uniform(rng, n_samples)
    max_eig = float(np.linalg.eigvalsh(hessian_Pb(inst, a, b))[:, -1].max())

    delta = local_radius(inst)
    b2 = geo.sample_uniform(rng, n_samples)
    a2 = _sample_local_region(inst, b2, delta, rng)
    min_eig = float(np.linalg.eigvalsh(hessian_Pb(inst, a2, b2))[:, 0].min())
    tol = 1e-12
    return CurvatureReport(smooth_bound, max_eig, max_eig <= smooth_bound * (1 + tol),
                           convex_bound, min_eig, min_eig >= convex_bound * (1 - tol),
                           delta, int(n_samples))
