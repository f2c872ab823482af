"""Noisy comparison-based stochastic mirror descent (NC-SMD).

Each round probes a random point on the Dikin ellipsoid of the regularized
barrier, asks the oracle which of the pair wins, turns the bit into a
gradient estimate and takes a mirror step. The mirror map is inverted by
damped Newton.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .barriers import RegularizedBarrierState, hessian_factor
from .errors import BoundaryViolation, EmptyTrajectory, NCSMDError, NoConvergence
from .oracle import ComparisonOracle

NEWTON_MAX_ITER = 200


class PreconditionWarning(UserWarning):
    """T < C log T, so the regret guarantee does not cover this horizon."""


@dataclass
class SolverConfig:
    T: int
    eta: float
    lam: float
    mu: float
    C: float
    nu: float
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    @property
    def precondition_ok(self):
        """T >= C log T and no hyperparameter was overridden."""
        return self.T >= 2 and self.T >= self.C * math.log(self.T) and not self.overrides

    @property
    def lambda_eta(self):
        return self.lam * self.eta


def derive_hyperparams(inst, nu, T, seed=0, overrides=None):
    """Largest lambda, smallest mu and the matching eta for horizon ``T``.

    ``overrides`` may replace any of ``eta``, ``lam`` or ``mu``; C is always
    computed from the (possibly overridden) lambda.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"eta", "lam", "mu"}
    if unknown:
        raise ValueError(f"unknown overrides {sorted(unknown)}")
    d = inst.dim
    lam = overrides.get("lam", 0.5 * inst.l0 * inst.alpha)
    mu = overrides.get("mu", (inst.L0 ** 3 * inst.L2 / lam) ** 2)
    C = nu + (inst.B2 * inst.L ** 2 + (inst.L + 1.0) * inst.L0 * inst.beta) / (2.0 * lam)
    eta = overrides.get("eta", math.sqrt(C * math.log(T) / T) / (2.0 * d))
    cfg = SolverConfig(int(T), float(eta), float(lam), float(mu), float(C), float(nu),
                       int(seed), overrides)
    if T < C * math.log(T):
        warnings.warn(f"T={T} < C log T={C * math.log(T):.1f}", PreconditionWarning, stacklevel=2)
    elif not overrides:
        assert eta <= 1.0 / (2 * d) + 1e-15
    return cfg


@dataclass
class StepRecord:
    t: int
    a_t: np.ndarray
    a_t_prime: np.ndarray
    u_t: np.ndarray
    feedback: int
    ghat_norm: float
    dual_bregman: float
    newton_iters: int
    newton_residual: float
    theta_norm: float = 0.0


def invert_mirror_map(st, theta, a_init, tol=None, max_iter=NEWTON_MAX_ITER, init_derivs=None):
    """Find ``a`` with grad R_t(a) = theta.

    Damped Newton on R_t(a) - theta'a: step length 1/(1 + lambda) while the
    Newton decrement lambda is at least 1/4, full steps after. The default
    tolerance is 1e-9 in absolute terms, relaxed to 1e-12 |theta| for very
    large theta. Returns ``(a, iterations, residual)`` where residual is
    ||grad R_t(a) - theta||.
    ``init_derivs`` may carry the already known (gradient, Hessian) at ``a_init``.
    """
    theta = np.asarray(theta, dtype=float)
    a = np.array(a_init, dtype=float)
    if not st.is_interior(a):
        raise BoundaryViolation("Newton start must be strictly interior")
    if tol is None:
        # absolute 1e-9 while round-off allows it; never looser than 1e-9 max(1, |theta|)
        tol = max(1e-9, 1e-12 * float(np.linalg.norm(theta)))
    for it in range(max_iter + 1):
        if it == 0 and init_derivs is not None:
            g, h = init_derivs
        else:
            _, g, h = st.evaluate(a, False)
        r = g - theta
        res = math.sqrt(r @ r)
        if res <= tol:
            return a, it, res
        if it == max_iter:
            break
        delta = -np.linalg.solve(h, r)
        dec = math.sqrt(max(-(r @ delta), 0.0))
        a = a + (delta if dec < 0.25 else delta / (1.0 + dec))
    raise NoConvergence(f"mirror-map inversion stalled at residual {res:.3e} after {max_iter} iterations")


def sample_unit_sphere(rng, d):
    while True:
        u = rng.standard_normal(d)
        n = math.sqrt(float(u @ u))
        if n > 1e-12:
            return u / n


def ncsmd_step(inst, oracle, st, a_t, config, rng, t=None):
    """One round; ``st`` must already contain a_t.

    The bit is 1 when a_t beats the probe, which happens with probability
    P_t(a'_t) = sigma(f(a'_t) - f(a_t)); this is what makes the estimate
    unbiased for the gradient of the smoothed P_t.
    """
    d = inst.dim
    _, grad_t, hess_t = st.evaluate(a_t, False)
    factor = hessian_factor(hess_t)
    u = sample_unit_sphere(rng, d)
    probe = a_t + factor.S_inv @ u
    if not st.is_interior(probe):
        raise BoundaryViolation("probe left the Dikin ellipsoid interior")
    bit = oracle.compare(a_t, probe)
    if bit:
        ghat = d * (factor.S @ u)
        theta = grad_t - config.eta * ghat
        a_next, iters, res = invert_mirror_map(st, theta, a_t, init_derivs=(grad_t, hess_t))
        div = st.bregman(a_t, a_next)
        gnorm = math.sqrt(ghat @ ghat)
    else:
        theta = grad_t
        a_next, iters, res, div, gnorm = a_t.copy(), 0, 0.0, 0.0, 0.0
    rec = StepRecord(st.t if t is None else t, np.array(a_t), probe, u, bit,
                     gnorm, float(div), iters, res, math.sqrt(theta @ theta))
    return a_next, rec


class Trajectory:
    """Columnar record of a run: row ``i`` holds round ``t = i + 1``."""

    def __init__(self, instance, config, a_1):
        T, d = config.T, instance.dim
        self.instance = instance
        self.config = config
        self.a_1 = np.array(a_1, dtype=float)
        self.a = np.zeros((T, d))
        self.a_prime = np.zeros((T, d))
        self.u = np.zeros((T, d))
        self.feedback = np.zeros(T, dtype=np.int8)
        self.ghat_norm = np.zeros(T)
        self.dual_bregman = np.zeros(T)
        self.newton_iters = np.zeros(T, dtype=np.int32)
        self.newton_residual = np.zeros(T)
        self.theta_norm = np.zeros(T)
        self.n_steps = 0
        self.a_final = self.a_1.copy()
        self.failure = None

    def record(self, rec):
        i = self.n_steps
        self.a[i] = rec.a_t
        self.a_prime[i] = rec.a_t_prime
        self.u[i] = rec.u_t
        self.feedback[i] = rec.feedback
        self.ghat_norm[i] = rec.ghat_norm
        self.dual_bregman[i] = rec.dual_bregman
        self.newton_iters[i] = rec.newton_iters
        self.newton_residual[i] = rec.newton_residual
        self.theta_norm[i] = rec.theta_norm
        self.n_steps += 1

    def truncate(self):
        n = self.n_steps
        for name in ("a", "a_prime", "u", "feedback", "ghat_norm", "dual_bregman",
                     "newton_iters", "newton_residual", "theta_norm"):
            setattr(self, name, getattr(self, name)[:n])

    @property
    def T(self):
        return self.n_steps

    @property
    def complete(self):
        return self.failure is None

    @property
    def steps(self):
        return [self.step(i) for i in range(self.n_steps)]

    def step(self, i):
        return StepRecord(i + 1, self.a[i], self.a_prime[i], self.u[i], int(self.feedback[i]),
                          float(self.ghat_norm[i]), float(self.dual_bregman[i]),
                          int(self.newton_iters[i]), float(self.newton_residual[i]),
                          float(self.theta_norm[i]))

    @property
    def a_bar(self):
        return averaged_action(self)

    def __len__(self):
        return self.n_steps


def _streams(seed):
    dirs, coins = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(dirs), np.random.default_rng(coins)


def run(inst, config):
    """Run NC-SMD for ``config.T`` rounds from the barrier minimizer.

    Solver errors stop the run; the partial trajectory is returned with
    ``failure`` set to the error message.
    """
    geometry = inst.geometry
    a = geometry.minimizer()
    traj = Trajectory(inst, config, a)
    dir_rng, coin_rng = _streams(config.seed)
    oracle = ComparisonOracle(inst, coin_rng)
    st = RegularizedBarrierState(geometry, config.lambda_eta, config.mu)
    for t in range(1, config.T + 1):
        st.push_action(a)
        try:
            a_next, rec = ncsmd_step(inst, oracle, st, a, config, dir_rng, t)
        except NCSMDError as exc:
            traj.failure = f"step {t}: {type(exc).__name__}: {exc}"
            break
        traj.record(rec)
        a = a_next
    traj.truncate()
    traj.a_final = np.array(a)
    return traj


def averaged_action(traj):
    """Mean of all 2T queried points."""
    if traj.n_steps == 0:
        raise EmptyTrajectory("no steps recorded")
    return 0.5 * (traj.a.mean(axis=0) + traj.a_prime.mean(axis=0))


def run_uniform_baseline(inst, T, seed=0):
    """Both actions drawn uniformly from the set every round; feedback is ignored."""
    geometry = inst.geometry
    cfg = SolverConfig(int(T), 0.0, 0.0, 0.0, 0.0, geometry.nu, int(seed),
                       {"baseline": "uniform_random_pair"})
    rng = np.random.default_rng(seed)
    traj = Trajectory(inst, cfg, geometry.minimizer())
    traj.a[:] = geometry.sample_uniform(rng, T)
    traj.a_prime[:] = geometry.sample_uniform(rng, T)
    traj.n_steps = T
    if T:
        traj.a_final = traj.a[-1].copy()
    return traj


@dataclass
class SmoothedGradientEstimate:
    """Two independent Monte Carlo views of the smoothed-P_t gradient."""

    ghat_mean: np.ndarray
    ghat_se: np.ndarray
    smoothed_grad: np.ndarray
    smoothed_se: np.ndarray
    closed_form: np.ndarray | None
    n: int


def _uniform_ball(rng, n, d):
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * rng.random((n, 1)) ** (1.0 / d)


def estimate_smoothed_gradient_mc(inst, st, a_t, n, rng, fd_step=None, chunk=250_000):
    """Compare the mean of ``n`` gradient estimates with a direct estimate.

    The direct estimate differentiates the ball-smoothed P_t by central
    differences, using common ball samples on both sides. It never touches
    the Bernoulli bits or the sphere. For the linear link the exact
    value is sigma' * grad f(a_t), because the ball average of grad f is
    grad f at the center.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a_t = np.asarray(a_t, dtype=float)
    d = inst.dim
    factor = hessian_factor(st.evaluate(a_t)[2])
    f_t = float(inst.cost(a_t))
    h = fd_step if fd_step is not None else 1e-3 * float(np.linalg.norm(factor.S_inv, 2))

    g_sum = np.zeros(d)
    g_sq = np.zeros(d)
    p_sum = np.zeros(d)
    p_sq = np.zeros(d)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        u = rng.standard_normal((m, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        probes = a_t + u @ factor.S_inv
        p_win = np.clip(inst.link.sigma(inst.cost(probes) - f_t), 0.0, 1.0)
        bits = (rng.random(m) < p_win).astype(float)
        g = d * bits[:, None] * (u @ factor.S)
        g_sum += g.sum(axis=0)
        g_sq += (g * g).sum(axis=0)

        pts = a_t + _uniform_ball(rng, m, d) @ factor.S_inv
        cols = np.empty((m, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            up = inst.link.sigma(inst.cost(pts + e) - f_t)
            dn = inst.link.sigma(inst.cost(pts - e) - f_t)
            cols[:, i] = (up - dn) / (2.0 * h)
        p_sum += cols.sum(axis=0)
        p_sq += (cols * cols).sum(axis=0)
        done += m

    def mean_se(s, sq):
        mean = s / n
        if n == 1:
            return mean, np.full(d, np.inf)
        var = np.maximum(sq / n - mean ** 2, 0.0) * n / (n - 1)
        return mean, np.sqrt(var / n)

    g_mean, g_se = mean_se(g_sum, g_sq)
    p_mean, p_se = mean_se(p_sum, p_sq)
    closed = None
    if inst.link.kind == "linear":
        closed = 0.5 * inst.cost.gradient(a_t)
    return SmoothedGradientEstimate(g_mean, g_se, p_mean, p_se, closed, n)
