import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncsmd import solver
from ncsmd.barriers import Barrier, RegularizedBarrierState, hessian_factor
from ncsmd.errors import BoundaryViolation, EmptyTrajectory, NoConvergence
from ncsmd.solver import (
    PreconditionWarning,
    SolverConfig,
    Trajectory,
    averaged_action,
    derive_hyperparams,
    estimate_smoothed_gradient_mc,
    invert_mirror_map,
    ncsmd_step,
    run,
    run_uniform_baseline,
)


class TestDeriveHyperparams:
    def test_linear_canonical(self, inst_linear):
        cfg = derive_hyperparams(inst_linear, 1.0, 10_000)
        assert cfg.lam == 0.25
        assert cfg.mu == 0.0
        assert cfg.C == pytest.approx(3.3, rel=1e-12)
        assert cfg.eta == pytest.approx(0.25 * math.sqrt(3.3 * math.log(1e4) / 1e4), rel=1e-12)
        assert cfg.eta == pytest.approx(0.01378, abs=5e-6)
        assert cfg.precondition_ok

    def test_logistic_canonical(self, inst):
        cfg = derive_hyperparams(inst, 1.0, 1024)
        assert cfg.lam == pytest.approx(0.5 * inst.l0)
        assert cfg.mu == pytest.approx((0.25 ** 3 * 0.125 / cfg.lam) ** 2)
        assert cfg.eta <= 1 / 4

    def test_eta_decreases_with_T(self, inst):
        etas = [derive_hyperparams(inst, 1.0, 2 ** k).eta for k in range(7, 18)]
        assert all(b < a for a, b in zip(etas, etas[1:]))

    def test_doubling_ratio(self, inst):
        T = 5000
        e1 = derive_hyperparams(inst, 1.0, T).eta
        e2 = derive_hyperparams(inst, 1.0, 2 * T).eta
        assert e2 / e1 == pytest.approx(math.sqrt(math.log(2 * T) / (2 * math.log(T))), rel=1e-12)

    def test_short_horizon_warns(self, inst):
        with pytest.warns(PreconditionWarning):
            cfg = derive_hyperparams(inst, 1.0, 10)
        assert not cfg.precondition_ok

    def test_override_clears_precondition(self, inst):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PreconditionWarning)
            cfg = derive_hyperparams(inst, 1.0, 10_000, overrides={"lam": 10 * inst.l0})
        assert not cfg.precondition_ok

    def test_rejects_unknown_override(self, inst):
        with pytest.raises(ValueError):
            derive_hyperparams(inst, 1.0, 100, overrides={"gamma": 1})

    def test_rejects_tiny_T(self, inst):
        with pytest.raises(ValueError):
            derive_hyperparams(inst, 1.0, 1)


class TestInvertMirrorMap:
    def test_identity(self):
        st_ = RegularizedBarrierState(Barrier.ball([0, 0]), 0.1, 0.01, 2, np.array([0.1, 0.2]), 0.05)
        a0 = np.array([0.3, -0.1])
        a, iters, res = invert_mirror_map(st_, st_.gradient(a0), a0)
        assert iters <= 1
        np.testing.assert_allclose(a, a0, atol=1e-12)

    def test_ball_closed_form(self):
        st_ = RegularizedBarrierState(Barrier.ball([0, 0]), 0.0, 0.0)
        a, _, res = invert_mirror_map(st_, [4 / 3, 0.0], [0.0, 0.0])
        np.testing.assert_allclose(a, [0.5, 0.0], atol=1e-9)
        assert res <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_box_round_trip(self, seed):
        r = np.random.default_rng(seed)
        box = Barrier.box(-np.ones(3), np.ones(3))
        st_ = RegularizedBarrierState(box, 0.05, 0.01)
        for p in box.sample_uniform(r, 5):
            st_.push_action(p)
        theta = r.normal(scale=5.0, size=3)
        a, _, res = invert_mirror_map(st_, theta, np.zeros(3))
        assert res <= 1e-9 * max(1.0, np.linalg.norm(theta))
        assert box.is_interior(a)
        np.testing.assert_allclose(st_.gradient(a), theta, atol=1e-9 * max(1.0, np.linalg.norm(theta)))

    def test_no_convergence(self):
        st_ = RegularizedBarrierState(Barrier.ball([0, 0]), 0.0, 0.0)
        with pytest.raises(NoConvergence):
            invert_mirror_map(st_, [1e6, 0.0], [0.0, 0.0], max_iter=3)

    def test_start_outside(self):
        st_ = RegularizedBarrierState(Barrier.ball([0, 0]), 0.0, 0.0)
        with pytest.raises(BoundaryViolation):
            invert_mirror_map(st_, [0.0, 0.0], [1.0, 0.0])


class ZeroOracle:
    query_count = 0

    def compare(self, a, b, size=None):
        return 0


class OneOracle(ZeroOracle):
    def compare(self, a, b, size=None):
        return 1


class TestStep:
    def _setup(self, inst):
        cfg = derive_hyperparams(inst, 1.0, 1024)
        st_ = RegularizedBarrierState(inst.geometry, cfg.lambda_eta, cfg.mu)
        a = np.array([0.2, -0.1])
        st_.push_action(a)
        return cfg, st_, a

    def test_zero_feedback_keeps_point(self, inst):
        cfg, st_, a = self._setup(inst)
        a_next, rec = ncsmd_step(inst, ZeroOracle(), st_, a, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(a_next, a)
        assert rec.feedback == 0
        assert rec.ghat_norm == 0.0
        assert rec.dual_bregman == 0.0

    def test_estimate_local_norm_is_d(self, inst):
        cfg, st_, a = self._setup(inst)
        a_next, rec = ncsmd_step(inst, OneOracle(), st_, a, cfg, np.random.default_rng(1))
        h = st_.evaluate(a)[2]
        f = hessian_factor(h)
        # ghat = d S u, so ghat' H^-1 ghat = d^2
        g = inst.dim * f.S @ rec.u_t
        assert math.sqrt(g @ np.linalg.solve(h, g)) == pytest.approx(inst.dim, rel=1e-12)
        assert rec.ghat_norm == pytest.approx(np.linalg.norm(g), rel=1e-12)
        # probe is on the unit Dikin sphere
        off = rec.a_t_prime - a
        assert off @ h @ off == pytest.approx(1.0, rel=1e-10)
        # the new point solves the mirror step
        theta = st_.gradient(a) - cfg.eta * g
        np.testing.assert_allclose(st_.gradient(a_next), theta, atol=1e-9)
        assert rec.dual_bregman <= 4 * inst.dim ** 2 * cfg.eta ** 2

    def test_feedback_is_current_point_winning(self, inst):
        """The bit is 1 when a_t beats the probe: P = sigma(f(probe) - f(a_t))."""
        calls = []

        class Spy(ZeroOracle):
            def compare(self, a, b, size=None):
                calls.append((np.array(a), np.array(b)))
                return 0

        cfg, st_, a = self._setup(inst)
        _, rec = ncsmd_step(inst, Spy(), st_, a, cfg, np.random.default_rng(2))
        np.testing.assert_array_equal(calls[0][0], a)
        np.testing.assert_array_equal(calls[0][1], rec.a_t_prime)


class TestRun:
    def test_start_at_center(self, inst):
        traj = run(inst, derive_hyperparams(inst, 1.0, 64))
        np.testing.assert_array_equal(traj.a_1, [0.0, 0.0])
        np.testing.assert_array_equal(traj.a[0], [0.0, 0.0])

    def test_empty_horizon(self, inst):
        cfg = derive_hyperparams(inst, 1.0, 64)
        cfg.T = 0
        traj = run(inst, cfg)
        assert len(traj) == 0
        np.testing.assert_array_equal(traj.a_final, traj.a_1)
        with pytest.raises(EmptyTrajectory):
            averaged_action(traj)

    def test_deterministic(self, inst):
        cfg = derive_hyperparams(inst, 1.0, 10_000, seed=7)
        t1, t2 = run(inst, cfg), run(inst, cfg)
        for name in ("a", "a_prime", "u", "feedback", "ghat_norm", "dual_bregman",
                     "newton_iters", "newton_residual"):
            np.testing.assert_array_equal(getattr(t1, name), getattr(t2, name))
        np.testing.assert_array_equal(t1.a_final, t2.a_final)

    def test_seeds_differ(self, inst):
        t1 = run(inst, derive_hyperparams(inst, 1.0, 200, seed=0))
        t2 = run(inst, derive_hyperparams(inst, 1.0, 200, seed=1))
        assert not np.array_equal(t1.a, t2.a)

    def test_trajectory_invariants(self, inst):
        cfg = derive_hyperparams(inst, 1.0, 3000, seed=3)
        traj = run(inst, cfg)
        assert traj.complete and len(traj) == 3000
        geo = inst.geometry
        assert geo.interior_mask(traj.a).all() and geo.interior_mask(traj.a_prime).all()
        assert np.all(traj.dual_bregman <= 4 * inst.dim ** 2 * cfg.eta ** 2)
        assert set(np.unique(traj.feedback)) <= {0, 1}
        np.testing.assert_allclose(traj.ghat_norm[traj.feedback == 0], 0.0)
        assert np.all(traj.newton_residual <= 1e-9 * np.maximum(1.0, traj.theta_norm))
        # the next point follows the previous one only after a win
        moved = np.any(traj.a[1:] != traj.a[:-1], axis=1)
        np.testing.assert_array_equal(moved, traj.feedback[:-1] == 1)
        step = traj.step(5)
        assert step.t == 6
        np.testing.assert_array_equal(step.a_t, traj.a[5])

    def test_failure_keeps_partial_trajectory(self, inst, monkeypatch):
        calls = {"n": 0}
        real = solver.invert_mirror_map

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NoConvergence("forced")
            return real(*args, **kwargs)

        monkeypatch.setattr(solver, "invert_mirror_map", flaky)
        traj = run(inst, derive_hyperparams(inst, 1.0, 200))
        assert not traj.complete
        assert "NoConvergence" in traj.failure
        assert 0 < len(traj) < 200
        assert traj.a.shape == (len(traj), 2)


class TestAveragedAction:
    def _traj(self, inst, a, a_prime):
        cfg = SolverConfig(len(a), 0.1, 0.1, 0.0, 1.0, 1.0)
        traj = Trajectory(inst, cfg, [0.0, 0.0])
        traj.a[:] = a
        traj.a_prime[:] = a_prime
        traj.n_steps = len(a)
        return traj

    def test_constant(self, inst):
        p = [0.1, -0.2]
        np.testing.assert_allclose(averaged_action(self._traj(inst, [p] * 3, [p] * 3)), p)

    def test_arithmetic(self, inst):
        traj = self._traj(inst, [[0.0, 0.0], [0.4, 0.0]], [[0.2, 0.0], [0.6, 0.0]])
        np.testing.assert_allclose(averaged_action(traj), [0.3, 0.0])

    def test_inside_ball(self, inst):
        traj = run(inst, derive_hyperparams(inst, 1.0, 500, seed=4))
        norms = np.linalg.norm(np.vstack([traj.a, traj.a_prime]), axis=1)
        assert np.linalg.norm(traj.a_bar) <= norms.max() < 1


class TestBaseline:
    def test_uniform_pairs(self, inst):
        traj = run_uniform_baseline(inst, 1000, seed=0)
        assert len(traj) == 1000
        assert inst.geometry.interior_mask(traj.a).all()
        assert abs(traj.a.mean(axis=0)).max() < 0.1


class TestSmoothedGradient:
    def _state(self, inst, T=1024):
        cfg = derive_hyperparams(inst, 1.0, T)
        st_ = RegularizedBarrierState(inst.geometry, cfg.lambda_eta, cfg.mu)
        a = np.array([0.1, 0.0])
        st_.push_action(a)
        return st_, a

    def test_unbiased_logistic(self, inst):
        st_, a = self._state(inst)
        est = estimate_smoothed_gradient_mc(inst, st_, a, 1_000_000, np.random.default_rng(0))
        se = np.sqrt(est.ghat_se ** 2 + est.smoothed_se ** 2)
        assert np.all(np.abs(est.ghat_mean - est.smoothed_grad) < 4 * se)
        assert est.closed_form is None

    def test_closed_form_linear(self, inst_linear):
        st_, a = self._state(inst_linear)
        est = estimate_smoothed_gradient_mc(inst_linear, st_, a, 1_000_000, np.random.default_rng(1))
        np.testing.assert_allclose(est.closed_form, 0.5 * (a - [0.3, 0.0]))
        assert np.all(np.abs(est.ghat_mean - est.closed_form) < 4 * est.ghat_se)
        assert np.all(np.abs(est.smoothed_grad - est.closed_form) < 4 * est.smoothed_se)

    def test_single_sample(self, inst):
        st_, a = self._state(inst)
        est = estimate_smoothed_gradient_mc(inst, st_, a, 1, np.random.default_rng(2))
        f = hessian_factor(st_.evaluate(a)[2])
        norm = np.linalg.norm(est.ghat_mean)
        assert norm == 0.0 or 0 < norm <= inst.dim * np.linalg.norm(f.S, 2) * (1 + 1e-12)
