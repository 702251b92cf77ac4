import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedbandit import config, schedules
from fedbandit.bandit_env import BanditEnvironment, EnvironmentSpec
from fedbandit.errors import ConfigError, NotPositiveDefinite
from fedbandit.privacy import NoiseTree
from fedbandit.protocol import (AttackSpec, ControllerLedger, EpisodeMessage, ModelBroadcast,
                                _streams, accumulate, apply_attack, controller_sync,
                                make_broadcast, run_experiment, select_action, select_batch,
                                validate_batch, validate_message)
from fedbandit.robust_agg import geometric_median_matrices


def bc(theta, Lam, beta):
    return ModelBroadcast(np.asarray(theta, float), np.asarray(Lam, float), beta, 1)


def cfg(**over):
    doc = {"seed": 3, "oracle": "mean",
           "environment": {"d": 2, "N": 4, "T": 64},
           "attack": {"alpha": 0.0},
           "schedule": {"variant": "T1-robust", "L": 8}}
    for k, v in over.items():
        sec, _, key = k.partition("__")
        if key:
            doc[sec][key] = v
        else:
            doc[sec] = v
    return config.from_dict(doc)


E = np.eye(2)


class TestSelectAction:
    def test_exploit(self):
        assert select_action(E, bc([1, 0], E, 0.0))[0] == 0

    def test_diagonal_bonus(self):
        assert select_action(E, bc([0, 0], np.diag([1, 4]), 1.0))[0] == 0

    def test_hand_computed_indices(self):
        idx, x = select_action(E, bc([0.4, 0], np.diag([4, 1]), 1.0))
        assert idx == 1 and np.array_equal(x, [0.0, 1.0])

    def test_ties_lowest_index(self):
        assert select_action([[0.0, 1.0], [0.0, 1.0]], bc([1, 1], E, 0.0))[0] == 0

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            select_action(E, bc([0, 0], np.diag([1.0, -1.0]), 1.0))

    @given(arrays(float, (6, 3), elements=st.floats(-1, 1)), arrays(float, 3, elements=st.floats(-2, 2)),
           st.floats(0, 5), st.floats(0.01, 100))
    def test_scale_invariance(self, D, theta, beta, c):
        # scaling theta and beta together scales every index by c
        a = select_action(D, bc(theta, np.eye(3) * 2, beta))[0]
        b = select_action(D, bc(c * theta, np.eye(3) * 2, c * beta))[0]
        s = D @ theta + beta * np.linalg.norm(D, axis=1) / math.sqrt(2)
        if np.sort(s)[-1] - np.sort(s)[-2] > 1e-9 * (1 + np.abs(s).max()):
            assert a == b

    def test_batch_matches_single(self, rng):
        arms = rng.normal(size=(5, 7, 3))
        g = rng.normal(size=(3, 3))
        b = bc(rng.normal(size=3), g @ g.T + np.eye(3), 0.7)
        assert list(select_batch(arms, b)) == [select_action(a, b)[0] for a in arms]


class TestAccumulate:
    def test_example(self):
        U, u = accumulate(np.zeros((2, 2)), np.zeros(2), [1.0, 0.0], 0.5)
        assert np.array_equal(U, [[1, 0], [0, 0]]) and np.array_equal(u, [0.5, 0])

    def test_commutes(self, rng):
        x1, x2 = rng.normal(size=2), rng.normal(size=2)
        a = accumulate(*accumulate(np.zeros((2, 2)), np.zeros(2), x1, 0.3), x2, -0.2)
        b = accumulate(*accumulate(np.zeros((2, 2)), np.zeros(2), x2, -0.2), x1, 0.3)
        assert np.allclose(a[0], b[0]) and np.allclose(a[1], b[1])

    @given(st.integers(1, 30), st.integers(0, 1000))
    def test_honest_messages_pass_dp_validation(self, L, seed):
        rng = np.random.default_rng(seed)
        U, u = np.zeros((3, 3)), np.zeros(3)
        for _ in range(L):
            x = rng.normal(size=3)
            x /= max(1.0, np.linalg.norm(x))
            U, u = accumulate(U, u, x, float(np.clip(rng.normal(), -1, 1)))
        assert np.array_equal(U, U.T)
        assert np.linalg.norm(U) <= L * (1 + 1e-12) and np.linalg.norm(u) <= L * (1 + 1e-12)
        out = validate_message(EpisodeMessage(0, 1, U, u), L, dp_mode=True)
        assert out.U is U and out.u is u
        _, _, ok = validate_batch(U[None], u[None], L, True)
        assert ok.all()


class TestValidate:
    def test_asymmetric_zeroed(self):
        out = validate_message(EpisodeMessage(0, 1, np.array([[0.0, 5.0], [0.0, 0.0]]), np.ones(2)), 10, False)
        assert not out.U.any() and not out.u.any()

    def test_dp_threshold(self):
        L = 4
        u = np.array([L + 0.1, 0.0])
        m = EpisodeMessage(0, 1, np.eye(2), u)
        assert not validate_message(m, L, True).u.any()
        assert np.array_equal(validate_message(m, L, False).u, u)

    def test_non_finite_and_malformed(self):
        bad = EpisodeMessage(0, 1, np.eye(2), np.array([np.nan, 0.0]))
        assert not validate_message(bad, 10, False).u.any()
        odd = EpisodeMessage(0, 1, np.eye(3), np.ones(2))
        assert validate_message(odd, 10, False).U.shape == (2, 2)


class TestAttacks:
    env = BanditEnvironment.create(EnvironmentSpec(d=1, N=2, T=10, set_family="fixed",
                                                   arm_pool=((-1.0,), (1.0,)), theta_star=(1.0,)),
                                   np.random.default_rng(0))

    def msg(self, U=None, u=None, xeta=None):
        return EpisodeMessage(0, 1, np.eye(2) if U is None else U,
                              np.array([1.0, -2.0]) if u is None else u, xeta)

    def test_zero_out(self, rng):
        out = apply_attack(self.msg(), AttackSpec(0.2, "zero-out"), self.env, rng)
        assert not out.U.any() and not out.u.any()

    def test_sign_flip(self, rng):
        out = apply_attack(self.msg(), AttackSpec(0.2, "sign-flip"), self.env, rng)
        assert np.array_equal(out.u, [-1.0, 2.0]) and np.array_equal(out.U, np.eye(2))

    def test_huge_norm(self, rng):
        out = apply_attack(self.msg(), AttackSpec(0.2, "huge-norm"), self.env, rng)
        assert np.array_equal(out.u, [-1e6, 2e6]) and np.array_equal(out.U, np.eye(2))

    def test_asymmetric_garbage_fails_validation(self, rng):
        out = apply_attack(self.msg(), AttackSpec(0.2, "asymmetric-garbage"), self.env, rng)
        assert out.U[0, 1] != out.U[1, 0]
        assert not validate_message(out, 10, False).U.any()

    def test_fake_parameter_one_dimensional(self, rng):
        # arms +1 twice and -1 once with noise; the fake sum uses theta = -1
        xs, etas = [1.0, 1.0, -1.0], [0.05, -0.02, 0.01]
        U, u = np.zeros((1, 1)), np.zeros(1)
        fake = np.zeros(1)
        for x, e in zip(xs, etas):
            U, u = accumulate(U, u, [x], x * 1.0 + e)
            fake += x * (x * -1.0 + e)
        xeta = np.array([sum(x * e for x, e in zip(xs, etas))])
        out = apply_attack(EpisodeMessage(0, 1, U, u, xeta), AttackSpec(0.2, "fake-parameter"),
                           self.env, rng)
        assert out.u == pytest.approx(fake)

    def test_random_gaussian_shapes(self, rng):
        out = apply_attack(self.msg(), AttackSpec(0.2, "random-gaussian"), self.env, rng)
        assert out.U.shape == (2, 2) and out.u.shape == (2,)

    @pytest.mark.parametrize("kw", [dict(alpha=0.5), dict(mode="nope"), dict(persistence="x"),
                                    dict(mode="zero-out", persistence="per-step"), dict(p=1.5)])
    def test_spec_rejects(self, kw):
        with pytest.raises(ConfigError):
            AttackSpec(**{"alpha": 0.1, **kw})

    def test_alpha_message(self):
        with pytest.raises(ConfigError, match="alpha < 1/2"):
            AttackSpec(0.6)

    def test_corrupted_count(self):
        assert AttackSpec(0.2).n_corrupted(20) == 4
        assert AttackSpec(0.1).n_corrupted(24) == 2
        assert AttackSpec(0.2).corrupted_set(20, np.random.default_rng(0)).sum() == 4


def sched(N=5, d=2, **kw):
    base = dict(variant="T1-robust", alpha=0.2, sigma=0.0, R=0.1, d=d, N=N, T=40, delta=0.1,
                L=4, K=10)
    base.update(kw)
    return schedules.ScheduleConfig(**base)


def ledger(N, d):
    return ControllerLedger.create(N, d, [NoiseTree(10, d, 0.0, i) for i in range(N)])


class TestControllerSync:
    def test_initial_broadcast(self):
        s = sched()
        lam = schedules.lambda_k(s, 1)
        b = make_broadcast(np.zeros((2, 2)), np.zeros(2), lam, 1.0, 1)
        assert np.array_equal(b.Lambda, lam * np.eye(2)) and not b.theta.any()

    def test_identical_messages_gm(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        s = sched()
        msgs = [EpisodeMessage(i, 1, M.copy(), np.ones(2)) for i in range(5)]
        b, aV, av = controller_sync(ledger(5, 2), msgs, 1, s, "gm")
        assert np.allclose(aV, M)
        assert np.allclose(b.Lambda, M + schedules.lambda_k(s, 2) * np.eye(2))
        assert np.allclose(b.theta, np.linalg.solve(b.Lambda, np.ones(2)))

    def test_missing_messages_count_as_zero(self):
        s = sched()
        msgs = [EpisodeMessage(0, 1, np.eye(2), np.ones(2))]
        led = ledger(5, 2)
        _, aV, _ = controller_sync(led, msgs + [None], 1, s, "mean")
        assert np.allclose(aV, np.eye(2) / 5)
        assert not led.V[1:].any()

    def test_mean_vs_gm_with_zeroed_attacker(self, rng):
        s = sched()
        honest = []
        for i in range(4):
            X = rng.normal(size=(4, 2))
            X /= np.linalg.norm(X, axis=1, keepdims=True)
            honest.append(EpisodeMessage(i, 1, X.T @ X, X.T @ rng.uniform(-1, 1, 4)))
        msgs = honest + [EpisodeMessage(4, 1, np.zeros((2, 2)), np.zeros(2))]
        _, mV, _ = controller_sync(ledger(5, 2), msgs, 1, s, "mean")
        _, gV, _ = controller_sync(ledger(5, 2), msgs, 1, s, "gm")
        assert not np.allclose(mV, gV)
        flat = np.array([m.U.reshape(-1) for m in honest])
        z0 = flat.mean(axis=0)
        dev = np.linalg.norm(flat - z0, axis=1).mean()
        bound = schedules.c_alpha(1 / 5) * (dev + 1e-9)
        assert np.linalg.norm(gV.reshape(-1) - z0) <= bound
        assert np.array_equal(gV, geometric_median_matrices([m.U for m in msgs], 1e-9))

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            make_broadcast(-np.eye(2), np.zeros(2), 1.0, 1.0, 2)


def reference_linucb(c, rep=0):
    """Single-agent episodic LinUCB, written independently of the protocol module."""
    st_ = _streams(c.seed, rep)
    env = BanditEnvironment.create(c.env, np.random.default_rng(st_["env"]))
    rng = np.random.default_rng(st_["rounds"])
    s = schedules.build_schedule("T1-robust", alpha=0.0, sigma=0.0, R=c.env.noise_R, d=c.env.d,
                                 N=c.env.N, T=c.env.T, delta=c.schedule.delta, L=c.schedule.L,
                                 eps=c.schedule.eps)
    d = c.env.d
    V, v = np.zeros((d, d)), np.zeros(d)
    regret, out, t = 0.0, [], 0
    for k in range(1, s.K + 1):
        lam = schedules.lambda_k(s, k)
        beta = schedules.beta_k(s, k, lam)
        Lam = V + lam * np.eye(d)
        theta = np.linalg.solve(Lam, v)
        Li = np.linalg.inv(Lam)
        U, u = np.zeros((d, d)), np.zeros(d)
        for _ in range(s.L):
            t += 1
            draw = env.sample_round(t, rng)
            D = draw.arms[0]
            score = D @ theta + beta * np.sqrt(np.einsum("ad,de,ae->a", D, Li, D))
            top = score.max()
            x = D[int(np.flatnonzero(score >= top - 1e-12 * (1 + abs(top)))[0])]
            regret += float(np.max(D @ env.theta_star) - x @ env.theta_star)
            out.append(regret)
            U += np.outer(x, x)
            u += (x @ env.theta_star + draw.noise[0]) * x
        V, v = V + U, v + u
    return np.array(out)


class TestRunExperiment:
    def test_matches_reference_single_agent(self):
        c = cfg(environment={"d": 2, "N": 4, "T": 64, "noise_R": 0.0})
        tr = run_experiment(c)
        ref = reference_linucb(c)
        assert np.allclose(tr.cumulative, 4 * ref, rtol=1e-9, atol=1e-9)

    def test_reproducible(self):
        c = cfg(attack={"alpha": 0.25, "mode": "sign-flip"})
        a, b = run_experiment(c), run_experiment(c)
        for name in ("cumulative", "lam", "beta", "norm_E", "norm_e", "theta_error", "min_eig"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_repetitions_differ(self):
        c = cfg(environment={"d": 2, "N": 4, "T": 64, "set_family": "iid-resample"})
        assert not np.array_equal(run_experiment(c, 0).cumulative, run_experiment(c, 1).cumulative)

    def test_attacked_agents_not_counted(self):
        c = cfg(environment={"d": 2, "N": 10, "T": 64}, attack={"alpha": 0.2, "mode": "zero-out"})
        tr = run_experiment(c)
        assert sorted(tr.counted) == [0, 0] + [64] * 8

    def test_per_episode_accounting(self):
        c = cfg(environment={"d": 2, "N": 10, "T": 64},
                attack={"alpha": 0.2, "mode": "zero-out", "persistence": "per-episode", "p": 0.5})
        tr = run_experiment(c)
        part = tr.counted[tr.counted < 64]
        assert len(part) == 2 and all(n % 8 == 0 for n in part)

    def test_alpha_zero_mean_exact_diagnostics(self):
        c = cfg(environment={"d": 2, "N": 4, "T": 64, "set_family": "iid-resample"})
        tr = run_experiment(c)
        assert not tr.norm_E.any() and not tr.norm_e.any()

    def test_gm_shared_sets_within_eps(self):
        c = cfg(oracle="gm", schedule={"variant": "T1-robust", "L": 8, "eps": 1e-6})
        tr = run_experiment(c)
        assert tr.norm_E.max() <= schedules.c_alpha(0.0) * 1e-6

    def test_lambda_symmetric_every_episode(self):
        c = cfg(oracle="gm", attack={"alpha": 0.25, "mode": "random-gaussian"},
                environment={"d": 3, "N": 4, "T": 64, "set_family": "iid-rotations"})
        tr = run_experiment(c, record_ledger=True)
        assert all(np.array_equal(V, V.transpose(0, 2, 1)) for V, _, _, _ in tr.ledger_history)
        assert (tr.min_eig > 0).all()

    @given(st.integers(0, 2**32), st.sampled_from(["mean", "gm"]),
           st.sampled_from(["zero-out", "huge-norm", "sign-flip", "random-gaussian"]))
    def test_regret_monotone_and_bounded(self, seed, oracle, mode):
        c = cfg(seed=seed, oracle=oracle, attack={"alpha": 0.25, "mode": mode},
                environment={"d": 2, "N": 4, "T": 32, "set_family": "iid-resample"})
        tr = run_experiment(c)
        inc = np.diff(np.concatenate([[0.0], tr.cumulative]))
        assert (inc >= 0).all()
        from fedbandit.bandit_env import BanditEnvironment as BE
        th = BE.create(c.env, np.random.default_rng(_streams(seed, 0)["env"])).theta_star
        assert (inc <= 4 * 2 * np.linalg.norm(th) + 1e-12).all()

    def test_mean_diverges_gm_stays_bounded(self):
        doc = {"preset": "robust-separation", "repetitions": 1,
               "attack": {"alpha": 0.05, "mode": "huge-norm"}}
        mean = run_experiment(config.from_dict({**doc, "oracle": "mean"}))
        gm = run_experiment(config.from_dict(doc))
        assert mean.theta_error[1:4].max() > 10 * math.sqrt(2)
        assert gm.theta_error.max() < 2.0

    def test_local_protocol_rejects_other_attacks(self):
        c = cfg(protocol="local", attack={"alpha": 0.25, "mode": "zero-out"})
        with pytest.raises(ConfigError):
            run_experiment(c)

    def test_trace_records_sigma_source(self):
        c = cfg(schedule={"variant": "T1-robust", "L": 8, "sigma": "empirical"},
                environment={"d": 2, "N": 4, "T": 64, "set_family": "iid-resample"})
        tr = run_experiment(c)
        assert tr.sigma_source == "empirical" and 0 < tr.sigma <= 2
        assert run_experiment(cfg()).sigma_source == "analytic"
