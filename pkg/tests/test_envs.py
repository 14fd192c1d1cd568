import numpy as np
import pytest
from scipy import stats

from adaptrl.core import Dataset, RngSpec, StageRecord, Trajectory
from adaptrl.envs import (
    BanditEnv,
    BanditEnvSpec,
    MdpSpec,
    SmartSpec,
    apply_locf,
    bandit_env_step,
    drop_incomplete,
    mdp_env_rollout,
    policy_evaluation,
    smart_generate,
    smart_rollout_returns,
    standard_mdp,
    value_iteration,
)
from adaptrl.errors import ValidationError
from adaptrl.offline import value_iptw


class TestSmart:
    def test_null_oracle(self):
        spec = SmartSpec(psi=((0.0, 0.0), (0.0, 0.0)), beta=((1.0, 0.5), (0.5, 0.5, 1.0, 0.0)))
        s = smart_generate(spec, 200, RngSpec(0))
        for t in range(2):
            assert np.all(s.oracle_regime.actions(t, s.dataset.histories(t)) == 0)

    def test_noiseless_means(self):
        spec = SmartSpec(sigma=0.0)
        s = smart_generate(spec, 1, RngSpec(1))
        d = s.dataset
        x0 = d.states[0, 0]
        r1 = d.states[1, 1]
        assert d.rewards[0] == spec.mean_reward(0, x0, 0.0, 0.0, d.actions[0])
        assert d.rewards[1] == spec.mean_reward(1, x0, r1, float(d.actions[0]), d.actions[1])

    def test_oracle_value_matches_monte_carlo(self):
        spec = SmartSpec()
        R = smart_rollout_returns(spec, spec.oracle_regime(), 400_000, RngSpec(2))
        assert abs(R.mean() - spec.optimal_value()) < 4 * R.std() / np.sqrt(R.size)

    def test_iptw_closes_loop(self):
        spec = SmartSpec()
        s = smart_generate(spec, 10_000, RngSpec(3))
        est = value_iptw(s.dataset, s.oracle_regime)
        assert abs(est.point - s.oracle_value) < 3 * est.std_error

    def test_positivity_and_determinism(self):
        a = smart_generate(SmartSpec(), 300, RngSpec(4, 2)).dataset
        b = smart_generate(SmartSpec(), 300, RngSpec(4, 2)).dataset
        assert np.all((a.behavior_prob > 0) & (a.behavior_prob <= 1))
        assert np.array_equal(a.rewards, b.rewards) and np.array_equal(a.states, b.states)

    def test_invalid_probs(self):
        with pytest.raises(ValidationError):
            SmartSpec(stage_probs=((1.0,), (0.5, 0.3)))


class TestBandit:
    def test_control_arm_zero_mean(self):
        env = BanditEnv(BanditEnvSpec(control_arm=0), RngSpec(0))
        for _ in range(20):
            ctx = env.observe()
            assert ctx.means[0] == 0.0
            env.pull(0)

    def test_optimal_arm_zero_regret(self):
        env = BanditEnv(BanditEnvSpec(), RngSpec(1))
        ctx = env.observe()
        for _ in range(50):
            best = int(np.argmax(ctx.means))
            assert ctx.regret(best) == 0.0
            _, ctx = bandit_env_step(env, best)

    def test_habituation_lowers_mean(self):
        spec = BanditEnvSpec(habituation=True, habituation_coef=0.5)
        env = BanditEnv(spec, RngSpec(2))
        ctx = np.random.default_rng(0).standard_normal((spec.n_arms, spec.context_dim))
        fresh = env.features(ctx, np.zeros(spec.n_arms)) @ spec.theta
        rested = env.features(ctx, np.full(spec.n_arms, 7.0)) @ spec.theta
        assert np.all(fresh < rested)

    def test_missing_rewards(self):
        env = BanditEnv(BanditEnvSpec(missing_prob=0.3), RngSpec(3))
        ys = []
        for _ in range(2000):
            env.observe()
            ys.append(env.pull(0))
        frac = np.mean(np.isnan(ys))
        assert abs(frac - 0.3) < 3 * np.sqrt(0.3 * 0.7 / 2000)

    def test_stationary_has_no_baseline(self):
        with pytest.raises(ValidationError):
            BanditEnvSpec(baseline="sinusoidal")

    def test_conditional_means_exposed(self):
        spec = BanditEnvSpec(stationary=False, baseline="adversarial", feature_offset=1.0)
        env = BanditEnv(spec, RngSpec(4))
        ctx = env.observe()
        expected = ctx.features @ spec.theta + spec.baseline_scale * ctx.context[:, 0].mean()
        np.testing.assert_allclose(ctx.means, expected, atol=1e-12)


class TestMdp:
    def test_start_in_absorbing(self):
        res = mdp_env_rollout(standard_mdp(), [0, 0, 0, 0], 5, RngSpec(0), start_states=np.full(5, 3))
        assert res.dataset is None and res.n_empty == 5 and np.all(res.returns == 0)

    def test_deterministic_chain(self):
        spec = standard_mdp()
        res = mdp_env_rollout(spec, [0, 1, 0, 0], 1, RngSpec(0), start_states=np.array([0]))
        d = res.dataset
        np.testing.assert_array_equal(d.states[:, 0], [0, 1])
        np.testing.assert_array_equal(d.rewards, [0.0, 1.0])
        assert res.returns[0] == pytest.approx(0.0 + 0.9 * 1.0)

    def test_rollout_matches_policy_evaluation(self):
        spec = standard_mdp()
        pi = np.full((4, 2), 0.5)
        res = mdp_env_rollout(spec, pi, 100_000, RngSpec(1))
        exact = spec.initial @ policy_evaluation(spec, pi)
        se = res.returns.std(ddof=1) / np.sqrt(res.returns.size)
        assert abs(res.returns.mean() - exact) < 3 * se

    def test_censoring(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 0] = 1.0
        P[1, 0, 1] = 1.0
        spec = MdpSpec(P, np.array([[1.0], [0.0]]), gamma=0.5, absorbing=1)
        res = mdp_env_rollout(spec, [0, 0], 2, RngSpec(0), cap=10)
        assert np.all(res.censored) and np.all(res.dataset.lengths == 10)

    def test_invalid_transitions(self):
        with pytest.raises(ValidationError):
            MdpSpec(np.full((2, 1, 2), 0.7), np.zeros((2, 1)), absorbing=1)

    def test_value_iteration_closed_form(self):
        Q = value_iteration(standard_mdp())
        assert Q[:3].argmax(axis=1).tolist() == [1, 0, 0]
        np.testing.assert_allclose(Q[3], 0.0)


def _traj(rewards):
    return Trajectory(tuple(StageRecord(np.zeros(1), 0, r, 0.5) for r in rewards))


class TestLocf:
    def test_carry_forward(self):
        d = Dataset.from_trajectories([_traj([5.0, np.nan, np.nan])], 2, horizon=2)
        res = apply_locf(d)
        np.testing.assert_array_equal(res.dataset.rewards, [5, 5, 5])
        np.testing.assert_array_equal(res.imputed, [False, True, True])

    def test_identity(self):
        d = Dataset.from_trajectories([_traj([1.0, 2.0])], 2, horizon=1)
        res = apply_locf(d)
        assert res.dataset is d and not res.imputed.any()

    def test_leading(self):
        d = Dataset.from_trajectories([_traj([np.nan, 3.0])], 2, horizon=1)
        res = apply_locf(d)
        np.testing.assert_array_equal(res.dataset.rewards, [0, 3])
        np.testing.assert_array_equal(res.leading_missing, [True, False])
        assert res.dataset.metadata["missing_policy"] == "locf"

    def test_drop_incomplete(self):
        d = Dataset.from_trajectories([_traj([np.nan, 3.0]), _traj([1.0, 2.0])], 2, horizon=1)
        out = drop_incomplete(d)
        assert out.n_trajectories == 1 and out.metadata["n_dropped"] == 1


def test_smart_response_rate_closed_form():
    spec = SmartSpec()
    assert spec.response_rate == pytest.approx(stats.norm.cdf(0.0))
