import numpy as np
import pytest

from adaptrl.core import Dataset, FeatureMap, MarkovFeature, RngSpec
from adaptrl.envs import mdp_env_rollout, policy_evaluation, standard_mdp, value_iteration
from adaptrl.errors import PositivityViolation, SingularW
from adaptrl.indefinite import GgqObjective, ggq_fit, softmax_policy, transitions, vlearning_evaluate, vlearning_fit

SPEC = standard_mdp()
FEAT = MarkovFeature("tabular", SPEC.n_states, SPEC.n_actions, absorbing_state=float(SPEC.absorbing))
UNIFORM = np.full((SPEC.n_states, SPEC.n_actions), 0.5)


@pytest.fixture(scope="module")
def behavior_data():
    return mdp_env_rollout(SPEC, UNIFORM, 5000, RngSpec(1)).dataset


class TestMarkovFeature:
    def test_absorbing_is_zero(self):
        c = np.array([[float(SPEC.absorbing)]])
        for a in range(2):
            assert np.all(FEAT.design(c, a) == 0.0)

    def test_map_kind_absorbing_zero(self):
        feat = MarkovFeature("map", 4, 2, absorbing_state=3.0, fmap=FeatureMap("linear_interaction"))
        assert np.all(feat.design(np.array([[3.0]]), 1) == 0.0)


class TestGgq:
    def test_zero_rewards(self, behavior_data):
        data = behavior_data.replace(rewards=np.zeros(behavior_data.n_rows))
        sol = ggq_fit(data, FEAT, restarts=3)
        assert sol.objective_value == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(sol.theta, 0.0, atol=1e-8)

    def test_recovers_dp_policy(self, behavior_data):
        sol = ggq_fit(behavior_data, FEAT)
        X = np.arange(3, dtype=float)[:, None]
        np.testing.assert_array_equal(sol.regime.actions(0, X), value_iteration(SPEC)[:3].argmax(axis=1))

    def test_q_at_absorbing_zero(self, behavior_data):
        sol = ggq_fit(behavior_data, FEAT, restarts=2)
        np.testing.assert_array_equal(sol.q_values(FEAT, np.array([[3.0]])), 0.0)

    def test_objective_properties(self, behavior_data, rng):
        obj = GgqObjective(transitions(behavior_data, FEAT), FEAT, 0.9)
        sol = ggq_fit(behavior_data, FEAT, restarts=4)
        assert sol.objective_value <= obj(np.zeros(FEAT.dim))
        for _ in range(20):
            assert obj(rng.normal(0, 5, FEAT.dim)) >= 0.0
        assert all(sol.objective_value <= t["initial_objective"] for t in sol.trace)

    def test_feature_rescaling_leaves_objective_invariant(self, behavior_data, rng):
        tr = transitions(behavior_data, FEAT)
        obj, scaled = GgqObjective(tr, FEAT, 0.9), GgqObjective(tr, FEAT, 0.9)
        kappa = 2.5
        scaled.psi, scaled.psi_next = obj.psi * kappa, obj.psi_next * kappa
        scaled.b, scaled.G = obj.b * kappa, obj.G * kappa**2
        scaled.L = obj.L * kappa
        for _ in range(10):
            th = rng.normal(0, 3, FEAT.dim)
            assert scaled(th / kappa) == pytest.approx(obj(th), rel=1e-10)
            np.testing.assert_array_equal(
                np.argmax(scaled.psi_next @ (th / kappa), axis=0), np.argmax(obj.psi_next @ th, axis=0))

    def test_reward_rescaling_keeps_regime(self, behavior_data):
        fm = FeatureMap("onehot_cross", main_columns=(), include_intercept=True)
        base = MarkovFeature("map", 4, 2, absorbing_state=3.0, fmap=fm)
        data = behavior_data
        sol = ggq_fit(data, base, restarts=3)
        scaled = data.replace(rewards=data.rewards * 3.0)
        sol2 = ggq_fit(scaled, base, restarts=3)
        X = np.arange(3, dtype=float)[:, None]
        np.testing.assert_array_equal(sol.regime.actions(0, X), sol2.regime.actions(0, X))

    def test_singular_w(self):
        g = np.random.default_rng(0)
        n = 50
        data = Dataset(np.arange(n), np.zeros((n, 1)), np.zeros(n, int), g.standard_normal(n), np.full(n, 0.5),
                       np.ones(n, bool), np.full((n, 1), 3.0), None, (2,))
        with pytest.raises(SingularW):
            ggq_fit(data, FEAT)


class TestVlearning:
    def test_behavior_ratios_one(self, behavior_data):
        fit = vlearning_evaluate(behavior_data, FEAT, softmax_policy(np.zeros(FEAT.dim), FEAT))
        np.testing.assert_array_equal(fit.ratios, 1.0)

    def test_penalty_domination(self, behavior_data):
        fit = vlearning_evaluate(behavior_data, FEAT, softmax_policy(np.zeros(FEAT.dim), FEAT), lam=1e12)
        np.testing.assert_allclose(fit.theta, 0.0, atol=1e-9)
        assert abs(fit.value) < 1e-9

    def test_selects_dp_policy(self, behavior_data):
        sol = vlearning_fit(behavior_data, FEAT)
        X = np.arange(3, dtype=float)[:, None]
        np.testing.assert_array_equal(sol.regime.actions(0, X), value_iteration(SPEC)[:3].argmax(axis=1))

    def test_behavior_value_close_to_exact(self, behavior_data):
        fit = vlearning_evaluate(behavior_data, FEAT, softmax_policy(np.zeros(FEAT.dim), FEAT), lam=1e-4)
        exact = policy_evaluation(SPEC, UNIFORM)[:3]
        assert np.max(np.abs(fit.theta - exact)) < 0.1

    def test_positivity(self, behavior_data):
        pb = behavior_data.behavior_prob.copy()
        pb[:] = np.nan
        with pytest.raises(PositivityViolation):
            vlearning_evaluate(behavior_data, FEAT, softmax_policy(np.zeros(FEAT.dim), FEAT), behavior_probs=pb)
