import numpy as np
import pytest

from adaptrl.bandits import UniformAgent
from adaptrl.core import DecisionRule, FeatureMap, Regime, RngSpec
from adaptrl.envs import ArmContext, BanditEnvSpec, MdpSpec, ObservationalSpec, SmartSpec, policy_evaluation, standard_mdp
from adaptrl.errors import ValidationError
from adaptrl.evaluation import (
    CELLS,
    dr_experiment,
    mc_policy_value,
    regime_agreement,
    regret_curve,
    run_bandit,
)


class FixedGapEnv:
    """Two arms with constant means 0 and ``gap``; no context."""

    def __init__(self, gap, seed):
        self.gap, self.rng, self.t = gap, np.random.default_rng(seed), 0

    def observe(self):
        return ArmContext(np.eye(2), np.ones(2, bool), np.array([0.0, self.gap]), np.zeros(1), self.t)

    def pull(self, arm):
        self.t += 1
        return float((0.0, self.gap)[arm] + self.rng.standard_normal())


class TestRegret:
    def test_oracle_has_zero_regret(self):
        curve = regret_curve("oracle", BanditEnvSpec(n_arms=3, context_dim=2), 500, [0, 1])
        np.testing.assert_array_equal(curve.per_seed, 0.0)

    def test_uniform_linear_growth(self):
        gap, T = 0.7, 10_000
        per_step = run_bandit(UniformAgent(RngSpec(0, 1)), FixedGapEnv(gap, 0), T)
        total = per_step.sum()
        assert abs(total - gap / 2 * T) < 0.05 * gap / 2 * T

    def test_lints_sublinear(self):
        curve = regret_curve("lints", BanditEnvSpec(n_arms=5, context_dim=3), 4000, [0, 1, 2])
        per_step = np.diff(curve.mean, prepend=0.0)
        early, late = per_step[500:1000].mean(), per_step[3500:4000].mean()
        assert late < early
        assert curve.at(4000) - curve.at(2000) < curve.at(2000)

    def test_curve_csv(self):
        curve = regret_curve("uniform", BanditEnvSpec(n_arms=2, context_dim=2), 10, [3, 4])
        lines = curve.to_csv(every=4, header_comment="config_hash: x").splitlines()
        assert lines[0] == "# config_hash: x"
        assert lines[1] == "t,mean,std_error,seed_3,seed_4"
        assert [int(r.split(",")[0]) for r in lines[2:]] == [4, 8, 10]

    def test_seed_reproducible(self):
        a = regret_curve("lints", BanditEnvSpec(n_arms=3, context_dim=2), 200, [5])
        b = regret_curve("lints", BanditEnvSpec(n_arms=3, context_dim=2), 200, [5])
        np.testing.assert_array_equal(a.per_seed, b.per_seed)

    def test_rejects_empty_seeds(self):
        with pytest.raises(ValidationError):
            regret_curve("uniform", BanditEnvSpec(), 10, [])


class TestMonteCarlo:
    def test_noiseless_zero_se(self):
        P, R = standard_mdp().transitions, standard_mdp().rewards
        spec = MdpSpec(P, R, 0.9, 3, initial=np.array([1.0, 0.0, 0.0, 0.0]))
        est = mc_policy_value(spec, np.array([1, 0, 0, 0]), 100, rng=0)
        assert est.std_error == 0.0
        assert est.point == pytest.approx(policy_evaluation(spec, np.eye(2)[[1, 0, 0, 0]])[0], abs=1e-12)

    def test_se_scaling(self):
        spec = SmartSpec()
        a = mc_policy_value(spec, spec.oracle_regime(), 20_000, rng=1).std_error
        b = mc_policy_value(spec, spec.oracle_regime(), 40_000, rng=2).std_error
        assert abs(b / a - 1 / np.sqrt(2)) < 0.2 / np.sqrt(2)

    def test_matches_dynamic_programming(self):
        spec = standard_mdp()
        pi = np.full((4, 2), 0.5)
        est = mc_policy_value(spec, pi, 50_000, rng=3)
        exact = spec.initial @ policy_evaluation(spec, pi)
        assert abs(est.point - exact) < 3 * est.std_error

    def test_observational_threshold_value(self):
        spec = ObservationalSpec()
        rule = DecisionRule("deterministic", np.array([0.0, 0.0, 1.0]), FeatureMap("linear_interaction", (), ("X0_0",)), 2)
        est = mc_policy_value(spec, Regime((rule,), 2), 200_000, rng=4)
        assert abs(est.point - spec.value(0.0)) < 3 * est.std_error


class TestAgreement:
    def _rules(self):
        fm = FeatureMap("linear_interaction", (), ("X0_0",))
        a = Regime((DecisionRule("deterministic", np.array([0.0, 0.0, 1.0]), fm, 2),), 2)
        b = Regime((DecisionRule("deterministic", np.array([0.0, 0.0, -1.0]), fm, 2),), 2)
        return a, b

    def test_self_and_flipped(self):
        a, b = self._rules()
        H = np.random.default_rng(0).standard_normal((500, 1))
        assert regime_agreement(a, a, H) == 1.0
        assert regime_agreement(a, b, H) == 0.0


@pytest.mark.slow
def test_dr_correct_cell_small():
    table = dr_experiment("aiptw", n=5000, replications=40, seed=1)
    assert table.bias[("correct", "correct")] < 0.03
    assert set(table.bias) == set(CELLS)
    d = table.to_dict()
    assert "outcome=correct,propensity=wrong" in d["bias"]
