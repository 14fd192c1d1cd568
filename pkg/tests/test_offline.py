import numpy as np
import pytest

from adaptrl.core import Dataset, DecisionRule, FeatureMap, Regime, RngSpec, StageRecord, Trajectory, constant_regime
from adaptrl.envs import ObservationalSpec, SeparableSpec, observational_generate, separable_generate, standard_mdp, value_iteration
from adaptrl.errors import (
    EmptyStageSample,
    IndexOutOfRange,
    MissingReward,
    NegativeReward,
    NoMatchedTrajectories,
    NotBinaryAction,
    PositivityViolation,
    SingularSystem,
)
from adaptrl.offline import (
    DegenerateWeightsWarning,
    OutcomeModel,
    PropensityModel,
    bowl_fit,
    g_estimation_fit,
    msm_weights,
    owl_fit,
    q_learning_fit,
    soft_threshold_regime,
    tabular_q_update,
    value_aiptw,
    value_iptw,
)
from adaptrl.regression import ridge_fit

X_MAP = FeatureMap("linear_interaction", ("X0_0",), ("X0_0",))


def one_stage(n, effect=(-1.0, 2.0), seed=0, prob=0.5, noise=1.0):
    g = np.random.default_rng(seed)
    x = g.standard_normal(n)
    a = (g.random(n) < prob).astype(int)
    y = (effect[0] + effect[1] * x) * a + noise * g.standard_normal(n)
    return Dataset.from_stage_arrays([x[:, None]], [a], [y], [np.where(a == 1, prob, 1 - prob)]), x


def threshold_regime(c=0.0, col="X0_0", p=1):
    rule = DecisionRule("deterministic", np.array([0.0, -c, 1.0]), FeatureMap("linear_interaction", (), (col,)), 2)
    return Regime((rule,), p)


class TestQLearning:
    def test_single_stage_rule(self):
        data, x = one_stage(10_000)
        res = q_learning_fit(data, X_MAP)
        agree = np.mean(res.regime.actions(0, x[:, None]) == (x > 0.5))
        assert agree >= 0.95

    def test_null_effect(self):
        data, _ = one_stage(10_000, effect=(0.0, 0.0), seed=1)
        assert np.max(np.abs(q_learning_fit(data, X_MAP).model.psi(0))) < 0.05

    def test_last_stage_independent_of_gamma(self):
        g = np.random.default_rng(2)
        n = 500
        X = [g.standard_normal((n, 1)) for _ in range(2)]
        A = [g.integers(0, 2, n) for _ in range(2)]
        Y = [g.standard_normal(n) for _ in range(2)]
        data = Dataset.from_stage_arrays(X, A, Y, [np.full(n, 0.5)] * 2)
        a = q_learning_fit(data, gamma=0.0).model.coefs[1]
        b = q_learning_fit(data, gamma=0.9).model.coefs[1]
        np.testing.assert_array_equal(a, b)

    def test_missing_reward(self):
        data, _ = one_stage(50)
        r = data.rewards.copy()
        r[3] = np.nan
        with pytest.raises(MissingReward):
            q_learning_fit(data.replace(rewards=r))

    def test_argmax_invariance_to_main_effect(self):
        data, x = one_stage(2000, seed=3)
        shifted = data.replace(rewards=data.rewards + 3.0 - 2.0 * data.states[:, 0])
        H = np.linspace(-3, 3, 601)[:, None]
        a = q_learning_fit(data, X_MAP).regime.actions(0, H)
        b = q_learning_fit(shifted, X_MAP).regime.actions(0, H)
        np.testing.assert_array_equal(a, b)

    def test_wls_option(self):
        data, _ = one_stage(300, seed=4)
        res = q_learning_fit(data, X_MAP, weights=[np.ones(300)])
        np.testing.assert_allclose(res.model.coefs[0], q_learning_fit(data, X_MAP).model.coefs[0], atol=1e-10)


class TestSoftThreshold:
    def test_zero_is_identity(self):
        data, x = one_stage(1000, seed=5)
        m = q_learning_fit(data, X_MAP).model
        H = x[:, None]
        np.testing.assert_array_equal(soft_threshold_regime(m, 0.0).actions(0, H), m.regime().actions(0, H))

    def test_large_threshold_default_action(self):
        data, x = one_stage(1000, seed=6)
        m = q_learning_fit(data, X_MAP).model
        big = np.max(np.abs(m.contrast(0, x[:, None]))) + 1.0
        assert np.all(soft_threshold_regime(m, big).actions(0, x[:, None]) == 0)

    def test_bootstrap_stability_on_null(self):
        data, x = one_stage(500, effect=(0.0, 0.0), seed=7)
        grid = np.linspace(-2, 2, 41)[:, None]
        g = np.random.default_rng(8)
        base = q_learning_fit(data, X_MAP).model
        ref_plain, ref_thr = base.regime().actions(0, grid), soft_threshold_regime(base, 0.2).actions(0, grid)
        flips_plain = flips_thr = 0.0
        for _ in range(200):
            m = q_learning_fit(data.subset(g.integers(0, 500, 500)), X_MAP).model
            flips_plain += np.mean(m.regime().actions(0, grid) != ref_plain)
            flips_thr += np.mean(soft_threshold_regime(m, 0.2).actions(0, grid) != ref_thr)
        assert flips_thr < flips_plain


class TestTabularQ:
    def test_alpha_zero(self):
        Q = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(tabular_q_update(Q, 1, 0, 5.0, 2, 0.0, 0.9), Q)

    def test_alpha_one_myopic(self):
        Q = np.arange(6.0).reshape(3, 2)
        assert tabular_q_update(Q, 1, 0, 5.0, 2, 1.0, 0.0)[1, 0] == 5.0

    def test_index_error(self):
        with pytest.raises(IndexOutOfRange):
            tabular_q_update(np.zeros((3, 2)), 3, 0, 1.0, 0, 0.5, 0.9)

    def test_sweeps_converge_to_value_iteration(self):
        spec = standard_mdp()
        Q = np.zeros((spec.n_states, spec.n_actions))
        nxt = spec.transitions.argmax(axis=2)
        for _ in range(400):
            for s in range(3):
                for a in range(2):
                    Q = tabular_q_update(Q, s, a, spec.rewards[s, a], int(nxt[s, a]), 1.0, spec.gamma, spec.absorbing)
        assert np.max(np.abs(Q - value_iteration(spec))) < 1e-6


class TestGEstimation:
    def test_null_effect(self):
        data, _ = one_stage(10_000, effect=(0.0, 0.0), seed=9)
        res = g_estimation_fit(data, X_MAP)
        assert np.max(np.abs(res.model.psi[0])) < 0.05

    def test_difference_of_regressions(self):
        data, x = one_stage(100_000, effect=(0.3, -0.7), seed=10)
        res = g_estimation_fit(data, X_MAP, PropensityModel("known"))
        a, y = data.actions, data.rewards
        D = np.column_stack([np.ones_like(x), x])
        oracle = ridge_fit(D[a == 1], y[a == 1], 0.0) - ridge_fit(D[a == 0], y[a == 0], 0.0)
        np.testing.assert_allclose(res.model.psi[0], oracle, atol=0.02)

    def test_wrong_adjunct_correct_propensity(self):
        spec = ObservationalSpec()
        errs = []
        for s in range(20):
            data = observational_generate(spec, 10_000, RngSpec(100 + s))
            res = g_estimation_fit(data, X_MAP, PropensityModel("logistic", FeatureMap("linear", ("X0_0",))),
                                   FeatureMap("linear", ("X0_1",)))
            errs.append(res.model.psi[0] - np.array(spec.psi))
        assert np.max(np.abs(np.mean(errs, axis=0))) < 0.05

    def test_contrast_zero_at_reference(self):
        data, x = one_stage(500, seed=11)
        m = g_estimation_fit(data, X_MAP).model
        np.testing.assert_array_equal(m.contrast(0, x[:, None], a=0), 0.0)

    def test_singular(self):
        data, _ = one_stage(200, seed=12)
        dup = FeatureMap("linear_interaction", ("X0_0",), ("X0_0", "X0_0"))
        with pytest.raises(SingularSystem):
            g_estimation_fit(data, dup)

    def test_binary_only(self):
        g = np.random.default_rng(0)
        a = g.integers(0, 3, 50)
        data = Dataset.from_stage_arrays([g.standard_normal((50, 1))], [a], [g.standard_normal(50)], n_actions=3)
        with pytest.raises(NotBinaryAction):
            g_estimation_fit(data)


class TestIptw:
    def test_behavior_regime_sample_mean(self):
        g = np.random.default_rng(13)
        n = 200
        data = Dataset.from_stage_arrays([g.standard_normal((n, 1))], [np.ones(n, int)], [g.standard_normal(n)],
                                         [np.full(n, 0.5)])
        est = value_iptw(data, constant_regime(1, 1, 1), n_boot=50)
        assert est.point == pytest.approx(float(np.mean(data.rewards)), abs=1e-12)
        assert est.effective_sample_fraction == pytest.approx(1.0)

    def test_no_match(self):
        n = 20
        data = Dataset.from_stage_arrays([np.zeros((n, 1))], [np.zeros(n, int)], [np.ones(n)], [np.full(n, 0.5)])
        with pytest.raises(NoMatchedTrajectories):
            value_iptw(data, constant_regime(1, 1, 1))

    def test_degenerate_warning(self):
        n = 1000
        a = np.zeros(n, int)
        a[0] = 1
        data = Dataset.from_stage_arrays([np.zeros((n, 1))], [a], [np.arange(n, dtype=float)],
                                         [np.where(a == 1, 0.001, 0.999)])
        reg = Regime((DecisionRule("softmax", np.array([0.0, 0.0]), FeatureMap("linear", ()), 2),), 1)
        with pytest.warns(DegenerateWeightsWarning):
            value_iptw(data, reg, behavior_probs=np.where(a == 1, 1e-9, 0.999), n_boot=10)

    def test_estimated_propensity_flagged(self):
        data, _ = one_stage(500, seed=14)
        data = data.replace(behavior_prob=np.full(data.n_rows, np.nan))
        est = value_iptw(data, threshold_regime(), n_boot=20)
        assert est.metadata["estimated_propensity"] is True

    def test_bootstrap_recorded(self):
        data, _ = one_stage(500, seed=15)
        est = value_iptw(data, threshold_regime(), seed=3)
        assert est.n_boot >= 200 and est.seed == 3 and est.std_error > 0


class TestAiptw:
    def test_both_correct(self):
        spec = ObservationalSpec()
        prop = PropensityModel("logistic", FeatureMap("linear", ("X0_0",)))
        out = OutcomeModel(FeatureMap("polynomial", ("X0_0",), ("X0_0",), degree=2))
        reg = threshold_regime(p=2)
        errs = [value_aiptw(observational_generate(spec, 10_000, RngSpec(200 + s)), reg, prop, out, n_boot=0).point
                - spec.value(0.0) for s in range(20)]
        assert abs(np.mean(errs)) < 0.03


class TestOwl:
    def test_negative_reward(self):
        data, _ = one_stage(50, seed=16)
        with pytest.raises(NegativeReward):
            owl_fit(data)

    def test_grid_oracle(self):
        g = np.random.default_rng(17)
        n = 2000
        x = g.uniform(-1, 1, n)
        a = g.integers(0, 2, n)
        y = 0.1 + ((2 * a - 1) == np.sign(x - 0.3)).astype(float)
        data = Dataset.from_stage_arrays([x[:, None]], [a], [y], [np.full(n, 0.5)])
        res, reg = owl_fit(data, lam=0.001, max_iters=4000)
        s = 2 * a - 1
        grid = np.linspace(-1, 1, 401)
        loss = [np.sum(y / 0.5 * (s != np.where(x > c, 1, -1))) for c in grid]
        c_star = grid[int(np.argmin(loss))]
        agree = np.mean(reg.actions(0, x[:, None]) == (x > c_star))
        assert agree >= 0.95

    def test_symmetric_degenerate(self):
        x = np.array([-1.0, -1.0, 1.0, 1.0])
        a = np.array([0, 1, 0, 1])
        data = Dataset.from_stage_arrays([x[:, None]], [a], [np.ones(4)], [np.full(4, 0.5)])
        res, _ = owl_fit(data)
        assert np.linalg.norm(res.coef) <= 1e-3 and res.degenerate

    def test_binary_only(self):
        g = np.random.default_rng(0)
        data = Dataset.from_stage_arrays([g.standard_normal((30, 1))], [g.integers(0, 3, 30)], [np.ones(30)],
                                         [np.full(30, 1 / 3)], n_actions=3)
        with pytest.raises(NotBinaryAction):
            owl_fit(data)


class TestBowl:
    def test_single_stage_equals_owl(self):
        data, _ = one_stage(400, seed=18)
        data = data.replace(rewards=np.abs(data.rewards))
        r1, _ = owl_fit(data)
        r2 = bowl_fit(data)
        np.testing.assert_array_equal(r1.coef, r2.stages[0].coef)

    def test_support_is_concordant(self):
        data = separable_generate(SeparableSpec(noise=0.5), 2000, RngSpec(19))
        res = bowl_fit(data)
        d1 = res.regime.actions(1, data.histories(1))
        np.testing.assert_array_equal(res.support(0), data.stage(1).actions == d1)

    def test_grid_oracle_per_stage(self):
        data = separable_generate(SeparableSpec(noise=0.5), 4000, RngSpec(20))
        res = bowl_fit(data)
        for t in (1, 0):
            keep = res.support(t)
            x = data.stage(t).states[keep, 0]
            s = 2 * data.stage(t).actions[keep] - 1
            w = res.weights[t][keep]
            grid = np.linspace(-1, 1, 201)
            c_star = grid[int(np.argmin([np.sum(w * (s != np.where(x > c, 1, -1))) for c in grid]))]
            d = res.regime.actions(t, data.histories(t))[keep]
            assert np.mean(d == (x > c_star)) >= 0.95

    def test_empty_stage(self):
        n = 10
        x0 = np.ones((n, 1))
        data = Dataset.from_stage_arrays([x0, x0], [np.zeros(n, int)] * 2, [np.zeros(n), np.zeros(n)],
                                         [np.full(n, 0.5)] * 2)
        with pytest.raises(EmptyStageSample):
            bowl_fit(data)


class TestMsm:
    def test_constant_half(self):
        tr = Trajectory(tuple(StageRecord(np.zeros(1), 0, 1.0, 0.5) for _ in range(3)))
        assert msm_weights(tr)[2] == 8.0

    def test_certain_first(self):
        tr = Trajectory((StageRecord(np.zeros(1), 0, 1.0, 1.0),))
        assert msm_weights(tr)[0] == 1.0

    def test_telescoping_and_monotone(self, rng):
        for _ in range(20):
            pis = rng.uniform(0.05, 1.0, 6)
            tr = Trajectory(tuple(StageRecord(np.zeros(1), 0, 0.0, float(p)) for p in pis))
            w = msm_weights(tr)
            np.testing.assert_allclose(w[1:], w[:-1] / pis[1:], rtol=1e-12)
            assert np.all(np.diff(w) >= 0)

    def test_positivity(self):
        tr = Trajectory((StageRecord(np.zeros(1), 0, 1.0, None),))
        with pytest.raises(PositivityViolation):
            msm_weights(tr)
