import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptrl.core import RngSpec
from adaptrl.errors import DimensionMismatch, NonFiniteInput, NonPositiveWeight, SingularDesign, ValidationError
from adaptrl.regression import (
    NigPosterior,
    SuffStats,
    cholesky_spd,
    lints_lambda,
    nig_sample,
    nig_update,
    ridge_fit,
    suffstats_update,
    wls_fit,
)


class TestRidge:
    def test_identity(self):
        np.testing.assert_allclose(ridge_fit(np.eye(2), [1, 2], 0.0), [1, 2])

    def test_shrink(self):
        np.testing.assert_allclose(ridge_fit(np.eye(2), [1, 2], 1.0), [0.5, 1.0])

    def test_dense_oracle(self, rng):
        X, y = rng.standard_normal((10, 3)), rng.standard_normal(10)
        oracle = np.linalg.lstsq(X.T @ X + 0.3 * np.eye(3), X.T @ y, rcond=None)[0]
        np.testing.assert_allclose(ridge_fit(X, y, 0.3), oracle, atol=1e-10)

    def test_singular(self):
        X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        with pytest.raises(SingularDesign):
            ridge_fit(X, [1, 2, 3], 0.0)

    def test_nonfinite(self):
        with pytest.raises(NonFiniteInput):
            ridge_fit(np.eye(2), [np.nan, 1], 1.0)

    def test_negative_lambda(self):
        with pytest.raises(ValidationError):
            ridge_fit(np.eye(2), [1, 1], -1.0)


class TestWls:
    def test_unit_weights(self, rng):
        X, y = rng.standard_normal((8, 2)), rng.standard_normal(8)
        np.testing.assert_allclose(wls_fit(X, y, np.ones(8), 0.5), ridge_fit(X, y, 0.5), atol=1e-12)

    def test_zero_weight(self):
        with pytest.raises(NonPositiveWeight):
            wls_fit(np.eye(2), [1, 1], [1.0, 0.0])

    def test_scale_invariance(self, rng):
        X, y, w = rng.standard_normal((8, 2)), rng.standard_normal(8), rng.uniform(0.5, 2, 8)
        np.testing.assert_allclose(wls_fit(X, y, w), wls_fit(X, y, 2 * w), atol=1e-12)


class TestSuffStats:
    def test_single_update(self):
        f = np.array([1.0, 2.0])
        s = suffstats_update(SuffStats.fresh(2, 0.5), f, 3.0)
        np.testing.assert_array_equal(s.B, 0.5 * np.eye(2) + np.outer(f, f))
        np.testing.assert_array_equal(s.b, 3.0 * f)
        assert s.n == 1

    def test_five_updates_vs_batch(self, rng):
        F, y = rng.standard_normal((5, 3)), rng.standard_normal(5)
        s = SuffStats.fresh(3, 1.0)
        for f, v in zip(F, y):
            s = s.update(f, v)
        np.testing.assert_allclose(s.B, np.eye(3) + F.T @ F, atol=1e-10)

    def test_zero_reward(self):
        s = SuffStats.fresh(2).update(np.ones(2), 0.0)
        np.testing.assert_array_equal(s.b, 0.0)

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            SuffStats.fresh(2).update(np.ones(3), 1.0)

    @given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**31))
    def test_incremental_matches_batch_and_stays_spd(self, n, d, seed):
        g = np.random.default_rng(seed)
        F, y = g.standard_normal((n, d)), g.standard_normal(n)
        s = SuffStats.fresh(d, 1.0)
        for f, v in zip(F, y):
            s = s.update(f, v)
            cholesky_spd(s.B)
            assert np.max(np.abs(s.B - s.B.T)) <= 1e-12
        ref = ridge_fit(F, y, 1.0)
        assert np.linalg.norm(s.mean() - ref) <= 1e-8 * max(np.linalg.norm(ref), 1e-12) + 1e-14


class TestNig:
    def _prior(self, d, lam=2.0):
        return NigPosterior.prior(np.zeros(d), np.eye(d) / lam, 2.0, 1.0)

    def test_no_data(self):
        p = self._prior(2)
        assert nig_update(p, np.zeros((0, 2)), np.zeros(0)) is p

    def test_ridge_identity(self, rng):
        X, y = rng.standard_normal((20, 3)), rng.standard_normal(20)
        post = nig_update(self._prior(3, 2.0), X, y)
        np.testing.assert_allclose(post.mu, ridge_fit(X, y, 2.0), atol=1e-10)

    def test_stream_equals_batch(self, rng):
        X, y = rng.standard_normal((2, 3)), rng.standard_normal(2)
        p = self._prior(3)
        a = nig_update(nig_update(p, X[:1], y[:1]), X[1:], y[1:])
        b = nig_update(p, X, y)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-10)
        np.testing.assert_allclose(a.precision, b.precision, atol=1e-10)
        assert a.b_ig == pytest.approx(b.b_ig, abs=1e-10)

    def test_permutation_invariance(self, rng):
        X, y = rng.standard_normal((30, 2)), rng.standard_normal(30)
        perm = rng.permutation(30)
        a, b = nig_update(self._prior(2), X, y), nig_update(self._prior(2), X[perm], y[perm])
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-10)
        assert a.b_ig == pytest.approx(b.b_ig, abs=1e-10)

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            nig_update(self._prior(2), np.zeros((3, 2)), np.zeros(2))

    def test_invalid_shape(self):
        with pytest.raises(ValidationError):
            NigPosterior(np.zeros(1), np.eye(1), 0.0, 1.0)

    def test_degenerate_scale(self):
        post = NigPosterior(np.array([1.0, -2.0]), 1e14 * np.eye(2), 3.0, 1.0)
        beta, _ = nig_sample(post, RngSpec(1))
        np.testing.assert_allclose(beta, post.mu, atol=1e-5)

    def test_sample_mean(self):
        post = NigPosterior(np.array([0.5, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]), 5.0, 4.0)
        g = RngSpec(11).generator()
        draws = np.array([nig_sample(post, g)[0] for _ in range(100_000)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - post.mu) < 4 * se)

    def test_replay(self):
        post = self._prior(2)
        a, b = nig_sample(post, RngSpec(5, 1)), nig_sample(post, RngSpec(5, 1))
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_lints_lambda():
    assert lints_lambda(0.5, 1.0) == 0.25
