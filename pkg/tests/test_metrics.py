import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit
from sklearn.metrics import roc_auc_score

from dlsn_smc import metrics
from dlsn_smc import model as dlsn
from dlsn_smc.model import StaticParams
from dlsn_smc.smc import ParticleEnsemble


def ensemble(particles, logw=None):
    particles = np.asarray(particles, dtype=float)
    logw = np.zeros(len(particles)) if logw is None else np.asarray(logw, dtype=float)
    return ParticleEnsemble(particles, logw, np.arange(len(particles)), t=1)


class TestROC:
    def test_perfect(self):
        assert metrics.auc_score([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0

    def test_constant_scores(self):
        fpr, tpr, thr, auc = metrics.roc_curve([1, 0, 0, 1, 0], np.zeros(5))
        assert auc == 0.5
        np.testing.assert_array_equal(fpr, [0, 1])
        np.testing.assert_array_equal(tpr, [0, 1])

    def test_hand_example(self):
        fpr, tpr, thr, auc = metrics.roc_curve([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.1])
        assert auc == 0.75
        np.testing.assert_array_equal(fpr, [0, 0, 0.5, 0.5, 1])
        np.testing.assert_array_equal(tpr, [0, 0.5, 0.5, 1, 1])
        assert thr[0] == np.inf

    def test_single_class(self):
        with pytest.raises(metrics.UndefinedAUCError):
            metrics.auc_score([1, 1], [0.2, 0.3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics.roc_curve([1, 0], [0.1])

    @given(st.integers(0, 10_000), st.integers(2, 60))
    @settings(max_examples=50)
    def test_matches_reference_and_monotone_invariance(self, seed, n):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = np.round(rng.normal(size=n), 1)  # rounding produces ties
        auc = metrics.auc_score(y, s)
        assert auc == pytest.approx(roc_auc_score(y, s), abs=1e-12)
        assert metrics.auc_score(y, np.exp(3 * s) + 7) == pytest.approx(auc, abs=1e-12)
        assert metrics.auc_score(y, expit(s)) == pytest.approx(auc, abs=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_curve_is_monotone_staircase(self, seed):
        rng = np.random.default_rng(seed)
        y = np.r_[0, 1, rng.integers(0, 2, 20)]
        fpr, tpr, thr, _ = metrics.roc_curve(y, rng.integers(0, 5, 22))
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        assert fpr[-1] == tpr[-1] == 1.0
        assert np.all(np.diff(thr) < 0)


class TestMSE:
    def test_value(self):
        a = np.array([[0, 0.2, 0.4], [0.2, 0, 0.6], [0.4, 0.6, 0]])
        b = a.copy()
        b[0, 1] = b[1, 0] = 0.5
        assert metrics.mse_probability(a, b) == pytest.approx(0.09 / 3)

    def test_hand_example(self):
        def sym(v):
            m = np.zeros((3, 3))
            m[0, 1], m[0, 2], m[1, 2] = v
            return m + m.T

        assert metrics.mse_probability(sym([0.2, 0.5, 0.9]), sym([0.3, 0.5, 0.7])) == pytest.approx(0.05 / 3)
        assert metrics.mse_probability(np.zeros((3, 3)), np.ones((3, 3))) == 1.0

    @given(st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_relabeling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 7
        a, b = (rng.random((n, n)) for _ in range(2))
        a, b = a + a.T, b + b.T
        perm = rng.permutation(n)
        pa, pb = a[np.ix_(perm, perm)], b[np.ix_(perm, perm)]
        assert metrics.mse_probability(pa, pb) == pytest.approx(metrics.mse_probability(a, b), rel=1e-12)

    def test_series_and_time_index(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((4, 5, 5)), rng.random((4, 5, 5))
        series = metrics.mse_series(a, b)
        assert series[2] == pytest.approx(metrics.mse_probability(a, b, t=3))
        with pytest.raises(ValueError):
            metrics.mse_probability(a, b[:2])


class TestPrediction:
    def test_single_particle_at_origin(self):
        p = StaticParams(0.7, 1e-12, 0.5)
        pred = metrics.predict_final(ensemble(np.zeros((1, 4, 2))), p, np.random.default_rng(0))
        iu = np.triu_indices(4, 1)
        np.testing.assert_allclose(pred[iu], expit(0.7), rtol=1e-9)

    def test_small_sigma_contracts(self):
        p = StaticParams(0.3, 1e-12, 0.6)
        X = np.random.default_rng(1).normal(size=(1, 5, 2))
        pred = metrics.predict_final(ensemble(X), p, np.random.default_rng(2))
        np.testing.assert_allclose(pred, dlsn.edge_means(p, 0.6 * X[0]), rtol=1e-9)

    def test_matches_brute_force(self):
        p = StaticParams(0.2, 0.5, 0.8)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(3, 4, 2))
        logw = np.log([0.2, 0.5, 0.3])
        pred = metrics.predict_final(ensemble(X, logw), p, np.random.default_rng(4), R_rep=20_000)
        # oracle: draw a particle by weight, then one transition, 1e5 times
        idx = rng.choice(3, size=100_000, p=[0.2, 0.5, 0.3])
        means = dlsn.edge_means(p, dlsn.transition_sample(p, X[idx], rng))
        se = means.std(0, ddof=1) / math.sqrt(len(idx))
        iu = np.triu_indices(4, 1)
        np.testing.assert_array_less(np.abs(pred - means.mean(0))[iu], 3 * se[iu] + 5e-4)

    def test_posterior_means_weighted(self):
        p = StaticParams(0.0, 1.0, 0.5)
        X = np.random.default_rng(5).normal(size=(2, 3, 2))
        snap = ensemble(X, np.log([0.25, 0.75]))
        got = metrics.posterior_mean_probabilities([p], [snap])[0]
        want = 0.25 * dlsn.edge_means(p, X[0]) + 0.75 * dlsn.edge_means(p, X[1])
        np.testing.assert_allclose(got, want, rtol=1e-12)


class TestAAE:
    def test_certain_prediction(self):
        y = np.ones((3, 3)) - np.eye(3)
        np.testing.assert_array_equal(metrics.average_absolute_error(y, y, rng=np.random.default_rng(0)), 0)

    def test_half(self):
        y = np.zeros((6, 6))
        aae = metrics.average_absolute_error(y, np.full((6, 6), 0.5), R_rep=100_000, rng=np.random.default_rng(1))
        np.testing.assert_allclose(aae, 0.5, atol=3 * 0.5 / math.sqrt(100_000) * 1.5)

    def test_bounds_and_ordering(self):
        y = np.zeros((4, 4))
        y[0, 1] = y[1, 0] = 1
        rng = np.random.default_rng(2)
        means = []
        for p in np.linspace(0.0, 1.0, 6):
            pred = np.where(y > 0, p, 1 - p)
            a = metrics.average_absolute_error(y, pred, R_rep=4000, rng=rng)
            assert np.all((a >= 0) & (a <= 1))
            means.append(a.mean())
        assert np.all(np.diff(means) < 0)

    def test_poisson_draws(self):
        y = np.full((3, 3), 2.0)
        aae = metrics.average_absolute_error(y, y, R_rep=50_000, rng=np.random.default_rng(3), likelihood="poisson")
        # E|Y - 2| for Y ~ Poisson(2)
        k = np.arange(60)
        pmf = np.exp(k * math.log(2) - 2 - np.array([math.lgamma(v + 1) for v in k]))
        np.testing.assert_allclose(aae, np.sum(pmf * np.abs(k - 2)), atol=0.02)

    def test_rejects_zero_reps(self):
        with pytest.raises(ValueError):
            metrics.average_absolute_error(np.zeros((2, 2)), np.zeros((2, 2)), R_rep=0)

    def test_constant_rate_baseline(self):
        obs = np.zeros((2, 3, 3))
        obs[0, 0, 1] = obs[0, 1, 0] = 3
        assert metrics.constant_rate_baseline(obs) == pytest.approx(3 / 6)
