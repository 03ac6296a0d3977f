import math
import unittest

import numpy as np
from scipy import stats

from context import hedvol, HedvolTestCase

from hedvol.baseline import (AreParams, FeParams, RankDeficientError, are_loglik, fit_are,
                             fit_fe)
from hedvol.dataset import Dataset
from hedvol.util import normal_logpdf


def mvn_loglik(d, p):
    '''Brute-force ARE loglik from the full covariance of the stacked rows'''
    y, X, g = d.stacked
    gamma = p.sigma2_eta / (1 - p.rho**2) * p.rho**np.abs(g[:, None] - g[None, :])
    cov = gamma + p.sigma2 * np.eye(len(y))
    return stats.multivariate_normal.logpdf(y, mean=p.beta0 + X @ p.beta, cov=cov)


class TestFe(HedvolTestCase):
    def test_fit_fe__single_period(self):
        y = [1.0, 2.0, 4.0, 5.0]
        fit = fit_fe(self._dataset([y]))

        self.assertEqual(["beta0[1]", "sigma2"], fit.names)
        self.assertAlmostEqual(3.0, fit.estimate("beta0[1]"))
        self.assertAlmostEqual(np.var(y), fit.estimate("sigma2"))
        self.assertEqual(2, fit.n_params)
        self.assertAlmostEqual(normal_logpdf(np.array(y), 3.0, np.var(y)).sum(), fit.loglik)

    def test_fit_fe__recovers_slopes(self):
        truth = FeParams([1.0, 1.2, 0.9, 1.5], [0.3, -0.2], 0.04)
        d = self._simulate("fe", truth, 4, 50, seed=5).dataset
        fit = fit_fe(d)

        self.assertEqual(4 + 2 + 1, fit.n_params)
        self.assertEqual("converged", fit.convergence["status"])
        for name, value in zip(d.covariate_names, truth.beta):
            self.assertLess(abs(fit.estimate(name) - value), 3 * fit.std_error(name))
        self.assertAllClose(fit.params.beta0_t, fit.time_effects)
        self.assertEqual(fit.params.beta0_t[-1], fit.forecast_effect)

    def test_fit_fe__rank_deficient(self):
        d = Dataset(["1", "2"], [[1.0, 2.0], [3.0, 4.0]], [np.ones((2, 1)), np.ones((2, 1))], ["c"])
        with self.assertRaises(RankDeficientError) as cm:
            fit_fe(d)
        self.assertIn("collinear", str(cm.exception))

    def test_fit_fe__residuals(self):
        truth = FeParams([1.0, 2.0], [0.5], 0.1)
        d = self._simulate("fe", truth, 2, 10, seed=6).dataset
        fit = fit_fe(d)
        residuals = np.concatenate(fit.states.level1_residuals)
        self.assertAlmostEqual(0.0, residuals.mean(), delta=1e-12)
        self.assertAlmostEqual(fit.estimate("sigma2"), residuals @ residuals / d.n_total)


class TestAreLoglik(HedvolTestCase):
    def test_no_random_effect_is_pooled_normal(self):
        rng = np.random.default_rng(41)
        d = Dataset(["1", "2", "3"], [rng.standard_normal(n) for n in (3, 5, 2)],
                    [rng.standard_normal((n, 1)) for n in (3, 5, 2)], ["x1"])
        p = AreParams(0.2, [0.7], 0.0, 0.0, 1.3)

        y, X, _ = d.stacked
        pooled = normal_logpdf(y - 0.2 - X @ p.beta, 0.0, 1.3).sum()
        self.assertAlmostEqual(pooled, are_loglik(d, p).loglik, delta=1e-10 * abs(pooled))

    def test_two_single_rows_bivariate(self):
        d = self._dataset([[0.4], [-0.3]])
        p = AreParams(0.1, [], 0.6, 0.5, 0.2)
        var = 0.5 / (1 - 0.36)
        cov = [[var + 0.2, 0.6 * var], [0.6 * var, var + 0.2]]
        exact = stats.multivariate_normal.logpdf([0.3, -0.4], mean=[0, 0], cov=cov)
        self.assertAlmostEqual(exact, are_loglik(d, p).loglik, places=10)

    def test_matches_full_covariance(self):
        rng = np.random.default_rng(42)
        for T in (2, 3, 4):
            sizes = rng.integers(1, 4, size=T)
            d = Dataset([str(t) for t in range(T)], [rng.standard_normal(n) for n in sizes],
                        [rng.standard_normal((n, 2)) for n in sizes], ["x1", "x2"])
            p = AreParams(rng.standard_normal(), rng.standard_normal(2), rng.uniform(-0.9, 0.9),
                          rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0))
            self.assertAlmostEqual(mvn_loglik(d, p), are_loglik(d, p).loglik, places=9, msg=f'T={T}')

    def test_within_group_order(self):
        rng = np.random.default_rng(43)
        p = AreParams(1.0, [0.5], 0.7, 0.1, 0.3)
        d = self._simulate("are", p, 5, 6, seed=9).dataset
        order = [rng.permutation(n) for n in d.group_sizes]
        shuffled = Dataset(d.times, [y[o] for y, o in zip(d.responses, order)],
                           [X[o] for X, o in zip(d.designs, order)], d.covariate_names)
        a = are_loglik(d, p).loglik
        self.assertAlmostEqual(a, are_loglik(shuffled, p).loglik, delta=1e-10 * abs(a))

    def test_smoother_variances(self):
        p = AreParams(1.0, [0.5], 0.7, 0.1, 0.3)
        d = self._simulate("are", p, 12, 3, seed=10).dataset
        out = are_loglik(d, p)
        self.assertTrue(np.all(out.smoothed_var <= out.filtered_var + 1e-15))
        self.assertEqual(out.smoothed_u[-1], out.filtered_u[-1])
        self.assertEqual(d.T + 1, len(out.predicted_u))
        self.assertAlmostEqual(p.rho * out.filtered_u[-1], out.predicted_u[-1])

    def test_nonstationary(self):
        d = self._dataset([[1.0], [2.0]])
        self.assertRaises(ValueError, lambda: are_loglik(d, AreParams(0.0, [], 1.0, 0.1, 0.1)))
        self.assertRaises(ValueError, lambda: are_loglik(d, AreParams(0.0, [], 0.5, 0.1, 0.0)))


class TestFitAre(HedvolTestCase):
    def test_fit_are__recovers_rho(self):
        truth = AreParams(2.0, [0.3], 0.8, 0.022, 0.226)
        d = self._simulate("are", truth, 300, 20, seed=12).dataset
        fit = fit_are(d)

        self.assertEqual("converged", fit.convergence["status"])
        self.assertEqual(["beta0", "x1", "rho", "sigma2_eta", "sigma2"], fit.names)
        self.assertEqual(5, fit.n_params)
        self.assertLess(abs(fit.estimate("rho") - 0.8), 0.1)
        self.assertTrue(fit.se_available)

        # sigma2 rows are reported as variances
        self.assertAlmostEqual(fit.params.sigma2, fit.estimate("sigma2"), places=12)

        residuals = np.concatenate(fit.states.level1_residuals)
        self.assertLess(abs(residuals.mean()), 1e-4)

    def test_fit_are__no_random_effect(self):
        truth = AreParams(1.0, [0.5], 0.3, 0.0, 0.2)
        d = self._simulate("are", truth, 15, 10, seed=13).dataset
        fit = fit_are(d)
        self.assertTrue(math.isfinite(fit.loglik))
        self.assertGreaterEqual(fit.estimate("sigma2_eta"), 0.0)

    def test_fit_are__forecast(self):
        truth = AreParams(2.0, [0.3], 0.8, 0.05, 0.1)
        d = self._simulate("are", truth, 20, 10, seed=14).dataset
        fit = fit_are(d)
        self.assertAlmostEqual(fit.params.beta0 + fit.forecast_u, fit.forecast_effect)
        self.assertAlmostEqual(fit.forecast_effect + 0.5 * fit.params.beta[0],
                               fit.predict([[0.5]])[0])


if __name__ == '__main__':
    unittest.main()
