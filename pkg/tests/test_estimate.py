import json
import math
import unittest

import numpy as np

from context import hedvol, HedvolTestCase

from hedvol.baseline import AreParams, fit_are, fit_fe
from hedvol.diagnostics import moments
from hedvol.estimate import (HARVEY_SHIFT, SvareObjective, fit_svare, grid_sensitivity, profile_check,
                             recompute_states, sv_starting_values, svare_transform)
from hedvol.json_serdes import hedvol_json_decoder
from hedvol.optimizer import PENALTY, FitResult, Maximizer, NegLoglik, ParamTransform
from hedvol.svcore import SvareParams


class Quadratic:
    '''Concave loglik with known maximum m and curvature 1/s^2'''

    def __init__(self, m, s):
        self.m = np.asarray(m, dtype=float)
        self.s = np.asarray(s, dtype=float)

    def __call__(self, theta):
        return -0.5 * np.sum(((theta - self.m) / self.s)**2)


class FlatInSecond:
    def __call__(self, theta):
        return -0.5 * (theta[0] - 1.0)**2


class Rosenbrock:
    def __call__(self, theta):
        return -((1 - theta[0])**2 + 100 * (theta[1] - theta[0]**2)**2)


class TestParamTransform(HedvolTestCase):
    def test_round_trip(self):
        t = ParamTransform(["a", "b", "c"], ["free", "tanh", "exp"])
        rng = np.random.default_rng(51)
        for _ in range(100):
            theta = np.array([rng.normal(0, 10), rng.uniform(-0.99, 0.99), rng.uniform(1e-3, 50)])
            self.assertAllClose(theta, t.from_z(t.to_z(theta)), rtol=1e-12, atol=1e-12)

    def test_outside_domain(self):
        t = ParamTransform(["rho", "sigma"], ["tanh", "exp"])
        self.assertRaises(ValueError, lambda: t.to_z([1.0, 0.5]))
        self.assertRaises(ValueError, lambda: t.to_z([0.5, 0.0]))
        self.assertRaises(ValueError, lambda: ParamTransform(["a"], ["square"]))

    def test_report__variance_delta_method(self):
        t = ParamTransform(["sigma"], ["exp"])
        z = np.array([math.log(0.3)])
        values, se = t.report(z, np.array([[0.01]]), ["exp2"])
        self.assertAlmostEqual(0.09, values[0])
        self.assertAlmostEqual(2 * 0.09 * 0.1, se[0])

        values, se = t.report(z)
        self.assertAlmostEqual(0.3, values[0])
        self.assertIsNone(se)

    def test_negloglik__penalty(self):
        t = ParamTransform(["sigma"], ["exp"])
        f = NegLoglik(lambda theta: 1.0, t)
        self.assertEqual(-1.0, f(np.array([0.0])))
        self.assertEqual(PENALTY, f(np.array([math.log(1e-7)])))
        self.assertEqual(PENALTY, f(np.array([np.nan])))

        def bad(theta):
            raise ValueError("nope")
        self.assertEqual(PENALTY, NegLoglik(bad, t)(np.array([0.0])))


class TestMaximizer(HedvolTestCase):
    def test_maximize__quadratic(self):
        t = ParamTransform(["a", "b"], ["free", "free"])
        m = Maximizer(Quadratic([1.0, -2.0], [0.5, 2.0]), t)
        theta, loglik, z, cov_z, conv = m.maximize([0.0, 0.0])

        self.assertEqual("converged", conv["status"])
        self.assertAllClose([1.0, -2.0], theta, rtol=0, atol=1e-4)
        self.assertAlmostEqual(0.0, loglik, delta=1e-8)
        self.assertAllClose([0.25, 4.0], np.diag(cov_z), rtol=1e-3)
        self.assertGreater(conv["evaluations"], 0)

    def test_maximize__singular_hessian(self):
        t = ParamTransform(["a", "b"], ["free", "free"])
        _, _, _, cov_z, conv = Maximizer(FlatInSecond(), t).maximize([0.0, 0.0])
        self.assertEqual("converged", conv["status"])
        self.assertIsNone(cov_z)

    def test_maximize__max_iter(self):
        t = ParamTransform(["a", "b"], ["free", "free"])
        m = Maximizer(Rosenbrock(), t, max_iter=1)
        _, _, _, _, conv = m.maximize([-1.2, 1.0], hessian=False)
        self.assertEqual("max-iter", conv["status"])
        self.assertEqual(1, conv["iterations"])

    def test_maximize__bad_start(self):
        t = ParamTransform(["sigma"], ["exp"])
        m = Maximizer(lambda theta: 0.0, t)
        self.assertRaises(ValueError, lambda: m.maximize([-1.0]))


class TestFitResult(HedvolTestCase):
    def _fit(self):
        p = AreParams(1.0, [0.5], 0.5, 0.1, 0.2)
        return FitResult("are", p, ["beta0", "x1", "rho", "sigma2_eta", "sigma2"],
                         [1.0, 0.5, 0.5, 0.1, 0.2], [0.1, 0.01, 0.05, 0.02, 0.01],
                         -8785.624, 47, 13955, {"status": "converged"}, ["a", "b"],
                         [1.1, 0.9], 0.95, forecast_u=-0.05, covariate_names=["x1"])

    def test_information_criteria(self):
        fit = self._fit()
        self.assertAlmostEqual(17665.248, fit.aic, places=6)
        self.assertAlmostEqual(18019.8, fit.bic, delta=0.05)

    def test_predict(self):
        fit = self._fit()
        self.assertAllClose([0.95, 0.95 + 0.5 * 2.0], fit.predict([[0.0], [2.0]]))
        self.assertAllClose([0.9 + 0.5], fit.predict([[1.0]], t=[1]))
        self.assertRaises(hedvol.svcore.CovariateMismatchError, lambda: fit.predict([[1.0, 2.0]]))

    def test_json(self):
        fit = self._fit()
        obj = json.loads(fit.to_json(), object_hook=hedvol_json_decoder)
        self.assertIsInstance(obj, FitResult)
        self.assertIsInstance(obj.params, AreParams)
        self.assertAllClose(fit.estimates, obj.estimates)
        self.assertEqual(fit.time_labels, obj.time_labels)
        self.assertAlmostEqual(fit.bic, obj.bic)

        missing_se = FitResult.from_json_obj(dict(fit.to_json_obj(), se=None))
        self.assertFalse(missing_se.se_available)
        self.assertIsNone(missing_se.std_error("rho"))


class TestSvStartingValues(HedvolTestCase):
    def test_harvey_shift(self):
        eps = np.random.default_rng(61).standard_normal(100000)
        self.assertAlmostEqual(0.0, np.mean(np.log(eps**2)) + HARVEY_SHIFT, delta=0.03)

    def test_homoscedastic(self):
        truth = AreParams(1.0, [0.2], 0.7, 0.05, 0.25)
        d = self._simulate("are", truth, 100, 50, seed=62).dataset
        are = fit_are(d)
        start = sv_starting_values(d, are, ma_window=1)

        self.assertLess(abs(start.delta), 0.35)
        self.assertAlmostEqual(math.log(0.25), start.mu_h, delta=0.15)
        self.assertEqual(are.params.rho, start.rho)
        self.assertAllClose(are.params.beta, start.beta)

    def test_persistent_volatility(self):
        d = self._simulate("svare", self._svare_params(), 150, 40, seed=63).dataset
        start = sv_starting_values(d, fit_are(d))
        self.assertGreater(start.delta, 0.3)
        self.assertLess(start.delta, 1.0)
        self.assertGreaterEqual(start.sigma_nu, 0.05)

    def test_bad_window(self):
        d = self._simulate("are", AreParams(1.0, [0.2], 0.5, 0.05, 0.25), 10, 5, seed=64).dataset
        are = fit_are(d)
        self.assertRaises(ValueError, lambda: sv_starting_values(d, are, ma_window=2))


class TestFitSvare(HedvolTestCase):
    def setUp(self):
        super(TestFitSvare, self).setUp()
        p = self._svare_params(rho=0.6, sigma_eta=0.2, alpha=-0.5, delta=0.7, sigma_nu=0.3)
        self.data = self._simulate("svare", p, 30, 20, seed=71).dataset

    def test_fit_svare__improves_on_start(self):
        are = fit_are(self.data)
        start = sv_starting_values(self.data, are)
        fit = fit_svare(self.data, start=start, n_u=15, n_h=15)

        start_loglik = hedvol.svcore.svare_loglik(self.data, start, 15, 15)
        self.assertGreaterEqual(fit.loglik, start_loglik - 1e-8)
        self.assertEqual(["beta0", "x1", "rho", "sigma2_eta", "alpha", "delta", "sigma2_nu"], fit.names)
        self.assertEqual(1 + 6, fit.n_params)
        self.assertEqual({"n_u": 15, "n_h": 15}, {k: fit.options[k] for k in ("n_u", "n_h")})
        self.assertEqual(len(self.data.times), len(fit.time_effects))
        self.assertAlmostEqual(fit.params.sigma_nu**2, fit.estimate("sigma2_nu"), places=10)

        # Recomputing on the same data gives the fit's own states
        states = recompute_states(self.data, FitResult.from_json_obj(fit.to_json_obj()))
        self.assertAllClose(fit.states.smoothed_u, states.smoothed_u)

    def test_profile_and_grid_sensitivity(self):
        fit = fit_svare(self.data, n_u=11, n_h=11)

        curve = profile_check(self.data, fit, "delta", span=1.0, points=7)
        self.assertEqual(7, len(curve.values))
        self.assertTrue(curve.peak_at_mle)
        self.assertEqual(2, len(curve.to_frame().columns))
        self.assertRaises(KeyError, lambda: profile_check(self.data, fit, "gamma"))

        frame = grid_sensitivity(self.data, fit, sizes=(9, 13))
        self.assertEqual([9, 13], list(frame["n"]))
        self.assertTrue(np.all(np.isfinite(frame["loglik"])))

    def test_fit_svare__recovers_truth(self):
        truth = self._svare_params(rho=0.6, sigma_eta=0.2, alpha=-0.5, delta=0.7, sigma_nu=0.3)
        d = self._simulate("svare", truth, 60, 40, seed=72).dataset
        fit = fit_svare(d, ftol=0.0, gtol=1e-4)
        self.assertTrue(fit.converged)
        self.assertTrue(fit.se_available)

        expected = [3.0, 0.2, 0.6, 0.04, -0.5, 0.7, 0.09]
        z_scores = np.abs(fit.estimates - expected) / fit.se
        self.assertTrue(np.all(z_scores < 4), z_scores)
        self.assertGreaterEqual(np.sum(z_scores < 3), len(expected) - 1, z_scores)

        # Score at the optimum, on the fit's own grid
        m = Maximizer(SvareObjective(d, fit.options["n_u"], fit.options["n_h"]), svare_transform(d.k))
        grad = m.gradient(m.transform.to_z(fit.params.to_vector()))
        self.assertLess(np.max(np.abs(grad)), 10 * 1e-4)

    def test_transform_names(self):
        t = svare_transform(2)
        self.assertEqual(["beta0", "beta1", "beta2", "rho", "sigma_eta", "alpha", "delta", "sigma_nu"],
                         t.names)
        p = self._svare_params(beta=[0.1, 0.2])
        self.assertAllClose(p.to_vector(), t.from_z(t.to_z(p.to_vector())), rtol=1e-12)


class TestSvareVersusBaselines(HedvolTestCase):
    def test_replicates__kurtosis_and_forecast(self):
        p = self._svare_params()
        are_b2, svare_b2, svare_err, fe_err = [], [], [], []
        for seed in (81, 82, 83):
            sim = self._simulate("svare", p, 40, 30, seed=seed)
            are = fit_are(sim.dataset)
            svare = fit_svare(sim.dataset, n_u=15, n_h=21, hessian=False)

            are_b2.append(moments(are.states.level1_residuals).b2)
            svare_b2.append(moments(svare.states.level1_std_residuals).b2)
            self.assertLess(svare_b2[-1], are_b2[-1], f'seed={seed}')

            # Best predictor of the next time effect given the true path
            target = p.beta0 + p.rho * sim.u[-1]
            svare_err.append(svare.forecast_effect - target)
            fe_err.append(fit_fe(sim.dataset).forecast_effect - target)

        self.assertLess(np.mean(svare_b2), 0.5 * np.mean(are_b2))

        svare_rmse = math.sqrt(np.mean(np.square(svare_err)))
        fe_rmse = math.sqrt(np.mean(np.square(fe_err)))
        self.assertLess(svare_rmse, 1.5 * fe_rmse)
        self.assertLess(svare_rmse, 0.2)


if __name__ == '__main__':
    unittest.main()
