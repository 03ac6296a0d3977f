import math
import unittest

import numpy as np
from scipy import integrate, stats

from context import hedvol, HedvolTestCase

from hedvol.baseline import AreParams, FeParams
from hedvol.quadrature import build_grid
from hedvol.simulate import (OracleSizeError, SimConfig, oracle_loglik_mc, oracle_loglik_tensor,
                             semester_labels, simulate)
from hedvol.svcore import SvareParams, forward


class TestSimulate(HedvolTestCase):
    def test_semester_labels(self):
        self.assertEqual(["1998-1", "1998-2", "1999-1"], semester_labels(3))
        self.assertEqual("2011-2", semester_labels(28)[-1])

    def test_deterministic(self):
        p = self._svare_params()
        a = self._simulate("svare", p, 6, [3, 1, 4, 1, 5, 9], seed=101)
        b = self._simulate("svare", p, 6, [3, 1, 4, 1, 5, 9], seed=101)
        self.assertEqual(a.dataset, b.dataset)
        self.assertTrue(np.array_equal(a.h, b.h))

        c = self._simulate("svare", p, 6, [3, 1, 4, 1, 5, 9], seed=102)
        self.assertNotEqual(a.dataset, c.dataset)

    def test_covariates_leave_latent_paths(self):
        p = self._svare_params()
        a = self._simulate("svare", p, 5, 4, seed=103)
        b = self._simulate("svare", p, 5, 4, seed=103, covariates={"kind": "bernoulli", "p": 0.3})
        self.assertTrue(np.array_equal(a.u, b.u))
        self.assertTrue(np.array_equal(a.h, b.h))
        self.assertTrue(set(np.unique(b.dataset.stacked[1])) <= {0.0, 1.0})

    def test_fixed_design(self):
        rows = [[float(i)] for i in range(6)]
        r = self._simulate("svare", self._svare_params(), 2, 3, seed=104,
                           covariates={"kind": "fixed", "rows": rows})
        self.assertAllClose(rows, r.dataset.stacked[1])

        self.assertRaises(ValueError, lambda: self._simulate(
            "svare", self._svare_params(), 2, 4, seed=104, covariates={"kind": "fixed", "rows": rows}))

    def test_config_errors(self):
        p = self._svare_params()
        self.assertRaises(ValueError, lambda: SimConfig("svare", p, 5, 4, None))
        self.assertRaises(ValueError, lambda: SimConfig("are", p, 5, 4, 1))
        self.assertRaises(ValueError, lambda: SimConfig("svare", p, 5, [1, 2], 1))
        self.assertRaises(ValueError, lambda: SimConfig("fe", FeParams([1.0], [0.2], 0.1), 2, 4, 1))
        self.assertRaises(ValueError, lambda: SimConfig("svare", p.replace(delta=1.0), 5, 4, 1))

    def test_config_json(self):
        cfg = SimConfig("are", AreParams(1.0, [0.2], 0.5, 0.1, 0.2), 4, [1, 2, 3, 4], 7)
        cfg2 = cfg.copy()
        self.assertEqual(cfg.to_json_obj(), cfg2.to_json_obj())
        self.assertEqual(simulate(cfg).dataset, simulate(cfg2).dataset)

    def test_stationary_start(self):
        p = self._svare_params(rho=0.8, sigma_eta=0.3)
        u1 = [self._simulate("svare", p, 1, 1, seed=s).u[0] for s in range(3000)]
        var = 0.09 / (1 - 0.64)
        self.assertAlmostEqual(var, np.var(u1), delta=0.1 * var)

    def test_white_noise_effect(self):
        p = self._svare_params(rho=0.0)
        u = self._simulate("svare", p, 400, 1, seed=105).u
        r1 = np.corrcoef(u[1:], u[:-1])[0, 1]
        self.assertLess(abs(r1), 3 / math.sqrt(400))

    def test_degenerate_volatility(self):
        sigma = 0.4
        p = self._svare_params(alpha=2 * math.log(sigma), delta=0.0, sigma_nu=1e-4)
        r = self._simulate("svare", p, 100, 1000, seed=106)
        y, X, g = r.dataset.stacked
        e = y - p.beta0 - X @ p.beta - r.u[g]
        self.assertAlmostEqual(sigma**2, np.var(e), delta=0.05 * sigma**2)

    def test_volatility_clustering_kurtosis(self):
        p = self._svare_params()
        r = self._simulate("svare", p, 150, 40, seed=107)
        y, X, g = r.dataset.stacked
        e = y - p.beta0 - X @ p.beta - r.u[g]
        self.assertGreater(stats.kurtosis(e), 0.0)

    def test_fe_and_are(self):
        fe = self._simulate("fe", FeParams([1.0, 2.0, 3.0], [0.5], 0.01), 3, 5, seed=108)
        self.assertTrue(np.array_equal(np.zeros(3), fe.u))
        self.assertAllClose([math.log(0.01)] * 3, fe.h)

        are = self._simulate("are", AreParams(1.0, [0.5], 0.5, 0.1, 0.2), 3, 5, seed=108)
        self.assertEqual(("x1",), are.dataset.covariate_names)
        self.assertAllClose([math.log(0.2)] * 3, are.h)


class TestOracles(HedvolTestCase):
    def test_tensor__matches_forward_single_period(self):
        rng = np.random.default_rng(111)
        d, p = self._random_instance(rng, 1)
        g = build_grid(p, 9, 7)
        self.assertAlmostEqual(forward(d, p, g)[0], oracle_loglik_tensor(d, p, g),
                               delta=1e-11 * max(1.0, abs(forward(d, p, g)[0])))

    def test_tensor__size_guard(self):
        rng = np.random.default_rng(112)
        d, p = self._random_instance(rng, 4)
        self.assertRaises(OracleSizeError, lambda: oracle_loglik_tensor(d, p, build_grid(p, 5, 5)))

        d, p = self._random_instance(rng, 2)
        self.assertRaises(OracleSizeError, lambda: oracle_loglik_tensor(d, p, build_grid(p, 11, 5)))

    def test_mc__single_observation(self):
        p = SvareParams(0.0, [], 0.5, 0.3, -0.5, 0.5, 0.3)
        d = self._dataset([[0.4]])
        var_u = 0.09 / 0.75
        sd_h = 0.3 / math.sqrt(0.75)

        def integrand(h):
            return (stats.norm.pdf(0.4, 0.0, math.sqrt(var_u + math.exp(h)))
                    * stats.norm.pdf(h, p.mu_h, sd_h))
        exact = math.log(integrate.quad(integrand, p.mu_h - 12 * sd_h, p.mu_h + 12 * sd_h,
                                        epsabs=1e-13, epsrel=1e-12)[0])

        estimate, se = oracle_loglik_mc(d, p, 200000, seed=5)
        self.assertLess(abs(estimate - exact), 4 * se)

    def test_mc__se_shrinks(self):
        p = SvareParams(0.0, [], 0.5, 0.3, -0.5, 0.5, 0.3)
        d = self._dataset([[0.4, -0.1]])
        _, se1 = oracle_loglik_mc(d, p, 400000, seed=6, batches=400)
        _, se2 = oracle_loglik_mc(d, p, 800000, seed=7, batches=400)
        self.assertGreater(se1 / se2, 1.2)
        self.assertLess(se1 / se2, 1.65)

    def test_mc__matches_fine_grid(self):
        p = SvareParams(0.0, [], 0.5, 0.3, -0.2, 0.5, 0.3)
        d = self._dataset([[0.1, -0.3], [0.5], [0.0, 0.2], [-0.4]])
        loglik, _ = forward(d, p, build_grid(p, 61, 61, width=6.0))
        estimate, se = oracle_loglik_mc(d, p, 200000, seed=8)
        self.assertLess(abs(estimate - loglik), 4 * se)


if __name__ == '__main__':
    unittest.main()
