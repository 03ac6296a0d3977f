#!/usr/bin/env python3

import logging
import math
from optparse import OptionParser

from hedvol.estimate import fit_svare
from hedvol.simulate import SimConfig, simulate
from hedvol.svcore import SvareParams

parser = OptionParser()

parser.add_option("-r", "--replicates", type=int, default=30, metavar="N",
                  help="Number of seeded simulations (default 30)")

parser.add_option("-T", "--periods", type=int, default=150, metavar="T",
                  help="Periods per simulated dataset (default 150)")

parser.add_option("-n", "--group-size", type=int, default=40, metavar="N",
                  help="Rows per period (default 40)")

parser.add_option("--points", type=int, default=None, metavar="N",
                  help="Quadrature points per axis (default: spacing rule)")

parser.add_option("--seed", type=int, default=1, metavar="SEED",
                  help="Seed of the first replicate; replicate i uses SEED+i")

parser.add_option("--poolsize", type=int, default=1, metavar="N",
                  help="Subprocesses for numerical derivatives (default 1)")

parser.add_option("--debug", action='store_true', default=False)


(options, args) = parser.parse_args()

if options.debug:
    logging.basicConfig(level=logging.DEBUG)

logging.debug(f'options: {options}')

truth = SvareParams(beta0=3.0, beta=[0.2, -0.1, 0.05], rho=0.848, sigma_eta=math.sqrt(0.021),
                    alpha=-0.142, delta=0.931, sigma_nu=math.sqrt(0.158))
true_values = {
    "beta0": truth.beta0, "x1": 0.2, "x2": -0.1, "x3": 0.05,
    "rho": truth.rho, "sigma2_eta": truth.sigma_eta**2, "alpha": truth.alpha,
    "delta": truth.delta, "sigma2_nu": truth.sigma_nu**2,
}

covered = {k: 0 for k in true_values}
usable = 0
for i in range(options.replicates):
    cfg = SimConfig("svare", truth, options.periods, options.group_size, options.seed + i)
    d = simulate(cfg).dataset
    fit = fit_svare(d, n_u=options.points, n_h=options.points, poolsize=options.poolsize)
    if not fit.se_available:
        logging.warning(f'Replicate {i}: no standard errors ({fit.convergence["status"]})')
        continue

    usable += 1
    for name, value in true_values.items():
        if abs(fit.estimate(name) - value) <= 3 * fit.std_error(name):
            covered[name] += 1
    print(f'replicate {i}: loglik {fit.loglik:.3f} ({fit.convergence["status"]})')

print(f'{usable} of {options.replicates} replicates had standard errors')
for name, count in covered.items():
    print(f'{name:>12}: {count}/{usable} within 3 SE')
