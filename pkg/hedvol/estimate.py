'''Maximum likelihood for the SVARE model

Starting values come from an ARE fit: log squared level-1 residuals,
recentered by +1.27, averaged per period and smoothed, give a rough
log-volatility path whose AR(1) regression seeds (alpha, delta,
sigma_nu).
'''
import logging
from multiprocessing import Pool

import numpy as np
import pandas as pd
import statsmodels.api as sm

from .baseline import AreObjective, FeOutput, are_loglik, are_transform, fit_are
from .optimizer import FitResult, Maximizer, ParamTransform
from .quadrature import DEFAULT_WIDTH, build_grid, default_point_counts
from .svcore import SvareParams, state_estimates, svare_loglik

# E(log eps^2) = -1.27 for standard normal eps
HARVEY_SHIFT = 1.27
EPS2_FLOOR = 1e-12

DEFAULT_MA_WINDOW = 3
DELTA_START_BOUND = 0.95
SIGMA_NU_START_FLOOR = 0.05
SIGMA_ETA_START_FLOOR = 1e-3


def svare_transform(k):
    names = (["beta0"] + [f'beta{i + 1}' for i in range(k)]
             + ["rho", "sigma_eta", "alpha", "delta", "sigma_nu"])
    return ParamTransform(names, ["free"] * (k + 1) + ["tanh", "exp", "free", "tanh", "exp"])


def _svare_report_kinds(k):
    return ["free"] * (k + 1) + ["tanh", "exp2", "free", "tanh", "exp2"]


class SvareObjective:
    '''Picklable quadrature loglik on a fixed point count'''

    def __init__(self, d, n_u, n_h, width=DEFAULT_WIDTH):
        self.d = d
        self.n_u = n_u
        self.n_h = n_h
        self.width = width

    def __call__(self, theta):
        return svare_loglik(self.d, SvareParams.from_vector(theta), self.n_u, self.n_h, self.width)


def sv_starting_values(d, are_fit, ma_window=DEFAULT_MA_WINDOW):
    '''SvareParams to start the SVARE optimizer from

    * d: the Dataset the ARE model was fit on
    * are_fit: FitResult of fit_are (its states carry the residuals)
    * ma_window: odd width of the centered moving average; the ends use
      shrinking windows

    beta0, beta, rho and sigma_eta are copied from the ARE fit.
    '''
    if ma_window < 1 or ma_window % 2 == 0:
        raise ValueError(f'ma_window must be a positive odd integer, got {ma_window}')

    h_star = np.empty(d.T)
    for t, eps in enumerate(are_fit.states.level1_residuals):
        eps2 = np.asarray(eps)**2
        if np.any(eps2 < EPS2_FLOOR):
            logging.warning(f'Period "{d.times[t]}": {np.sum(eps2 < EPS2_FLOOR)} residuals '
                            f'clamped at {EPS2_FLOOR} before taking logs')
            eps2 = np.maximum(eps2, EPS2_FLOOR)
        h_star[t] = np.mean(np.log(eps2)) + HARVEY_SHIFT

    h_star = pd.Series(h_star).rolling(ma_window, center=True, min_periods=1).mean().to_numpy()

    if d.T >= 4:
        ols = sm.OLS(h_star[1:], sm.add_constant(h_star[:-1])).fit()
        alpha, delta = ols.params
        sigma_nu = float(np.sqrt(ols.scale))
    else:
        alpha, delta, sigma_nu = h_star.mean(), 0.0, float(np.std(h_star))

    if abs(delta) > DELTA_START_BOUND:
        delta = float(np.clip(delta, -DELTA_START_BOUND, DELTA_START_BOUND))
        alpha = h_star.mean() * (1 - delta)
    sigma_nu = max(sigma_nu, SIGMA_NU_START_FLOOR)

    p = are_fit.params
    start = SvareParams(p.beta0, p.beta, p.rho, max(np.sqrt(p.sigma2_eta), SIGMA_ETA_START_FLOOR),
                        alpha, delta, sigma_nu)
    logging.info(f'SVARE starting values: {start}')
    return start.validate()


def _svare_fit_result(d, p, z, cov_z, convergence, transform, options):
    g = build_grid(p, options["n_u"], options["n_h"], options["width"])
    est = state_estimates(d, p, g)
    estimates, se = transform.report(z, cov_z, _svare_report_kinds(d.k))
    forecast_u = float(est.predicted_u[-1])

    names = ["beta0"] + list(d.covariate_names) + ["rho", "sigma2_eta", "alpha", "delta", "sigma2_nu"]
    return FitResult("svare", p, names, estimates, se, est.loglik, d.k + 6, d.n_total, convergence,
                     d.times, p.beta0 + est.smoothed_u, p.beta0 + forecast_u,
                     forecast_u=forecast_u, covariate_names=d.covariate_names,
                     options=options, states=est)


def fit_svare(d, start=None, n_u=None, n_h=None, width=DEFAULT_WIDTH, poolsize=1,
              ma_window=DEFAULT_MA_WINDOW, hessian=True, **opts):
    '''Maximum likelihood fit of the SVARE model

    * d: Dataset
    * start: SvareParams; None fits ARE first and uses sv_starting_values
    * n_u, n_h: grid point counts; None picks default_point_counts at
      the starting values.  Counts stay fixed for the whole fit while
      the grid limits follow the parameters.
    * width: grid half-width in stationary standard deviations
    * poolsize: worker processes for numerical derivatives
    * hessian: skip the standard errors when False
    * opts: gtol, ftol, max_iter for the optimizer
    '''
    if start is None:
        start = sv_starting_values(d, fit_are(d, poolsize=poolsize, **opts), ma_window)
    start.validate()

    if n_u is None or n_h is None:
        default_u, default_h = default_point_counts(start, width)
        n_u = n_u or default_u
        n_h = n_h or default_h
    logging.info(f'Fitting SVARE on {d} with n_u={n_u}, n_h={n_h}, width={width}')

    transform = svare_transform(d.k)
    m = Maximizer(SvareObjective(d, n_u, n_h, width), transform, poolsize=poolsize, **opts)
    theta, loglik, z, cov_z, convergence = m.maximize(start.to_vector(), hessian=hessian)

    options = dict(opts, n_u=n_u, n_h=n_h, width=width, ma_window=ma_window)
    return _svare_fit_result(d, SvareParams.from_vector(theta), z, cov_z,
                             convergence, transform, options)


def _model_parts(d, fit):
    '''(loglik callable, transform, report kinds) for a fitted model'''
    if fit.model == "svare":
        o = fit.options
        return (SvareObjective(d, o["n_u"], o["n_h"], o.get("width", DEFAULT_WIDTH)),
                svare_transform(d.k), _svare_report_kinds(d.k))
    if fit.model == "are":
        transform = are_transform(d.k)
        return AreObjective(d), transform, transform.kinds[:-2] + ["exp2", "exp2"]
    raise ValueError(f'No likelihood profile for model "{fit.model}"')


class ProfileCurve:
    '''loglik along one reported parameter, others held at the MLE'''

    def __init__(self, param, mle, values, logliks):
        self.param = param
        self.mle = mle
        self.values = np.asarray(values)
        self.logliks = np.asarray(logliks)

    @property
    def step(self):
        return float(self.values[1] - self.values[0]) if len(self.values) > 1 else 0.0

    @property
    def argmax(self):
        return float(self.values[np.nanargmax(self.logliks)])

    @property
    def peak_at_mle(self):
        return abs(self.argmax - self.mle) <= abs(self.step) * (1 + 1e-9)

    def to_frame(self):
        return pd.DataFrame({"value": self.values, "loglik": self.logliks})


class _ProfilePoint:
    def __init__(self, loglik, transform, kinds, z_hat, index):
        self.loglik = loglik
        self.transform = transform
        self.kinds = kinds
        self.reported = transform.from_z(z_hat, kinds)
        self.index = index

    def __call__(self, value):
        reported = self.reported.copy()
        reported[self.index] = value
        try:
            theta = self.transform.from_z(self.transform.to_z(reported, self.kinds))
            return self.loglik(theta)
        except ValueError as e:
            logging.debug(f'Profile point {value} invalid: {e}')
            return np.nan


def profile_check(d, fit, param, span=2.0, points=11, poolsize=1):
    '''Re-evaluate the loglik on a grid of one parameter

    * param: a reported parameter name of fit (e.g. "delta", "sigma2_nu")
    * span: half-width of the grid in standard errors (10% of the
      estimate, at least 0.01, when no SEs are available)
    * points: number of grid values; made odd so the MLE is on the grid
    '''
    if param not in fit.names:
        raise KeyError(f'Unknown parameter "{param}"; have {fit.names}')
    points = max(3, int(points) | 1)

    loglik, transform, kinds = _model_parts(d, fit)
    index = fit.names.index(param)
    mle = fit.estimate(param)
    se = fit.std_error(param)
    if not se:
        se = max(0.1 * abs(mle), 0.01)

    values = mle + span * se * np.linspace(-1, 1, points)
    f = _ProfilePoint(loglik, transform, kinds, transform.to_z(fit.params.to_vector()), index)

    if poolsize == 1:
        logliks = list(map(f, values))
    else:
        with Pool(poolsize) as p:
            logliks = p.map(f, values)

    curve = ProfileCurve(param, mle, values, logliks)
    if not curve.peak_at_mle:
        logging.warning(f'Profile of {param} peaks at {curve.argmax:.6g}, MLE is {mle:.6g}')
    return curve


def grid_sensitivity(d, fit, sizes=(41, 51, 61), poolsize=1, **opts):
    '''Refit an SVARE model from its MLE with n_u = n_h = each size

    Returns a DataFrame with one row per size: n, loglik, status and
    every reported estimate.
    '''
    if fit.model != "svare":
        raise ValueError('grid_sensitivity needs an SVARE fit')

    rows = []
    for n in sizes:
        refit = fit_svare(d, start=fit.params, n_u=n, n_h=n,
                          width=fit.options.get("width", DEFAULT_WIDTH),
                          poolsize=poolsize, hessian=False, **opts)
        row = {"n": n, "loglik": refit.loglik, "status": refit.convergence["status"]}
        row.update(zip(refit.names, refit.estimates))
        rows.append(row)
        logging.info(f'Grid {n}x{n}: loglik={refit.loglik:.6f}')
    return pd.DataFrame(rows)


def recompute_states(d, fit):
    '''Latent states and residuals of a fit (e.g. one loaded from JSON)
    on the Dataset it was fit to, without re-optimizing'''
    if fit.model == "svare":
        o = fit.options
        g = build_grid(fit.params, o["n_u"], o["n_h"], o.get("width", DEFAULT_WIDTH))
        return state_estimates(d, fit.params, g)
    if fit.model == "are":
        return are_loglik(d, fit.params)

    y, X, grp = d.stacked
    p = fit.params
    return FeOutput(d.times, p.beta0_t, d.ungroup(y - p.beta0_t[grp] - X @ p.beta))
