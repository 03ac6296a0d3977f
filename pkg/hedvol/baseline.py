'''The FE hedonic regression and the ARE multilevel model

The ARE likelihood is exact: the n_t rows of a period collapse to their
mean and within-period sum of squares, and the random effect u_t is
run through a scalar Kalman filter on the period means.
'''
import logging
import math

import numpy as np
import pandas as pd
import scipy.linalg

from .json_serdes import JSONSerDes
from .optimizer import FitResult, Maximizer, ParamTransform
from .util import LOG_2PI, check_positive, check_stationary, normal_logpdf

# Relative tolerance on |R_ii| for the rank of the FE design.
RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    '''Design matrix is not of full column rank'''
    pass


class FeParams(JSONSerDes):
    JSON_CLASSNAME = "FeParams"

    def __init__(self, beta0_t, beta, sigma2):
        self.beta0_t = np.asarray(beta0_t, dtype=float).reshape(-1)
        self.beta = np.asarray(beta, dtype=float).reshape(-1)
        self.sigma2 = float(sigma2)

    def validate(self):
        check_positive(sigma2=self.sigma2)
        return self

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "beta0_t": self.beta0_t.tolist(),
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        return FeParams(obj["beta0_t"], obj["beta"], obj["sigma2"])


class AreParams(JSONSerDes):
    '''(beta0, beta, rho, sigma2_eta, sigma2)

    The optimizer works on the vector (beta0, beta, rho, sigma_eta,
    sigma), see to_vector/from_vector.
    '''
    JSON_CLASSNAME = "AreParams"

    def __init__(self, beta0, beta, rho, sigma2_eta, sigma2):
        self.beta0 = float(beta0)
        self.beta = np.asarray(beta, dtype=float).reshape(-1)
        self.rho = float(rho)
        self.sigma2_eta = float(sigma2_eta)
        self.sigma2 = float(sigma2)

    def validate(self):
        check_stationary(rho=self.rho)
        check_positive(sigma2=self.sigma2)
        if not self.sigma2_eta >= 0:
            check_positive(sigma2_eta=self.sigma2_eta)
        return self

    def to_vector(self):
        return np.concatenate([[self.beta0], self.beta,
                               [self.rho, math.sqrt(self.sigma2_eta), math.sqrt(self.sigma2)]])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:-3], v[-3], v[-2]**2, v[-1]**2)

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "beta0": self.beta0,
            "beta": self.beta.tolist(),
            "rho": self.rho,
            "sigma2_eta": self.sigma2_eta,
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        return AreParams(obj["beta0"], obj["beta"], obj["rho"], obj["sigma2_eta"], obj["sigma2"])

    def __repr__(self):
        return (f'AreParams(beta0={self.beta0:.4g}, k={len(self.beta)}, rho={self.rho:.4g}, '
                f'sigma2_eta={self.sigma2_eta:.4g}, sigma2={self.sigma2:.4g})')


class FeOutput:
    '''Per-period intercepts and level-1 residuals of an FE fit'''

    def __init__(self, times, beta0_t, level1_residuals):
        self.times = tuple(times)
        self.beta0_t = beta0_t
        self.level1_residuals = level1_residuals

    def to_frame(self):
        return pd.DataFrame({"t": list(self.times), "beta0_t": self.beta0_t})


class GaussianFilterOutput:
    '''Kalman filter/smoother output of the ARE model

    predicted_u/predicted_var have T+1 entries: the prior at the first
    period through the forecast for the period after the sample.
    '''

    def __init__(self, times, loglik, filtered_u, filtered_var, smoothed_u, smoothed_var,
                 predicted_u, predicted_var, level1_residuals, level2_residuals):
        self.times = tuple(times)
        self.loglik = loglik
        self.filtered_u = filtered_u
        self.filtered_var = filtered_var
        self.smoothed_u = smoothed_u
        self.smoothed_var = smoothed_var
        self.predicted_u = predicted_u
        self.predicted_var = predicted_var
        self.level1_residuals = level1_residuals
        self.level2_residuals = level2_residuals

    @property
    def eta_hat(self):
        return self.level2_residuals

    def to_frame(self):
        return pd.DataFrame({
            "t": list(self.times) + ["forecast"],
            "filtered_u": np.append(self.filtered_u, np.nan),
            "filtered_var": np.append(self.filtered_var, np.nan),
            "smoothed_u": np.append(self.smoothed_u, np.nan),
            "smoothed_var": np.append(self.smoothed_var, np.nan),
            "predicted_u": self.predicted_u,
            "predicted_var": self.predicted_var,
            "eta_hat": np.append(self.level2_residuals, np.nan),
        })


def _fe_design(d):
    y, X, g = d.stacked
    dummies = np.zeros((d.n_total, d.T))
    dummies[np.arange(d.n_total), g] = 1.0
    names = [f'time[{t}]' for t in d.times] + list(d.covariate_names)
    return y, np.hstack([dummies, X]), names


def _check_rank(Z, names):
    if Z.shape[0] < Z.shape[1]:
        raise RankDeficientError(f'{Z.shape[0]} rows cannot identify {Z.shape[1]} coefficients')
    _, R, perm = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if len(diag) else 0
    if rank < Z.shape[1]:
        collinear = [names[i] for i in perm[rank:]]
        raise RankDeficientError(f'Design has rank {rank} < {Z.shape[1]}; collinear columns: '
                                 f'{", ".join(collinear)}')


def fit_fe(d):
    '''Ordinary least squares on [time dummies | X]

    sigma2 = RSS / n and the standard errors use the same ML variance,
    (Z'Z)^-1 sigma2; the sigma2 row gets sqrt(2 sigma2^2 / n).
    '''
    y, Z, names = _fe_design(d)
    _check_rank(Z, names)

    coef, _, _, _ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    n = d.n_total
    sigma2 = float(resid @ resid / n)
    if sigma2 <= 0:
        raise RankDeficientError('Perfect fit: zero residual variance')

    cov = scipy.linalg.inv(Z.T @ Z) * sigma2
    se = np.append(np.sqrt(np.diag(cov)), math.sqrt(2 * sigma2**2 / n))
    loglik = -n / 2 * (LOG_2PI + math.log(sigma2) + 1)

    p = FeParams(coef[:d.T], coef[d.T:], sigma2)
    states = FeOutput(d.times, p.beta0_t, d.ungroup(resid))

    logging.info(f'FE fit on {d}: loglik={loglik:.4f}')
    return FitResult("fe", p, [f'beta0[{t}]' for t in d.times] + list(d.covariate_names) + ["sigma2"],
                     np.append(coef, sigma2), se, loglik, d.T + d.k + 1, n,
                     {"status": "converged", "iterations": 0, "gradient_norm": 0.0},
                     d.times, p.beta0_t, p.beta0_t[-1],
                     covariate_names=d.covariate_names, states=states)


def are_loglik(d, p, smooth=True):
    '''Exact ARE loglik by the scalar Kalman filter on period means

    * d: Dataset
    * p: AreParams
    * smooth: if False only the loglik is filled in (used by the
      optimizer)

    Per period, with r = y - beta0 - X beta, mean rbar_t and within
    sum of squares SS_t:
      log f(y_t | Y_(t-1)) = log C_t + log(2 pi sigma2 / n_t) / 2
                             + log N(rbar_t; a_t, P_t + sigma2 / n_t)
    with C_t = (2 pi sigma2)^(-n_t/2) exp(-SS_t / (2 sigma2)).
    '''
    p.validate()
    n, rbar, ss = d.residual_stats(p.beta0, p.beta)
    T = d.T

    a = np.empty(T + 1)
    P = np.empty(T + 1)
    a_f = np.empty(T)
    P_f = np.empty(T)

    a[0] = 0.0
    P[0] = p.sigma2_eta / (1 - p.rho**2)

    obs_var = p.sigma2 / n
    loglik = float(np.sum(-n / 2 * (LOG_2PI + math.log(p.sigma2)) - ss / (2 * p.sigma2)
                          + 0.5 * (LOG_2PI + np.log(obs_var))))
    for t in range(T):
        F = P[t] + obs_var[t]
        loglik += normal_logpdf(rbar[t], a[t], F)
        K = P[t] / F
        a_f[t] = a[t] + K * (rbar[t] - a[t])
        P_f[t] = P[t] * obs_var[t] / F
        a[t + 1] = p.rho * a_f[t]
        P[t + 1] = p.rho**2 * P_f[t] + p.sigma2_eta

    if not smooth:
        return GaussianFilterOutput(d.times, loglik, a_f, P_f, None, None, a, P, None, None)

    a_s = a_f.copy()
    P_s = P_f.copy()
    for t in range(T - 2, -1, -1):
        J = P_f[t] * p.rho / P[t + 1] if P[t + 1] > 0 else 0.0
        a_s[t] = a_f[t] + J * (a_s[t + 1] - a[t + 1])
        P_s[t] = P_f[t] + J**2 * (P_s[t + 1] - P[t + 1])

    y, X, g = d.stacked
    eps = y - p.beta0 - X @ p.beta - a_s[g]
    eta = a_s.copy()
    eta[1:] -= p.rho * a_s[:-1]

    return GaussianFilterOutput(d.times, loglik, a_f, P_f, a_s, np.maximum(P_s, 0.0), a, P,
                                d.ungroup(eps), eta)


class AreObjective:
    '''Picklable loglik on the (beta0, beta, rho, sigma_eta, sigma) vector'''

    def __init__(self, d):
        self.d = d

    def __call__(self, theta):
        return are_loglik(self.d, AreParams.from_vector(theta), smooth=False).loglik


def are_transform(k):
    names = ["beta0"] + [f'beta{i + 1}' for i in range(k)] + ["rho", "sigma_eta", "sigma"]
    return ParamTransform(names, ["free"] * (k + 1) + ["tanh", "exp", "exp"])


def are_start_from_fe(d, fe):
    '''ARE starting values from an FE fit

    beta0 is the mean dummy intercept; rho and sigma2_eta come from the
    lag-1 autocorrelation and variance of the centered intercepts.
    '''
    b0 = fe.params.beta0_t
    beta0 = float(b0.mean())
    u = b0 - beta0
    var_u = float(u @ u / len(u))

    rho = 0.5
    if len(u) >= 3 and var_u > 0:
        rho = float(np.clip((u[1:] @ u[:-1]) / len(u) / var_u, -0.9, 0.9))

    sigma2 = fe.params.sigma2
    sigma2_eta = max(var_u * (1 - rho**2), 1e-4 * sigma2)
    return AreParams(beta0, fe.params.beta, rho, sigma2_eta, sigma2)


def fit_are(d, start=None, poolsize=1, **opts):
    '''Maximum likelihood fit of the ARE model

    * d: Dataset
    * start: AreParams; None starts from the FE fit
    * poolsize: worker processes for numerical derivatives
    * opts: gtol, ftol, max_iter for the optimizer
    '''
    if start is None:
        start = are_start_from_fe(d, fit_fe(d))
    start.validate()
    if start.sigma2_eta <= 0:
        start = AreParams(start.beta0, start.beta, start.rho, 1e-4 * start.sigma2, start.sigma2)

    transform = are_transform(d.k)
    m = Maximizer(AreObjective(d), transform, poolsize=poolsize, **opts)
    theta, loglik, z, cov_z, convergence = m.maximize(start.to_vector())

    p = AreParams.from_vector(theta)
    report_kinds = transform.kinds[:-2] + ["exp2", "exp2"]
    estimates, se = transform.report(z, cov_z, report_kinds)

    out = are_loglik(d, p)
    forecast_u = float(out.predicted_u[-1])

    return FitResult("are", p, ["beta0"] + list(d.covariate_names) + ["rho", "sigma2_eta", "sigma2"],
                     estimates, se, out.loglik, d.k + 4, d.n_total, convergence,
                     d.times, p.beta0 + out.smoothed_u, p.beta0 + forecast_u,
                     forecast_u=forecast_u, covariate_names=d.covariate_names,
                     options={k: v for k, v in opts.items()}, states=out)
