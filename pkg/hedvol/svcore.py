'''Quadrature filter for the SVARE model

The latent pair (u_t, h_t) lives on a tensor Gauss-Legendre grid.  All
per-time arrays are (n_h, n_u) matrices; flattened vectors put u
fastest.  The forward vectors l_t are normalized to sum 1 at every step
with the log of the normalizer accumulated separately, and the backward
vectors b_t likewise (b_T = 1 is stored as is).
'''
import logging
import math

import numpy as np
import pandas as pd

from .json_serdes import JSONSerDes
from .quadrature import build_grid
from .util import LOG_2PI, check_positive, check_stationary, normal_logpdf


class GridStarvationError(ValueError):
    '''All probability mass underflowed on the quadrature grid'''
    pass


class CovariateMismatchError(ValueError):
    '''Covariate rows do not match the fitted coefficient vector'''
    pass


class SvareParams(JSONSerDes):
    '''theta = (beta0, beta, rho, sigma_eta, alpha, delta, sigma_nu)'''
    JSON_CLASSNAME = "SvareParams"

    def __init__(self, beta0, beta, rho, sigma_eta, alpha, delta, sigma_nu):
        self.beta0 = float(beta0)
        self.beta = np.asarray(beta, dtype=float).reshape(-1)
        self.rho = float(rho)
        self.sigma_eta = float(sigma_eta)
        self.alpha = float(alpha)
        self.delta = float(delta)
        self.sigma_nu = float(sigma_nu)

    def validate(self):
        check_stationary(rho=self.rho, delta=self.delta)
        check_positive(sigma_eta=self.sigma_eta, sigma_nu=self.sigma_nu)
        return self

    @property
    def mu_h(self):
        return self.alpha / (1 - self.delta)

    def to_vector(self):
        return np.concatenate([[self.beta0], self.beta,
                               [self.rho, self.sigma_eta, self.alpha, self.delta, self.sigma_nu]])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:-5], *v[-5:])

    def replace(self, **kwargs):
        fields = self.to_json_obj()
        fields.update(kwargs)
        del fields["_json_classname"]
        return SvareParams(**fields)

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "beta0": self.beta0,
            "beta": self.beta.tolist(),
            "rho": self.rho,
            "sigma_eta": self.sigma_eta,
            "alpha": self.alpha,
            "delta": self.delta,
            "sigma_nu": self.sigma_nu,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        return SvareParams(obj["beta0"], obj["beta"], obj["rho"], obj["sigma_eta"],
                           obj["alpha"], obj["delta"], obj["sigma_nu"])

    def __repr__(self):
        return (f'SvareParams(beta0={self.beta0:.4g}, k={len(self.beta)}, rho={self.rho:.4g}, '
                f'sigma_eta={self.sigma_eta:.4g}, alpha={self.alpha:.4g}, '
                f'delta={self.delta:.4g}, sigma_nu={self.sigma_nu:.4g})')


def _obs_logdensity(d, p, g):
    '''(T, n_h, n_u) array of log f(y_t | u*_i, h*_j)'''
    n, mean, ss = d.residual_stats(p.beta0, p.beta)
    u = g.u_axis.points
    h = g.h_axis.points

    # sum_i (r_it - u)^2 = ss_t + n_t (mean_t - u)^2
    quad = ss[:, None] + n[:, None] * (mean[:, None] - u[None, :])**2
    return (-0.5 * n[:, None, None] * (LOG_2PI + h[None, :, None])
            - 0.5 * np.exp(-h)[None, :, None] * quad[:, None, :])


def obs_logdensity_grid(d, t, p, g):
    '''log f(y_t | u*_i, h*_j) for every grid cell, flattened u-fastest'''
    return _obs_logdensity(d, p, g)[t].ravel()


def weighted_transitions(p, g):
    '''(F_u o W_u, F_h o W_h): A[new, old] = w_new * f(new | old)'''
    u = g.u_axis.points
    h = g.h_axis.points
    f_u = np.exp(normal_logpdf(u[:, None], p.rho * u[None, :], p.sigma_eta**2))
    f_h = np.exp(normal_logpdf(h[:, None], p.alpha + p.delta * h[None, :], p.sigma_nu**2))
    return g.u_axis.weights[:, None] * f_u, g.h_axis.weights[:, None] * f_h


def initial_weights(p, g):
    '''(f_h1 o w_h) outer (f_u1 o w_u) as an (n_h, n_u) matrix'''
    f_u1 = np.exp(normal_logpdf(g.u_axis.points, 0.0, p.sigma_eta**2 / (1 - p.rho**2)))
    f_h1 = np.exp(normal_logpdf(g.h_axis.points, p.mu_h, p.sigma_nu**2 / (1 - p.delta**2)))
    return np.outer(g.h_axis.weights * f_h1, g.u_axis.weights * f_u1)


class RecursionState:
    '''Scaled forward (and optionally backward) vectors over the grid

    * forward[t]: l_t / sum(l_t), shape (n_h, n_u), further divided by
      any rescale factor
    * forward_log_scale[t]: c_t, with l_t = exp(c_1 + ... + c_t) forward[t]
    * backward[t]: b_t up to the factor exp(backward_log_scale[t:].sum())
    * obs, obs_shift: exp(log f(y_t|.) - shift_t) and shift_t, reused
      by the backward pass
    '''

    def __init__(self, grid, forward, forward_log_scale, obs, obs_shift):
        self.grid = grid
        self.forward = forward
        self.forward_log_scale = forward_log_scale
        self.obs = obs
        self.obs_shift = obs_shift
        self.backward = None
        self.backward_log_scale = None

    @property
    def T(self):
        return len(self.forward_log_scale)

    @property
    def loglik(self):
        return float(self.forward_log_scale.sum() + math.log(self.forward[-1].sum()))

    def log_joint_mass(self, t):
        '''log sum_ij l_tij b_tij in unscaled terms; equals the loglik for every t'''
        mass = np.sum(self.forward[t] * self.backward[t])
        return (math.log(mass) + self.forward_log_scale[:t + 1].sum()
                + self.backward_log_scale[t:].sum())


def forward(d, p, g, rescale=None):
    '''Forward recursion: returns (loglik, RecursionState)

    l_1 = J diag(f_1) ((f_h1 o w_h) kron (f_u1 o w_u)) and
    l_t = J diag(f_t) ((F_h o W_h) kron (F_u o W_u)) l_(t-1), with the
    Kronecker product applied as an h-axis then a u-axis contraction.

    Each l_t is stored divided by its sum; `rescale` (T positive
    factors) divides it further.  Any choice gives the same results.
    '''
    p.validate()
    log_obs = _obs_logdensity(d, p, g)
    shift = log_obs.max(axis=(1, 2))
    obs = np.exp(log_obs - shift[:, None, None])

    a_u, a_h = weighted_transitions(p, g)

    fwd = np.empty((d.T, g.n_h, g.n_u))
    log_scale = np.empty(d.T)
    pred = initial_weights(p, g)
    for t in range(d.T):
        if t > 0:
            pred = (a_h @ fwd[t - 1]) @ a_u.T
        l_t = g.jacobian * obs[t] * pred
        total = l_t.sum()
        if not (np.isfinite(total) and total > 0):
            raise GridStarvationError(f'Probability mass vanished at time "{d.times[t]}" on {g}; '
                                      f'widen the grid limits or add points')
        if rescale is not None:
            total *= rescale[t]
        fwd[t] = l_t / total
        log_scale[t] = math.log(total) + shift[t]

    state = RecursionState(g, fwd, log_scale, obs, shift)
    return state.loglik, state


def backward(d, p, g, fwd, rescale=None):
    '''Backward recursion, filling fwd.backward in place and returning it

    b_T = 1 and b_t[i'j'] = J sum_ij A_h[j, j'] A_u[i, i'] f_(t+1)ij b_(t+1)ij,
    so that sum_ij l_tij b_tij is the likelihood at every t.
    `rescale` works as in forward.
    '''
    a_u, a_h = weighted_transitions(p, g)

    bwd = np.empty_like(fwd.forward)
    log_scale = np.zeros(d.T)
    bwd[-1] = 1.0
    for t in range(d.T - 2, -1, -1):
        b_t = g.jacobian * (a_h.T @ (fwd.obs[t + 1] * bwd[t + 1])) @ a_u
        total = b_t.sum()
        if not (np.isfinite(total) and total > 0):
            raise GridStarvationError(f'Backward mass vanished at time "{d.times[t]}" on {g}; '
                                      f'widen the grid limits or add points')
        if rescale is not None:
            total *= rescale[t]
        bwd[t] = b_t / total
        log_scale[t] = math.log(total) + fwd.obs_shift[t + 1]

    fwd.backward = bwd
    fwd.backward_log_scale = log_scale
    return fwd


def _posterior_means(weights, g):
    '''(E u, E h) per time slice of (T, n_h, n_u) unnormalized weights'''
    post = weights / weights.sum(axis=(1, 2), keepdims=True)
    return post.sum(axis=1) @ g.u_axis.points, post.sum(axis=2) @ g.h_axis.points


def filter_states(fwd, g):
    '''(E(u_t|Y_t), E(h_t|Y_t)) for every t'''
    return _posterior_means(fwd.forward, g)


def smooth_states(fwd, g):
    '''(E(u_t|Y_T), E(h_t|Y_T)) for every t'''
    return _posterior_means(fwd.forward * fwd.backward, g)


def predict_states(fwd, p, g, t):
    '''(E(u_t|Y_(t-1)), E(h_t|Y_(t-1))) for the 0-based target index t

    t runs from 1 to T; t == T is the forecast of the first period
    after the sample.
    '''
    if not 1 <= t <= fwd.T:
        raise ValueError(f'Prediction target {t} outside [1, {fwd.T}]')
    a_u, a_h = weighted_transitions(p, g)
    post = fwd.forward[t - 1] / fwd.forward[t - 1].sum()
    pred_u = g.u_axis.scale * g.u_axis.points @ (a_u @ post.sum(axis=0))
    pred_h = g.h_axis.scale * g.h_axis.points @ (a_h @ post.sum(axis=1))
    return float(pred_u), float(pred_h)


class StateEstimates:
    '''Filtered, smoothed and one-step-ahead latent means plus residuals

    predicted_u/predicted_h have T+1 entries: index 0 holds the
    stationary means (nothing observed yet) and index T the forecast.
    level1_std_residuals is a list of per-group vectors.
    '''

    def __init__(self, times, filtered_u, filtered_h, smoothed_u, smoothed_h,
                 predicted_u, predicted_h, level1_std_residuals, eta_hat, nu_hat, loglik=None):
        self.times = tuple(times)
        self.filtered_u = filtered_u
        self.filtered_h = filtered_h
        self.smoothed_u = smoothed_u
        self.smoothed_h = smoothed_h
        self.predicted_u = predicted_u
        self.predicted_h = predicted_h
        self.level1_std_residuals = level1_std_residuals
        self.eta_hat = eta_hat
        self.nu_hat = nu_hat
        self.loglik = loglik

    @property
    def level1_residuals(self):
        return self.level1_std_residuals

    def to_frame(self):
        '''One row per period plus a final "forecast" row'''
        frame = pd.DataFrame({
            "t": list(self.times) + ["forecast"],
            "filtered_u": np.append(self.filtered_u, np.nan),
            "filtered_h": np.append(self.filtered_h, np.nan),
            "smoothed_u": np.append(self.smoothed_u, np.nan),
            "smoothed_h": np.append(self.smoothed_h, np.nan),
            "predicted_u": self.predicted_u,
            "predicted_h": self.predicted_h,
            "eta_hat": np.append(self.eta_hat, np.nan),
            "nu_hat": np.append(self.nu_hat, np.nan),
        })
        return frame


def state_estimates(d, p, g):
    '''Run forward/backward on one grid and assemble the StateEstimates'''
    loglik, state = forward(d, p, g)
    backward(d, p, g, state)

    filtered_u, filtered_h = filter_states(state, g)
    smoothed_u, smoothed_h = smooth_states(state, g)

    predicted = [(0.0, p.mu_h)] + [predict_states(state, p, g, t) for t in range(1, d.T + 1)]
    predicted_u = np.array([a for a, _ in predicted])
    predicted_h = np.array([b for _, b in predicted])

    y, X, grp = d.stacked
    raw = y - p.beta0 - X @ p.beta - smoothed_u[grp]
    std = d.ungroup(raw / np.exp(smoothed_h[grp] / 2))

    eta_hat = smoothed_u.copy()
    eta_hat[1:] -= p.rho * smoothed_u[:-1]

    nu_hat = np.empty(d.T)
    nu_hat[0] = (smoothed_h[0] - p.mu_h) * math.sqrt(1 - p.delta**2) / p.sigma_nu
    nu_hat[1:] = (smoothed_h[1:] - p.alpha - p.delta * smoothed_h[:-1]) / p.sigma_nu

    logging.debug(f'State estimates at {p}: loglik={loglik:.6f}')
    return StateEstimates(d.times, filtered_u, filtered_h, smoothed_u, smoothed_h,
                          predicted_u, predicted_h, std, eta_hat, nu_hat, loglik=loglik)


def predict_prices(X_new, est, p, t=None):
    '''Point predictions of the (log10) response

    * X_new: (m x k) covariate rows
    * est: StateEstimates of the fit
    * p: the fitted SvareParams
    * t: None to forecast the period after the sample with the
      predicted u_(T+1); otherwise a time index per row, using the
      smoothed u_t (within-sample prediction)
    '''
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new.reshape(1, -1)
    if X_new.shape[1] != len(p.beta):
        raise CovariateMismatchError(f'Rows have {X_new.shape[1]} covariates, model has {len(p.beta)}')

    if t is None:
        u = est.predicted_u[-1]
    else:
        u = np.asarray(est.smoothed_u)[np.asarray(t, dtype=int)]
    return p.beta0 + u + X_new @ p.beta


def svare_loglik(d, p, n_u, n_h, width=3.0):
    '''Approximated loglik with the grid built from p itself'''
    g = build_grid(p, n_u, n_h, width)
    return forward(d, p, g)[0]
