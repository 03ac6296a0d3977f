'''Synthetic repeated cross-sections and brute-force likelihood oracles

Random streams come from one SeedSequence: child 0 drives u, child 1
drives h, child 2 the covariates and child 3 + t the level-1 noise of
period t, all on Philox generators.  Changing the covariate settings thus
leaves the latent paths untouched.
'''
import logging
import math

import numpy as np
from scipy.special import logsumexp

from .baseline import AreParams, FeParams
from .dataset import Dataset
from .json_serdes import JSONSerDes, hedvol_json_decoder
from .svcore import SvareParams
from .util import LOG_2PI, normal_logpdf

MAX_ORACLE_T = 3
MAX_ORACLE_POINTS = 9
DEFAULT_MC_BATCHES = 20

STREAM_U = 0
STREAM_H = 1
STREAM_X = 2
STREAM_GROUPS = 3

PARAM_CLASSES = {"fe": FeParams, "are": AreParams, "svare": SvareParams}


class OracleSizeError(ValueError):
    '''Brute-force oracle requested on too large an instance'''
    pass


def semester_labels(T, start_year=1998):
    '''"1998-1", "1998-2", "1999-1", ...'''
    return [f'{start_year + i // 2}-{i % 2 + 1}' for i in range(T)]


def _generator(seed_seq):
    return np.random.Generator(np.random.Philox(seed_seq))


class SimConfig(JSONSerDes):
    '''What to simulate

    * model: "fe", "are" or "svare"
    * params: FeParams, AreParams or SvareParams matching the model
    * T: number of periods
    * group_sizes: one n for every period, or a list of T sizes
    * covariates: {"kind": "normal"} (standard normal columns),
      {"kind": "bernoulli", "p": 0.3} (0/1 dummies) or
      {"kind": "fixed", "rows": [[...], ...]} (one row per item); the
      number of columns must match len(params.beta)
    * seed: required
    * start_year: first year of the semester labels
    '''
    JSON_CLASSNAME = "SimConfig"

    def __init__(self, model, params, T, group_sizes, seed, covariates=None, start_year=1998):
        self.model = str(model).lower()
        if self.model not in PARAM_CLASSES:
            raise ValueError(f'Unknown model "{model}"')
        if not isinstance(params, PARAM_CLASSES[self.model]):
            raise ValueError(f'{self.model} simulation needs {PARAM_CLASSES[self.model].__name__}')
        if seed is None:
            raise ValueError('A simulation seed is required')

        self.params = params.validate()
        self.T = int(T)
        sizes = np.atleast_1d(np.asarray(group_sizes, dtype=int))
        self.group_sizes = np.repeat(sizes, self.T) if len(sizes) == 1 else sizes
        self.seed = int(seed)
        self.covariates = dict(covariates or {"kind": "normal"})
        self.start_year = int(start_year)

        if self.T < 1 or len(self.group_sizes) != self.T or np.any(self.group_sizes < 1):
            raise ValueError(f'Need T >= 1 and T positive group sizes, got T={T}, sizes={group_sizes}')
        if self.model == "fe" and len(params.beta0_t) != self.T:
            raise ValueError(f'FE simulation needs {self.T} intercepts, got {len(params.beta0_t)}')
        if self.covariates["kind"] not in ("normal", "bernoulli", "fixed"):
            raise ValueError(f'Unknown covariate kind "{self.covariates["kind"]}"')

    @property
    def k(self):
        return len(self.params.beta)

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "model": self.model,
            "params": self.params.to_json_obj(),
            "T": self.T,
            "group_sizes": self.group_sizes.tolist(),
            "seed": self.seed,
            "covariates": self.covariates,
            "start_year": self.start_year,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        params = obj["params"]
        if isinstance(params, dict):
            params = hedvol_json_decoder(params)
        return SimConfig(obj["model"], params, obj["T"], obj["group_sizes"], obj["seed"],
                         covariates=obj.get("covariates"), start_year=obj.get("start_year", 1998))


class SimResult:
    '''Simulated Dataset with the true latent paths'''

    def __init__(self, dataset, u, h):
        self.dataset = dataset
        self.u = u
        self.h = h


def _ar1_path(rng, T, intercept, coef, sd):
    '''AR(1) path started from its stationary distribution'''
    x = np.empty(T)
    x[0] = intercept / (1 - coef) + sd / math.sqrt(1 - coef**2) * rng.standard_normal()
    for t in range(1, T):
        x[t] = intercept + coef * x[t - 1] + sd * rng.standard_normal()
    return x


def _covariates(cfg, rng):
    n, k = int(cfg.group_sizes.sum()), cfg.k
    spec = cfg.covariates
    if spec["kind"] == "normal":
        return rng.standard_normal((n, k))
    if spec["kind"] == "bernoulli":
        return (rng.random((n, k)) < spec.get("p", 0.5)).astype(float)

    X = np.asarray(spec["rows"], dtype=float).reshape(-1, k)
    if len(X) != n:
        raise ValueError(f'Fixed design has {len(X)} rows, simulation needs {n}')
    return X


def simulate(cfg):
    '''Draw a Dataset and the latent paths from cfg's data-generating process

    Returns a SimResult with u_t and h_t (h_t = log sigma2 for FE and ARE;
    u_t = 0 for FE, whose period effects are the dummy intercepts).
    '''
    streams = [_generator(s) for s in np.random.SeedSequence(cfg.seed).spawn(STREAM_GROUPS + cfg.T)]
    p = cfg.params

    if cfg.model == "svare":
        u = _ar1_path(streams[STREAM_U], cfg.T, 0.0, p.rho, p.sigma_eta)
        h = _ar1_path(streams[STREAM_H], cfg.T, p.alpha, p.delta, p.sigma_nu)
        intercepts = p.beta0 + u
    elif cfg.model == "are":
        u = _ar1_path(streams[STREAM_U], cfg.T, 0.0, p.rho, math.sqrt(p.sigma2_eta))
        h = np.full(cfg.T, math.log(p.sigma2))
        intercepts = p.beta0 + u
    else:
        u = np.zeros(cfg.T)
        h = np.full(cfg.T, math.log(p.sigma2))
        intercepts = p.beta0_t

    X = _covariates(cfg, streams[STREAM_X])
    bounds = np.concatenate([[0], np.cumsum(cfg.group_sizes)])

    responses, designs = [], []
    for t in range(cfg.T):
        X_t = X[bounds[t]:bounds[t + 1]]
        eps = streams[STREAM_GROUPS + t].standard_normal(cfg.group_sizes[t])
        responses.append(intercepts[t] + X_t @ p.beta + math.exp(h[t] / 2) * eps)
        designs.append(X_t)

    names = [f'x{i + 1}' for i in range(cfg.k)]
    d = Dataset(semester_labels(cfg.T, cfg.start_year), responses, designs, names)
    logging.debug(f'Simulated {cfg.model} {d} with seed {cfg.seed}')
    return SimResult(d, u, h)


def _check_oracle_size(d, g):
    if d.T > MAX_ORACLE_T:
        raise OracleSizeError(f'Tensor oracle limited to T <= {MAX_ORACLE_T}, got T={d.T}')
    if g.n_u > MAX_ORACLE_POINTS or g.n_h > MAX_ORACLE_POINTS:
        raise OracleSizeError(f'Tensor oracle limited to {MAX_ORACLE_POINTS} points per axis, '
                              f'got n_u={g.n_u}, n_h={g.n_h}')


def _cells(g):
    '''Cell coordinates and log mapped weights, flattened u fastest'''
    h, u = np.meshgrid(g.h_axis.points, g.u_axis.points, indexing="ij")
    wh, wu = np.meshgrid(g.h_axis.mapped_weights, g.u_axis.mapped_weights, indexing="ij")
    return u.ravel(), h.ravel(), np.log(wu * wh).ravel()


def _item_logdensities(d, p, u, h):
    '''(T, cells) sums of per-item normal log densities'''
    out = np.empty((d.T, len(u)))
    for t in range(d.T):
        y, X = d.group(t)
        r = y - p.beta0 - X @ p.beta
        out[t] = normal_logpdf(r[:, None], u[None, :], np.exp(h)[None, :]).sum(axis=0)
    return out


def _log_tensors(d, p, g):
    '''Prefix log-integrands: entry t has t+1 cell axes (oldest first)'''
    _check_oracle_size(d, g)
    u, h, log_w = _cells(g)
    log_obs = _item_logdensities(d, p, u, h)

    init = (normal_logpdf(u, 0.0, p.sigma_eta**2 / (1 - p.rho**2))
            + normal_logpdf(h, p.mu_h, p.sigma_nu**2 / (1 - p.delta**2)))
    # trans[old, new]
    trans = (normal_logpdf(u[None, :], p.rho * u[:, None], p.sigma_eta**2)
             + normal_logpdf(h[None, :], p.alpha + p.delta * h[:, None], p.sigma_nu**2))

    tensors = [init + log_w + log_obs[0]]
    for t in range(1, d.T):
        prev = tensors[-1]
        step = trans + log_w[None, :] + log_obs[t][None, :]
        tensors.append(prev[..., None] + step.reshape((1,) * (prev.ndim - 1) + step.shape))
    return tensors, u, h, log_w, trans


def oracle_loglik_tensor(d, p, g):
    '''log of the full (n_u n_h)^T-term tensor quadrature sum

    Only for T <= 3 and at most 9 points per axis.
    '''
    tensors, _, _, _, _ = _log_tensors(d, p, g)
    return float(logsumexp(tensors[-1]))


def _marginal_means(log_tensor, axis, u, h):
    others = tuple(i for i in range(log_tensor.ndim) if i != axis)
    log_m = logsumexp(log_tensor, axis=others) if others else log_tensor
    w = np.exp(log_m - logsumexp(log_m))
    return float(w @ u), float(w @ h), w


def oracle_state_means_tensor(d, p, g):
    '''Brute-force filtered, smoothed and one-step-ahead means

    Returns a dict of arrays: filtered_u/h and smoothed_u/h of length T,
    predicted_u/h of length T+1 (index 0 the prior means), using the
    same per-axis prediction sums as the recursion.
    '''
    tensors, u, h, _, _ = _log_tensors(d, p, g)
    T = d.T
    out = {k: np.empty(T) for k in ("filtered_u", "filtered_h", "smoothed_u", "smoothed_h")}
    out["predicted_u"] = np.empty(T + 1)
    out["predicted_h"] = np.empty(T + 1)
    out["predicted_u"][0] = 0.0
    out["predicted_h"][0] = p.mu_h

    u_pts, h_pts = g.u_axis.points, g.h_axis.points
    a_u = g.u_axis.mapped_weights[:, None] * np.exp(
        normal_logpdf(u_pts[:, None], p.rho * u_pts[None, :], p.sigma_eta**2))
    a_h = g.h_axis.mapped_weights[:, None] * np.exp(
        normal_logpdf(h_pts[:, None], p.alpha + p.delta * h_pts[None, :], p.sigma_nu**2))

    for t in range(T):
        out["filtered_u"][t], out["filtered_h"][t], post = _marginal_means(tensors[t], t, u, h)
        out["smoothed_u"][t], out["smoothed_h"][t], _ = _marginal_means(tensors[-1], t, u, h)

        post = post.reshape(g.n_h, g.n_u)
        out["predicted_u"][t + 1] = u_pts @ (a_u @ post.sum(axis=0))
        out["predicted_h"][t + 1] = h_pts @ (a_h @ post.sum(axis=1))
    return out


def oracle_loglik_mc(d, p, paths, seed, batches=DEFAULT_MC_BATCHES):
    '''Monte Carlo loglik over latent paths drawn from the prior

    Returns (estimate, se): the log of the mean path likelihood and its
    standard error on the log scale, from batch means.
    '''
    paths = int(paths)
    batches = min(int(batches), paths)
    rng_u, rng_h = [_generator(s) for s in np.random.SeedSequence(seed).spawn(2)]
    n, rbar, ss = d.residual_stats(p.beta0, p.beta)

    sd_u = p.sigma_eta / math.sqrt(1 - p.rho**2)
    sd_h = p.sigma_nu / math.sqrt(1 - p.delta**2)
    u = np.empty((paths, d.T))
    h = np.empty((paths, d.T))
    u[:, 0] = sd_u * rng_u.standard_normal(paths)
    h[:, 0] = p.mu_h + sd_h * rng_h.standard_normal(paths)
    for t in range(1, d.T):
        u[:, t] = p.rho * u[:, t - 1] + p.sigma_eta * rng_u.standard_normal(paths)
        h[:, t] = p.alpha + p.delta * h[:, t - 1] + p.sigma_nu * rng_h.standard_normal(paths)

    log_f = np.sum(-n / 2 * (LOG_2PI + h) - np.exp(-h) / 2 * (ss + n * (rbar - u)**2), axis=1)

    shift = log_f.max()
    batch_means = np.array([np.mean(np.exp(b - shift)) for b in np.array_split(log_f, batches)])
    mean = np.mean(np.exp(log_f - shift))
    se = np.std(batch_means, ddof=1) / math.sqrt(batches) / mean if batches > 1 else math.inf
    return float(math.log(mean) + shift), float(se)
