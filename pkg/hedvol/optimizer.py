'''Quasi-Newton maximum likelihood shared by the ARE and SVARE fits

Parameters are optimized in an unconstrained space z; each coordinate
maps back through one of the transforms in TRANSFORMS.  Gradients and
the final Hessian come from central differences, fanned out over a
multiprocessing Pool when poolsize > 1.
'''
from collections import defaultdict
import logging
import math
from multiprocessing import Pool

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .json_serdes import JSONSerDes, hedvol_json_decoder
from .util import SIGMA_FLOOR

PENALTY = 1e10

GRAD_STEP = 1e-5
HESS_STEP = 1e-4

DEFAULT_GTOL = 1e-5
DEFAULT_FTOL = 1e-9
DEFAULT_MAX_ITER = 500

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iter"
STATUS_FAILED = "failed"

# kind => (z -> value, z -> d value / dz)
TRANSFORMS = {
    "free": (lambda z: z, lambda z: np.ones_like(z)),
    "tanh": (np.tanh, lambda z: 1 - np.tanh(z)**2),
    "exp": (np.exp, np.exp),
    # Reporting only: a standard deviation in z shown as a variance
    "exp2": (lambda z: np.exp(2 * z), lambda z: 2 * np.exp(2 * z)),
}

INVERSES = {
    "free": lambda v: v,
    "tanh": np.arctanh,
    "exp": np.log,
    "exp2": lambda v: np.log(v) / 2,
}


class ParamTransform:
    '''Coordinate-wise bijection between parameters and R^p

    * names: parameter names, in vector order
    * kinds: one of "free", "tanh", "exp" per parameter
    '''

    def __init__(self, names, kinds):
        if len(names) != len(kinds):
            raise ValueError(f'{len(names)} names but {len(kinds)} transform kinds')
        for k in kinds:
            if k not in TRANSFORMS:
                raise ValueError(f'Unknown transform "{k}"')
        self.names = list(names)
        self.kinds = list(kinds)

    def from_z(self, z, kinds=None):
        kinds = kinds or self.kinds
        return np.array([TRANSFORMS[k][0](x) for k, x in zip(kinds, np.asarray(z, dtype=float))])

    def to_z(self, theta, kinds=None):
        kinds = kinds or self.kinds
        with np.errstate(divide="raise", invalid="raise"):
            try:
                return np.array([INVERSES[k](x) for k, x in zip(kinds, np.asarray(theta, dtype=float))])
            except FloatingPointError:
                raise ValueError(f'Parameters {theta} are outside the transform domain')

    def jacobian(self, z, kinds=None):
        '''Diagonal of d theta / dz'''
        kinds = kinds or self.kinds
        return np.array([TRANSFORMS[k][1](x) for k, x in zip(kinds, np.asarray(z, dtype=float))])

    def below_floor(self, z):
        '''True if any exp-transformed scale is under SIGMA_FLOOR'''
        floor = math.log(SIGMA_FLOOR)
        return any(k == "exp" and x < floor for k, x in zip(self.kinds, z))

    def report(self, z, cov_z=None, kinds=None):
        '''(values, se) under `kinds`, se by the delta method

        se is None when cov_z is None.
        '''
        values = self.from_z(z, kinds)
        if cov_z is None:
            return values, None
        J = self.jacobian(z, kinds)
        cov = cov_z * np.outer(J, J)
        return values, np.sqrt(np.clip(np.diag(cov), 0, None))


class NegLoglik:
    '''-loglik(theta(z)) with a flat penalty outside the valid region

    loglik must be picklable for poolsize > 1; it receives the
    constrained parameter vector and may raise ValueError for invalid
    parameters (stationarity, grid starvation, ...).
    '''

    def __init__(self, loglik, transform):
        self.loglik = loglik
        self.transform = transform

    def __call__(self, z):
        if not np.all(np.isfinite(z)) or self.transform.below_floor(z):
            return PENALTY
        try:
            with np.errstate(over="ignore", under="ignore"):
                value = self.loglik(self.transform.from_z(z))
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            logging.debug(f'Penalty at z={z}: {e}')
            return PENALTY
        if not np.isfinite(value):
            return PENALTY
        return -value


def _steps(z, rel):
    return rel * np.maximum(1.0, np.abs(z))


def _gradient_points(z):
    h = _steps(z, GRAD_STEP)
    points = []
    for i in range(len(z)):
        for sign in (1, -1):
            zi = z.copy()
            zi[i] += sign * h[i]
            points.append(zi)
    return points, h


def _hessian_points(z):
    h = _steps(z, HESS_STEP)
    p = len(z)
    keys = [()]
    for i in range(p):
        keys += [((i, 1),), ((i, -1),)]
        for j in range(i):
            keys += [((i, si), (j, sj)) for si in (1, -1) for sj in (1, -1)]

    points = []
    for key in keys:
        zk = z.copy()
        for i, s in key:
            zk[i] += s * h[i]
        points.append(zk)
    return keys, points, h


class _Converged(Exception):
    pass


class Maximizer:
    '''Maximize loglik over the transformed space

    * loglik: picklable callable on the constrained parameter vector
    * transform: a ParamTransform
    * poolsize: worker processes for derivative evaluations; 1 means
      no subprocessing
    '''

    def __init__(self, loglik, transform, poolsize=1,
                 gtol=DEFAULT_GTOL, ftol=DEFAULT_FTOL, max_iter=DEFAULT_MAX_ITER):
        self.objective = NegLoglik(loglik, transform)
        self.transform = transform
        self.poolsize = int(poolsize or 1)
        self.gtol = gtol
        self.ftol = ftol
        self.max_iter = max_iter
        self.counters = defaultdict(int)

        self._map = map
        self._cache = {}

    def _f(self, z):
        key = z.tobytes()
        if key not in self._cache:
            self.counters["evaluations"] += 1
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = self.objective(z)
        return self._cache[key]

    def _eval_many(self, points):
        self.counters["evaluations"] += len(points)
        return np.array(list(self._map(self.objective, points)))

    def gradient(self, z):
        '''Central-difference gradient of -loglik in z'''
        z = np.asarray(z, dtype=float)
        points, h = _gradient_points(z)
        f = self._eval_many(points).reshape(len(z), 2)
        return (f[:, 0] - f[:, 1]) / (2 * h)

    def hessian(self, z):
        '''Central-difference Hessian of -loglik in z'''
        z = np.asarray(z, dtype=float)
        keys, points, h = _hessian_points(z)
        f = dict(zip(keys, self._eval_many(points)))

        p = len(z)
        H = np.empty((p, p))
        for i in range(p):
            H[i, i] = (f[((i, 1),)] - 2 * f[()] + f[((i, -1),)]) / h[i]**2
            for j in range(i):
                H[i, j] = H[j, i] = (f[((i, 1), (j, 1))] - f[((i, 1), (j, -1))]
                                     - f[((i, -1), (j, 1))] + f[((i, -1), (j, -1))]) / (4 * h[i] * h[j])
        return H

    def _run(self, z0, hessian):
        state = {"f": self._f(z0), "z": z0.copy(), "iterations": 0, "small_change": False}

        def callback(zk):
            fk = self._f(zk)
            state["iterations"] += 1
            rel = abs(fk - state["f"]) / max(1.0, abs(fk))
            state["f"], state["z"] = fk, zk.copy()
            logging.debug(f'Iteration {state["iterations"]}: loglik={-fk:.8f}')
            if rel < self.ftol and fk < PENALTY:
                state["small_change"] = True
                raise _Converged()

        res = None
        try:
            res = minimize(self._f, z0, jac=self.gradient, method="BFGS", callback=callback,
                           options={"gtol": self.gtol, "norm": np.inf, "maxiter": self.max_iter})
            z_hat = res.x
        except _Converged:
            z_hat = state["z"]

        grad = self.gradient(z_hat)
        grad_norm = float(np.max(np.abs(grad))) if len(grad) else 0.0
        iterations = state["iterations"] if res is None else int(res.nit)

        if state["small_change"] or res.success or grad_norm <= 10 * self.gtol:
            status = STATUS_CONVERGED
        elif iterations >= self.max_iter:
            status = STATUS_MAX_ITER
        else:
            status = STATUS_FAILED
            logging.warning(f'Optimizer stopped without converging: {res.message}')

        convergence = {
            "status": status,
            "iterations": iterations,
            "gradient_norm": grad_norm,
            "evaluations": self.counters["evaluations"],
        }

        cov_z = None
        if hessian:
            H = self.hessian(z_hat)
            try:
                cov_z = scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), np.eye(len(z_hat)))
            except (np.linalg.LinAlgError, ValueError):
                logging.warning('Hessian is not positive definite at the optimum; '
                                'standard errors unavailable')
        return z_hat, -self._f(z_hat), cov_z, convergence

    def maximize(self, theta0, hessian=True):
        '''Run BFGS from theta0

        Returns (theta_hat, loglik, z_hat, cov_z, convergence) with
        cov_z None when the Hessian is not positive definite (or was
        not requested).
        '''
        z0 = self.transform.to_z(theta0)
        if self._f(z0) >= PENALTY:
            raise ValueError(f'Starting values {theta0} are outside the valid region')

        if self.poolsize == 1:
            self._map = map
            z_hat, loglik, cov_z, convergence = self._run(z0, hessian)
        else:
            with Pool(self.poolsize) as p:
                self._map = p.map
                z_hat, loglik, cov_z, convergence = self._run(z0, hessian)
            self._map = map

        logging.info(f'Maximized loglik={loglik:.6f} ({convergence["status"]}, '
                     f'{convergence["iterations"]} iterations)')
        logging.debug(f'Optimizer counters: {dict(self.counters)}')
        return self.transform.from_z(z_hat), loglik, z_hat, cov_z, convergence


def _decode(obj):
    if isinstance(obj, dict) and "_json_classname" in obj:
        return hedvol_json_decoder(obj)
    return obj


class FitResult(JSONSerDes):
    '''Everything a fit produces that is worth keeping

    * model: "fe", "are" or "svare"
    * params: FeParams, AreParams or SvareParams
    * names/estimates/se: reported parameters (variances for the
      sigma^2 rows); se is None when unavailable
    * time_labels/time_effects: beta0 + u_t per period (smoothed u_t;
      the dummy intercepts for FE)
    * forecast_u: predicted u_(T+1) (None for FE)
    * forecast_effect: intercept used for rows after the sample
    * states: StateEstimates or GaussianFilterOutput, not serialized
    '''
    JSON_CLASSNAME = "FitResult"

    def __init__(self, model, params, names, estimates, se, loglik, n_params, n_total,
                 convergence, time_labels, time_effects, forecast_effect, forecast_u=None,
                 covariate_names=(), options=None, states=None):
        self.model = model
        self.params = params
        self.names = list(names)
        self.estimates = np.asarray(estimates, dtype=float)
        self.se = None if se is None else np.asarray(se, dtype=float)
        self.loglik = float(loglik)
        self.n_params = int(n_params)
        self.n_total = int(n_total)
        self.convergence = dict(convergence)
        self.time_labels = [str(t) for t in time_labels]
        self.time_effects = np.asarray(time_effects, dtype=float)
        self.forecast_effect = float(forecast_effect)
        self.forecast_u = None if forecast_u is None else float(forecast_u)
        self.covariate_names = list(covariate_names)
        self.options = dict(options or {})
        self.states = states

    @property
    def se_available(self):
        return self.se is not None

    @property
    def converged(self):
        return self.convergence.get("status") == STATUS_CONVERGED

    @property
    def aic(self):
        return -2 * self.loglik + 2 * self.n_params

    @property
    def bic(self):
        return -2 * self.loglik + self.n_params * math.log(self.n_total)

    @property
    def beta(self):
        return self.params.beta

    def estimate(self, name):
        return float(self.estimates[self.names.index(name)])

    def std_error(self, name):
        if self.se is None:
            return None
        return float(self.se[self.names.index(name)])

    def predict(self, X_new, t=None):
        '''Predicted responses for covariate rows

        * X_new: (m x k) rows in the fitted covariate order
        * t: None for the period after the sample, else a time index
          per row (within-sample prediction)
        '''
        from .svcore import CovariateMismatchError

        X_new = np.asarray(X_new, dtype=float)
        if X_new.ndim == 1:
            X_new = X_new.reshape(1, -1)
        if X_new.shape[1] != len(self.beta):
            raise CovariateMismatchError(f'Rows have {X_new.shape[1]} covariates, '
                                         f'{self.model} fit has {len(self.beta)}')
        if t is None:
            effect = self.forecast_effect
        else:
            effect = self.time_effects[np.asarray(t, dtype=int)]
        return effect + X_new @ self.beta

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "model": self.model,
            "params": self.params.to_json_obj(),
            "names": self.names,
            "estimates": self.estimates.tolist(),
            "se": None if self.se is None else self.se.tolist(),
            "se_available": self.se_available,
            "loglik": self.loglik,
            "n_params": self.n_params,
            "n_total": self.n_total,
            "aic": self.aic,
            "bic": self.bic,
            "convergence": self.convergence,
            "time_labels": self.time_labels,
            "time_effects": self.time_effects.tolist(),
            "forecast_effect": self.forecast_effect,
            "forecast_u": self.forecast_u,
            "covariate_names": self.covariate_names,
            "options": self.options,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        return FitResult(obj["model"], _decode(obj["params"]), obj["names"], obj["estimates"],
                         obj["se"], obj["loglik"], obj["n_params"], obj["n_total"],
                         obj["convergence"], obj["time_labels"], obj["time_effects"],
                         obj["forecast_effect"], forecast_u=obj.get("forecast_u"),
                         covariate_names=obj.get("covariate_names", ()),
                         options=obj.get("options"))

    def __str__(self):
        return (f'FitResult({self.model}: loglik={self.loglik:.3f}, n_params={self.n_params}, '
                f'{self.convergence.get("status")})')
