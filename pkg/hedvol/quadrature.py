from functools import lru_cache
import logging
import math

import numpy as np

from .util import check_positive, check_stationary

MAX_ORDER = 512
NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 100

DEFAULT_WIDTH = 3.0
MIN_POINTS = 3
MAX_POINTS = 201


class QuadratureError(ValueError):
    '''Quadrature rule or grid request cannot be satisfied'''
    pass


class GLRule:
    '''Gauss-Legendre nodes and weights on [-1, 1], nodes ascending'''

    def __init__(self, nodes, weights):
        self.nodes = nodes
        self.weights = weights

    @property
    def order(self):
        return len(self.nodes)

    def integrate(self, f, a=-1.0, b=1.0):
        '''Apply the rule to f over [a, b]'''
        half = (b - a) / 2
        return half * np.dot(self.weights, f(a + half * (self.nodes + 1)))


def _legendre(order, x):
    '''(internal) P_order(x) and P_(order-1)(x) by the three-term recurrence'''
    p_prev = np.ones_like(x)
    p = x.copy()
    for n in range(2, order + 1):
        p_prev, p = p, ((2 * n - 1) * x * p - (n - 1) * p_prev) / n
    return p, p_prev


@lru_cache(maxsize=64)
def _gl_arrays(order):
    # Chebyshev-like initial guesses, descending in x
    x = np.cos(np.pi * (np.arange(1, order + 1) - 0.25) / (order + 0.5))

    for _ in range(NEWTON_MAX_ITER):
        p, p_prev = _legendre(order, x)
        dp = order * (x * p - p_prev) / (x**2 - 1)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    else:
        logging.warning(f'Legendre root iteration for order {order} hit {NEWTON_MAX_ITER} iterations')

    p, p_prev = _legendre(order, x)
    dp = order * (x * p - p_prev) / (x**2 - 1)
    w = 2 / ((1 - x**2) * dp**2)

    x = x[::-1]
    w = w[::-1]

    # Exact symmetry about 0
    x = (x - x[::-1]) / 2
    w = (w + w[::-1]) / 2

    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gl_rule(order):
    '''Gauss-Legendre rule of the given order on [-1, 1]

    Roots of the Legendre polynomial by Newton iteration from Chebyshev
    guesses; weights 2 / ((1 - x^2) P'_n(x)^2).  Rules are cached and
    their arrays are read-only.
    '''
    if int(order) != order or not 1 <= order <= MAX_ORDER:
        raise QuadratureError(f'Gauss-Legendre order must be an integer in [1, {MAX_ORDER}], got {order}')
    nodes, weights = _gl_arrays(int(order))
    return GLRule(nodes, weights)


class Axis:
    '''One latent-process axis of a grid

    `points` are the rule's nodes mapped onto [lower, upper]; `weights`
    are the raw rule weights on [-1, 1], with the half-width `scale`
    kept apart as the per-axis jacobian.
    '''

    def __init__(self, rule, lower, upper):
        if not lower < upper:
            raise QuadratureError(f'Axis limits must satisfy lower < upper, got [{lower}, {upper}]')
        self.lower = float(lower)
        self.upper = float(upper)
        self.weights = rule.weights
        self.points = self.center + self.scale * rule.nodes

    @property
    def n(self):
        return len(self.points)

    @property
    def center(self):
        return (self.lower + self.upper) / 2

    @property
    def scale(self):
        return (self.upper - self.lower) / 2

    @property
    def mapped_weights(self):
        return self.scale * self.weights


class QuadGrid:
    '''Tensor Gauss-Legendre grid for the (u, h) latent pair

    State vectors over the grid are stored as (n_h, n_u) matrices whose
    C-order ravel puts u fastest, h slowest.
    '''

    def __init__(self, u_axis, h_axis):
        self.u_axis = u_axis
        self.h_axis = h_axis

    @property
    def n_u(self):
        return self.u_axis.n

    @property
    def n_h(self):
        return self.h_axis.n

    @property
    def jacobian(self):
        return self.u_axis.scale * self.h_axis.scale

    def integrate(self, values):
        '''Tensor-rule integral of an (n_h, n_u) array of integrand values'''
        return self.jacobian * self.h_axis.weights @ values @ self.u_axis.weights

    def __str__(self):
        return (f'QuadGrid(u: {self.n_u} on [{self.u_axis.lower:.4g}, {self.u_axis.upper:.4g}], '
                f'h: {self.n_h} on [{self.h_axis.lower:.4g}, {self.h_axis.upper:.4g}])')


def _check_point_count(name, n):
    if int(n) != n or n < MIN_POINTS or n % 2 == 0:
        raise QuadratureError(f'{name} must be an odd integer >= {MIN_POINTS}, got {n}')


def stationary_sds(params):
    '''(sd of u_t, sd of h_t) under the stationary distributions'''
    check_stationary(rho=params.rho, delta=params.delta)
    check_positive(sigma_eta=params.sigma_eta, sigma_nu=params.sigma_nu)
    return (params.sigma_eta / math.sqrt(1 - params.rho**2),
            params.sigma_nu / math.sqrt(1 - params.delta**2))


def build_grid(params, n_u, n_h, width=DEFAULT_WIDTH):
    '''Build the (u, h) grid for the given SVARE parameters

    * params: SvareParams (anything with rho, sigma_eta, alpha, delta, sigma_nu)
    * n_u, n_h: odd point counts, at least 3
    * width: half-width of each axis in stationary standard deviations

    The u-axis is centered on 0 and the h-axis on alpha / (1 - delta).
    '''
    _check_point_count("n_u", n_u)
    _check_point_count("n_h", n_h)
    if not width > 0:
        raise QuadratureError(f'Grid width multiplier must be positive, got {width}')

    sd_u, sd_h = stationary_sds(params)
    mu_h = params.alpha / (1 - params.delta)

    u_axis = Axis(gl_rule(n_u), -width * sd_u, width * sd_u)
    h_axis = Axis(gl_rule(n_h), mu_h - width * sd_h, mu_h + width * sd_h)
    return QuadGrid(u_axis, h_axis)


def meets_spacing_rule(sd, sigma, n, width=DEFAULT_WIDTH):
    '''True when n points spread over +/- width * sd are at most sigma / 2 apart on average'''
    return 4 * width * sd <= (n - 1) * sigma


def _count_for_axis(sd, sigma, width):
    n = max(math.ceil(4 * width * sd / sigma) + 1, MIN_POINTS)
    if n % 2 == 0:
        n += 1
    # ceil on a rounded ratio can land one odd step off either way
    while not meets_spacing_rule(sd, sigma, n, width):
        n += 2
    while n - 2 >= MIN_POINTS and meets_spacing_rule(sd, sigma, n - 2, width):
        n -= 2
    return n


def default_point_counts(params, width=DEFAULT_WIDTH):
    '''Point counts meeting the mean-spacing rule on both axes

    The smallest odd n with (axis width) / (n - 1) <= sigma_eta / 2 on
    the u-axis and sigma_nu / 2 on the h-axis, floored at 3 and capped
    at 201.
    '''
    sd_u, sd_h = stationary_sds(params)
    counts = [_count_for_axis(sd_u, params.sigma_eta, width),
              _count_for_axis(sd_h, params.sigma_nu, width)]

    for i, name in enumerate(("n_u", "n_h")):
        if counts[i] > MAX_POINTS:
            logging.warning(f'{name}={counts[i]} needed for the spacing rule; capping at {MAX_POINTS}')
            counts[i] = MAX_POINTS
    return tuple(counts)
