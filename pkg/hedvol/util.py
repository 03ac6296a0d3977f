import math
import re

import numpy as np
from scipy import stats

RESOLVED_CONFIG_FILENAME = "resolved_config.json"
FIT_FILENAME = "fit.json"

LOG_2PI = math.log(2 * math.pi)

# Smallest scale parameter we let a likelihood see.
SIGMA_FLOOR = 1e-6


class NonstationaryError(ValueError):
    '''Parameters outside the stationary/positive region'''
    pass


def time_sort_key(label):
    '''Sort key for ordinal time labels

    Digit runs are zero-padded so "1998-2" sorts before "1998-10".
    '''
    return re.sub(r'\d+', lambda m: m.group().zfill(12), str(label))


def normal_logpdf(x, mean, var):
    '''log N(x; mean, var), broadcasting over numpy inputs'''
    return stats.norm.logpdf(x, mean, np.sqrt(var))


def check_stationary(**coefs):
    '''Raise NonstationaryError unless every |coef| < 1'''
    for name, v in coefs.items():
        if not np.isfinite(v) or abs(v) >= 1:
            raise NonstationaryError(f'{name}={v} is not inside (-1, 1)')


def check_positive(**scales):
    for name, v in scales.items():
        if not np.isfinite(v) or v <= 0:
            raise NonstationaryError(f'{name}={v} must be positive')
