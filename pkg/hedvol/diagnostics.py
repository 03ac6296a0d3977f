'''Residual diagnostics, prediction metrics and the price index'''
import logging
import math
from multiprocessing import Pool

import numpy as np
import pandas as pd
from scipy import stats
from scipy.integrate import trapezoid
from statsmodels.tsa.stattools import acf, levinson_durbin

ACF_Z = 1.96
ENTROPY_GRID = 101
ENTROPY_PAD = 3.0
MIN_PERMUTATIONS = 99
DEFAULT_PERMUTATIONS = 199
DEFAULT_LAGS = 10


class DiagnosticsError(ValueError):
    '''Diagnostic undefined for the given input'''
    pass


def _series(x, name="series"):
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise DiagnosticsError(f'{name} has non-finite values')
    if len(x) and np.ptp(x) == 0:
        raise DiagnosticsError(f'{name} is constant')
    return x


class MomentDiag:
    '''Skewness b1, excess kurtosis b2 and (optionally) per-period SDs'''

    def __init__(self, n, b1, b2, sds=None):
        self.n = n
        self.b1 = b1
        self.b2 = b2
        self.sds = sds

    def to_json_obj(self):
        return {"n": self.n, "skewness": self.b1, "kurtosis": self.b2}


def moments(residuals):
    '''Sample skewness b1 and excess kurtosis b2

    b1 = g1 ((n-1)/n)^(3/2) and b2 = (g2 + 3) ((n-1)/n)^2 - 3, with g1
    and g2 the plain moment ratios.  b2 > -3 for every sample; it
    reaches -2.4375 at n = 4.
    '''
    x = np.concatenate([np.ravel(r) for r in residuals]) if isinstance(residuals, list) \
        else np.asarray(residuals, dtype=float).reshape(-1)
    if len(x) < 4:
        raise DiagnosticsError(f'Need at least 4 residuals, got {len(x)}')
    x = _series(x, "residuals")

    n = len(x)
    shrink = (n - 1) / n
    g1 = stats.skew(x, bias=True)
    g2 = stats.kurtosis(x, fisher=True, bias=True)
    return MomentDiag(n, float(g1 * shrink**1.5), float((g2 + 3) * shrink**2 - 3))


def residual_sds(groups):
    '''Per-period residual SDs s_t (denominator n_t - 1)

    Periods with a single row get NaN.
    '''
    sds = np.array([np.std(g, ddof=1) if len(g) > 1 else np.nan for g in groups])
    if np.any(np.isnan(sds)):
        logging.warning(f'{np.sum(np.isnan(sds))} periods have one row; their s_t is NaN')
    return sds


class SerialDiag:
    '''Serial dependence diagnostics at lags 1..L

    acf/pacf come with the +/-1.96/sqrt(T) band; the entropy S_k with
    permutation quantiles band90/band95.  Parts not computed are None.
    '''

    def __init__(self, lags, acf=None, pacf=None, band=None, entropy=None, band90=None, band95=None):
        self.lags = np.asarray(lags)
        self.acf = acf
        self.pacf = pacf
        self.band = band
        self.entropy = entropy
        self.band90 = band90
        self.band95 = band95

    def merge(self, rhs):
        result = SerialDiag(self.lags)
        for k in ("acf", "pacf", "band", "entropy", "band90", "band95"):
            v = getattr(self, k)
            setattr(result, k, v if v is not None else getattr(rhs, k))
        return result

    def to_frame(self):
        frame = pd.DataFrame({"lag": self.lags})
        if self.acf is not None:
            frame["acf"] = self.acf
            frame["pacf"] = self.pacf
            frame["band"] = self.band
        if self.entropy is not None:
            frame["S"] = self.entropy
            frame["band90"] = self.band90
            frame["band95"] = self.band95
        return frame


def acf_pacf(x, L=DEFAULT_LAGS):
    '''ACF (biased normalization) and Durbin-Levinson PACF at lags 1..L'''
    x = _series(x)
    if not 1 <= L < len(x):
        raise DiagnosticsError(f'Need 1 <= L < {len(x)}, got L={L}')

    r = acf(x, nlags=L, adjusted=False, fft=False)
    _, _, pacf, _, _ = levinson_durbin(r, nlags=L, isacov=True)
    band = ACF_Z / math.sqrt(len(x))
    return SerialDiag(np.arange(1, L + 1), acf=r[1:], pacf=np.asarray(pacf)[1:],
                      band=np.full(L, band))


def silverman_bandwidth(x):
    '''1-D Gaussian kernel bandwidth by Silverman's rule, (3n / 4)^(-1/5) times the sample SD'''
    kde = stats.gaussian_kde(x, bw_method="silverman")
    return float(np.sqrt(kde.covariance[0, 0]))


def _kernel_matrix(grid, data, bw):
    return stats.norm.pdf((grid[:, None] - data[None, :]) / bw) / bw


def _hellinger_lag(x, k):
    '''S_k for one lag: squared Hellinger distance of the joint density
    of (x_t, x_(t+k)) from the product of its marginals'''
    a, b = x[:-k], x[k:]
    bw_a, bw_b = silverman_bandwidth(a), silverman_bandwidth(b)
    pad = ENTROPY_PAD * max(bw_a, bw_b)
    grid = np.linspace(x.min() - pad, x.max() + pad, ENTROPY_GRID)

    K_a = _kernel_matrix(grid, a, bw_a)
    K_b = _kernel_matrix(grid, b, bw_b)
    joint = K_a @ K_b.T / len(a)
    product = np.outer(K_a.mean(axis=1), K_b.mean(axis=1))

    integrand = (np.sqrt(joint) - np.sqrt(product))**2
    s = 0.5 * trapezoid(trapezoid(integrand, grid, axis=1), grid)
    return float(np.clip(s, 0.0, 1.0))


def _entropy_all(x, L):
    return np.array([_hellinger_lag(x, k) for k in range(1, L + 1)])


class _PermutationReplicate:
    def __init__(self, x, L):
        self.x = x
        self.L = L

    def __call__(self, seed_seq):
        rng = np.random.default_rng(seed_seq)
        return _entropy_all(rng.permutation(self.x), self.L)


def entropy_sk(x, L=DEFAULT_LAGS, permutations=DEFAULT_PERMUTATIONS, seed=None, poolsize=1):
    '''Metric entropy S_k at lags 1..L with permutation bands

    * x: time series, longer than L + 10
    * permutations: replicates B (at least 99) of the null of serial
      independence; each gets its own spawned seed stream
    * seed: seed for the replicate streams
    * poolsize: worker processes for the replicates

    Densities use a product Gaussian kernel with a 1-D Silverman
    bandwidth per axis and are integrated on a 101 x 101 trapezoid grid.
    '''
    x = _series(x)
    if len(x) <= L + 10:
        raise DiagnosticsError(f'Series of length {len(x)} too short for {L} lags')
    if permutations < MIN_PERMUTATIONS:
        raise DiagnosticsError(f'Need at least {MIN_PERMUTATIONS} permutations, got {permutations}')

    s = _entropy_all(x, L)

    streams = np.random.SeedSequence(seed).spawn(permutations)
    f = _PermutationReplicate(x, L)
    if poolsize == 1:
        null = list(map(f, streams))
    else:
        with Pool(poolsize) as p:
            null = p.map(f, streams)
    null = np.vstack(null)

    logging.debug(f'Entropy S_k over {L} lags, {permutations} permutations')
    return SerialDiag(np.arange(1, L + 1), entropy=s,
                      band90=np.percentile(null, 90, axis=0),
                      band95=np.percentile(null, 95, axis=0))


def serial_diagnostics(x, L=DEFAULT_LAGS, permutations=DEFAULT_PERMUTATIONS, seed=None, poolsize=1):
    '''acf_pacf and entropy_sk on one series'''
    return acf_pacf(x, L).merge(entropy_sk(x, L, permutations, seed, poolsize))


class LeveneResult:
    def __init__(self, statistic, pvalue, df):
        self.statistic = statistic
        self.pvalue = pvalue
        self.df = df

    def to_json_obj(self):
        return {"statistic": self.statistic, "pvalue": self.pvalue, "df": self.df}


def rank_levene(groups):
    '''Rank-based Levene test of equal variance across periods

    Kruskal-Wallis on |e_it - median_t(e)|, chi-square with T-1
    degrees of freedom.
    '''
    groups = [np.asarray(g, dtype=float).reshape(-1) for g in groups]
    if len(groups) < 2:
        raise DiagnosticsError(f'Need at least 2 groups, got {len(groups)}')
    for t, g in enumerate(groups):
        if len(g) < 2:
            raise DiagnosticsError(f'Group {t} has {len(g)} rows, need at least 2')

    deviations = [np.abs(g - np.median(g)) for g in groups]
    if np.ptp(np.concatenate(deviations)) == 0:
        raise DiagnosticsError('All absolute deviations are tied')

    statistic, pvalue = stats.kruskal(*deviations)
    return LeveneResult(float(statistic), float(pvalue), len(groups) - 1)


def prediction_metrics(y_true, y_pred):
    '''{"mae", "rmse", "n"} of the prediction errors'''
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if len(y_true) != len(y_pred):
        raise DiagnosticsError(f'Got {len(y_true)} true values and {len(y_pred)} predictions')
    if len(y_true) == 0:
        raise DiagnosticsError('No predictions to score')

    e = y_true - y_pred
    return {
        "mae": float(np.mean(np.abs(e))),
        "rmse": float(np.sqrt(np.mean(e**2))),
        "n": len(e),
    }


class PriceIndex:
    def __init__(self, base, times, beta0_t, index):
        self.base = base
        self.times = list(times)
        self.beta0_t = np.asarray(beta0_t)
        self.index = np.asarray(index)

    def to_frame(self):
        return pd.DataFrame({"t": self.times, "beta0_t": self.beta0_t, "index": self.index})


def price_index(fit, base=None, log_base="e"):
    '''Fixed-base hedonic price index from a fit's period intercepts

    * fit: FitResult; its time_effects are beta0 + smoothed u_t (the
      dummy intercepts for FE)
    * base: base period label; None for the first period
    * log_base: "e" gives I_t = 100 exp(b_t - b_base); "10" uses 10^,
      matching a log10 response
    '''
    base = fit.time_labels[0] if base is None else str(base)
    if base not in fit.time_labels:
        raise DiagnosticsError(f'Unknown base period "{base}"')
    if str(log_base) not in ("e", "10"):
        raise DiagnosticsError(f'log_base must be "e" or "10", got {log_base}')

    b = fit.time_effects
    diff = b - b[fit.time_labels.index(base)]
    index = 100 * (np.exp(diff) if str(log_base) == "e" else np.power(10.0, diff))
    return PriceIndex(base, fit.time_labels, b, index)
