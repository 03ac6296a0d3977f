#!/usr/bin/env python3

import logging
import os
import sys
from traceback import print_exception

import click
import numpy as np

from .cli_impl import CLIImpl
from .config import RunConfig
from .svcore import GridStarvationError

cli_impl = CLIImpl()

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


def _run(verbose, fn):
    '''Call fn, mapping failures onto the exit code contract

    0 on success, 1 for bad input (config, data, schema), 2 for
    numerical trouble.  fn may return an exit code itself.
    '''
    try:
        code = fn()
    except (GridStarvationError, np.linalg.LinAlgError) as e:
        print(f'hedvol: numerical failure: {e}', file=sys.stderr)
        if verbose:
            print_exception(e)
        sys.exit(EXIT_NUMERICAL)
    except (ValueError, KeyError, FileNotFoundError, IsADirectoryError) as e:
        msg = str(e).splitlines()[0] if str(e) else e.__class__.__name__
        print(f'hedvol: {msg}', file=sys.stderr)
        if verbose:
            print_exception(e)
        sys.exit(EXIT_INPUT)
    except Exception as e:
        print(f'hedvol: numerical failure: {e}', file=sys.stderr)
        if verbose:
            print_exception(e)
        sys.exit(EXIT_NUMERICAL)
    sys.exit(code or EXIT_OK)


def common_options(f):
    f = click.option('--config', 'config_path', default=None,
                     help='JSON config file (sections data, coding, fit, diagnose, index, simulate)')(f)
    f = click.option('--out', default=None, help='Output directory')(f)
    f = click.option('--seed', type=int, default=None, help='Seed for every random stream')(f)
    f = click.option('--threads', type=int, default=None,
                     help='Worker processes (1 means no subprocessing)')(f)
    f = click.option('-v', '--verbose', is_flag=True, help='Print tracebacks on failure')(f)
    return f


@click.group()
@click.option('--log-level', default=None)
def cli(log_level):
    if 'HEDVOL_TEST_LOGLEVEL' in os.environ:
        log_level = os.environ['HEDVOL_TEST_LOGLEVEL']

    if log_level:
        logging.basicConfig(level=log_level.upper())


@cli.command()
@common_options
@click.option('--model', type=click.Choice(["fe", "are", "svare"]), default=None)
@click.option('--data', default=None, help='CSV with time, price and covariate columns')
@click.option('--nu', type=int, default=None, help='Quadrature points on the u-axis (odd)')
@click.option('--nh', type=int, default=None, help='Quadrature points on the h-axis (odd)')
@click.option('--holdout', default=None, help='"last" or "random:N" rows kept out of the fit')
def fit(config_path, out, seed, threads, verbose, model, data, nu, nh, holdout):
    '''Fit a model and write estimates.csv, fit.json, states.csv, residuals.csv

    Exits 0 on convergence and 2 when the optimizer did not converge
    (artifacts are still written).
    '''
    def run():
        cfg = RunConfig.load(config_path, model=model, data=data, out=out, seed=seed,
                             threads=threads, nu=nu, nh=nh, holdout=holdout)
        result = cli_impl.fit(cfg)
        print(f'{result.model}: loglik {result.loglik:.3f}, {result.n_params} parameters, '
              f'AIC {result.aic:.1f}, BIC {result.bic:.1f} ({result.convergence["status"]})')
        return EXIT_OK if result.converged else EXIT_NUMERICAL
    _run(verbose, run)


@cli.command()
@common_options
@click.option('--data', default=None, help='CSV the model was fit on (for the coding plan)')
@click.argument('rows')
def forecast(config_path, out, seed, threads, verbose, data, rows):
    '''Predict the rows of ROWS with the fit in --out; writes forecasts.csv
    and, when ROWS has a price column, metrics.json'''
    def run():
        cfg = RunConfig.load(config_path, data=data, out=out, seed=seed, threads=threads)
        metrics = cli_impl.forecast(cfg, rows)
        if metrics is not None:
            print(f'MAE {metrics["mae"]:.4f}, RMSE {metrics["rmse"]:.4f} over {metrics["n"]} rows')
    _run(verbose, run)


@cli.command()
@common_options
@click.option('--data', default=None, help='CSV the model was fit on')
def diagnose(config_path, out, seed, threads, verbose, data):
    '''Residual moments, rank Levene test, ACF/PACF and entropy bands'''
    def run():
        cfg = RunConfig.load(config_path, data=data, out=out, seed=seed, threads=threads)
        summary = cli_impl.diagnose(cfg)
        level1 = summary["level1"]
        print(f'skewness {level1["skewness"]:.4f}, kurtosis {level1["kurtosis"]:.4f}')
    _run(verbose, run)


@cli.command()
@common_options
@click.option('--base', default=None, help='Base period label (default: first period)')
def index(config_path, out, seed, threads, verbose, base):
    '''Write the hedonic price index of the fit in --out to index.csv'''
    def run():
        cfg = RunConfig.load(config_path, out=out, seed=seed, threads=threads, base=base)
        pi = cli_impl.index(cfg)
        print(f'Index over {len(pi.times)} periods, base {pi.base}')
    _run(verbose, run)


@cli.command()
@common_options
def simulate(config_path, out, seed, threads, verbose):
    '''Simulate data.csv and latent.csv from the simulate config section'''
    def run():
        cfg = RunConfig.load(config_path, out=out, seed=seed, threads=threads)
        result = cli_impl.simulate(cfg)
        print(f'Simulated {result.dataset}')
    _run(verbose, run)


if __name__ == '__main__':
    cli()
