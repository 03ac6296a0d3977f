import logging
import os

import numpy as np
import pandas as pd

from .baseline import fit_are, fit_fe
from .dataset import DataLoadError, load_covariate_rows, load_csv, save_csv, split_holdout
from .diagnostics import (DiagnosticsError, moments, prediction_metrics, price_index,
                          rank_levene, residual_sds, serial_diagnostics)
from .estimate import fit_svare, recompute_states
from .json_serdes import dump_json, load_json
from .optimizer import FitResult
from .simulate import simulate
from .svcore import CovariateMismatchError
from .util import FIT_FILENAME

ESTIMATES_FILENAME = "estimates.csv"
STATES_FILENAME = "states.csv"
RESIDUALS_FILENAME = "residuals.csv"
HOLDOUT_FILENAME = "holdout.csv"
FORECASTS_FILENAME = "forecasts.csv"
METRICS_FILENAME = "metrics.json"
MOMENTS_FILENAME = "moments.json"
RESIDUAL_SDS_FILENAME = "residual_sds.csv"
INDEX_FILENAME = "index.csv"
SIM_DATA_FILENAME = "data.csv"
SIM_LATENT_FILENAME = "latent.csv"
SIM_CONFIG_FILENAME = "config.json"


class CLIImpl:
    '''The work behind each hedvol subcommand

    Every method takes a resolved RunConfig, writes its artifacts under
    cfg.out and echoes the config there.
    '''

    def __init__(self):
        self.verbose = False

    def _out_path(self, cfg, name):
        os.makedirs(cfg.out, exist_ok=True)
        return os.path.join(cfg.out, name)

    def load_dataset(self, cfg):
        d = cfg["data"]
        return load_csv(cfg.data_path(), cfg.coding_plan(), time_col=d["time_col"],
                        response_col=d["response_col"], log_transform=d["log_transform"],
                        min_periods=d["min_periods"])

    def _fit_model(self, cfg, d):
        opts = cfg.fit_options()
        if cfg.model == "fe":
            return fit_fe(d)
        if cfg.model == "are":
            return fit_are(d, poolsize=cfg.threads, **opts)

        f = cfg["fit"]
        return fit_svare(d, n_u=f["n_u"], n_h=f["n_h"], width=f["width"], ma_window=f["ma_window"],
                         poolsize=cfg.threads, **opts)

    def _write_residuals(self, cfg, d, states):
        rows = []
        for t, r in zip(d.times, states.level1_residuals):
            rows.append(pd.DataFrame({"t": t, "item": np.arange(len(r)), "residual": r}))
        pd.concat(rows).to_csv(self._out_path(cfg, RESIDUALS_FILENAME), index=False,
                               float_format="%.17g")

    def write_fit(self, cfg, fit, d):
        '''estimates.csv, fit.json, states.csv and residuals.csv'''
        se = fit.se if fit.se is not None else np.full(len(fit.names), np.nan)
        pd.DataFrame({"parameter": fit.names, "estimate": fit.estimates, "se": se}).to_csv(
            self._out_path(cfg, ESTIMATES_FILENAME), index=False, float_format="%.17g")
        dump_json(fit.to_json_obj(), self._out_path(cfg, FIT_FILENAME))
        fit.states.to_frame().to_csv(self._out_path(cfg, STATES_FILENAME), index=False,
                                     float_format="%.17g")
        self._write_residuals(cfg, d, fit.states)

    def _score_holdout(self, cfg, fit, train, test):
        '''Predictions for held-out rows: in-sample periods use their
        own effect, the rest the forecast'''
        rows = []
        for t, label in enumerate(test.times):
            y, X = test.group(t)
            if label in train.times:
                pred = fit.predict(X, t=np.full(len(y), train.index_of(label)))
            else:
                pred = fit.predict(X)
            rows.append(pd.DataFrame({"t": label, "actual": y, "predicted": pred}))

        frame = pd.concat(rows)
        frame.to_csv(self._out_path(cfg, FORECASTS_FILENAME), index=False, float_format="%.17g")
        metrics = prediction_metrics(frame["actual"], frame["predicted"])
        dump_json(metrics, self._out_path(cfg, METRICS_FILENAME))
        return metrics

    def _split_holdout(self, cfg, d):
        '''(training data, held-out data or None) per cfg.holdout'''
        if cfg.holdout is None:
            return d, None
        mode, count = cfg.holdout
        seed = cfg.require_seed("random holdout") if mode == "random_rows" else None
        return split_holdout(d, mode, count, seed)

    def fit(self, cfg):
        '''Fit cfg.model and write its artifacts; returns the FitResult'''
        d = self.load_dataset(cfg)
        cfg.save()

        d, test = self._split_holdout(cfg, d)
        if test is not None and test.T:
            save_csv(test, self._out_path(cfg, HOLDOUT_FILENAME))

        fit = self._fit_model(cfg, d)
        self.write_fit(cfg, fit, d)
        if test is not None and test.T:
            metrics = self._score_holdout(cfg, fit, d, test)
            logging.info(f'Holdout: MAE={metrics["mae"]:.4f}, RMSE={metrics["rmse"]:.4f}')

        logging.info(f'{fit}, AIC={fit.aic:.3f}, BIC={fit.bic:.3f}')
        return fit

    def load_fit(self, cfg):
        return FitResult.from_json_obj(load_json(os.path.join(cfg.out, FIT_FILENAME)))

    def forecast(self, cfg, rows_path):
        '''Predict responses for new rows with the fit in cfg.out

        Rows whose time label is an in-sample period use that period's
        effect; all others get the forecast for the period after the
        sample.  Returns the metrics dict, or None without a truth
        column.
        '''
        fit = self.load_fit(cfg)
        plan = cfg.coding_plan()
        if list(plan.column_names) != list(fit.covariate_names):
            raise CovariateMismatchError(f'Coding plan gives columns {plan.column_names}, '
                                         f'fit has {fit.covariate_names}')

        d = cfg["data"]
        times, X, y = load_covariate_rows(rows_path, plan, time_col=d["time_col"],
                                          response_col=d["response_col"],
                                          log_transform=d["log_transform"])
        cfg.save()

        labels = np.full(len(X), "", dtype=object) if times is None else times.astype(object)
        pred = np.empty(len(X))
        known = np.array([t in fit.time_labels for t in labels], dtype=bool)
        if known.any():
            idx = [fit.time_labels.index(t) for t in labels[known]]
            pred[known] = fit.predict(X[known], t=idx)
        if (~known).any():
            pred[~known] = fit.predict(X[~known])

        frame = pd.DataFrame({"row": np.arange(len(X)), "t": labels, "predicted": pred})
        if y is not None:
            frame["actual"] = y
        frame.to_csv(self._out_path(cfg, FORECASTS_FILENAME), index=False, float_format="%.17g")

        if y is None:
            return None
        metrics = prediction_metrics(y, pred)
        dump_json(metrics, self._out_path(cfg, METRICS_FILENAME))
        return metrics

    def _serial(self, cfg, name, x):
        opts = cfg["diagnose"]
        x = np.asarray(x, dtype=float)
        x = x[np.isfinite(x)]
        try:
            diag = serial_diagnostics(x, opts["lags"], opts["permutations"],
                                      cfg.require_seed("diagnose"), cfg.threads)
        except DiagnosticsError as e:
            logging.warning(f'Skipping serial diagnostics of {name}: {e}')
            return None
        diag.to_frame().to_csv(self._out_path(cfg, f'serial_{name}.csv'), index=False,
                               float_format="%.17g")
        return diag

    def diagnose(self, cfg):
        '''Moments, variance homogeneity and serial diagnostics of a fit

        Writes moments.json, residual_sds.csv and serial_<series>.csv for
        the level-2 residuals (eta, plus nu for SVARE) and the residual
        SD series s_t.
        '''
        cfg.require_seed("diagnose")
        fit = self.load_fit(cfg)
        d, _ = self._split_holdout(cfg, self.load_dataset(cfg))
        if list(d.times) != fit.time_labels or d.n_total != fit.n_total:
            raise DataLoadError(f'Data ({d.T} periods, {d.n_total} rows) differ from the fitted data '
                                f'({len(fit.time_labels)} periods, {fit.n_total} rows); diagnose needs '
                                f'the data and holdout the model was fit with')
        cfg.save()

        states = recompute_states(d, fit)
        residuals = states.level1_residuals

        m = moments(np.concatenate(residuals))
        summary = {"model": fit.model, "level1": m.to_json_obj()}
        try:
            summary["levene"] = rank_levene(residuals).to_json_obj()
        except DiagnosticsError as e:
            logging.warning(f'Skipping rank Levene test: {e}')
        dump_json(summary, self._out_path(cfg, MOMENTS_FILENAME))

        sds = residual_sds(residuals)
        pd.DataFrame({"t": list(d.times), "n": d.group_sizes, "sd": sds}).to_csv(
            self._out_path(cfg, RESIDUAL_SDS_FILENAME), index=False, float_format="%.17g")

        series = {"sd": sds}
        if fit.model in ("are", "svare"):
            series["eta"] = states.eta_hat
        if fit.model == "svare":
            series["nu"] = states.nu_hat
        for name, x in series.items():
            self._serial(cfg, name, x)
        return summary

    def index(self, cfg):
        '''index.csv from the fit in cfg.out'''
        fit = self.load_fit(cfg)
        opts = cfg["index"]
        pi = price_index(fit, opts["base"], opts["log_base"])
        cfg.save()
        pi.to_frame().to_csv(self._out_path(cfg, INDEX_FILENAME), index=False, float_format="%.17g")
        return pi

    def simulate(self, cfg):
        '''data.csv, latent.csv and a config.json that fits data.csv'''
        sim_cfg = cfg.sim_config()
        result = simulate(sim_cfg)

        data_path = self._out_path(cfg, SIM_DATA_FILENAME)
        save_csv(result.dataset, data_path, time_col="time", response_col="response")
        pd.DataFrame({"t": list(result.dataset.times), "u": result.u, "h": result.h}).to_csv(
            self._out_path(cfg, SIM_LATENT_FILENAME), index=False, float_format="%.17g")

        fit_cfg = cfg.with_overrides({
            "model": sim_cfg.model,
            "data": {"path": os.path.abspath(data_path), "time_col": "time",
                     "response_col": "response", "log_transform": False},
        })
        dump_json(fit_cfg.tree, self._out_path(cfg, SIM_CONFIG_FILENAME))
        cfg.save()
        return result
