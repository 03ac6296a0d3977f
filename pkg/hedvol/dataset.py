from functools import cached_property
import logging
import math

import numpy as np
import pandas as pd

from .json_serdes import JSONSerDes
from .util import time_sort_key


class DataLoadError(ValueError):
    '''Input file cannot be turned into a Dataset'''
    pass


class HoldoutError(ValueError):
    '''Requested holdout split is impossible for this Dataset'''
    pass


def _parse_floats(raw):
    '''Strings to floats, NaN where unparseable; exact for %.17g text'''
    def conv(s):
        try:
            return float(s)
        except ValueError:
            return math.nan
    return np.array([conv(s) for s in raw], dtype=float)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class Dataset:
    '''An unbalanced repeated cross-section

    * times: ordered time-group labels
    * responses: one vector y_t per label (already log-transformed)
    * designs: one (n_t x k) covariate matrix X_t per label, with no
      intercept column
    * covariate_names: the k column labels

    Arrays are frozen on construction, so a Dataset can be shared
    freely between threads and processes.
    '''

    def __init__(self, times, responses, designs, covariate_names):
        self.times = tuple(str(t) for t in times)
        self.covariate_names = tuple(covariate_names)
        k = len(self.covariate_names)

        if len(responses) != len(self.times) or len(designs) != len(self.times):
            raise ValueError('One response vector and one design per time label required')
        if len(set(self.times)) != len(self.times):
            raise ValueError('Duplicate time labels')

        self.responses = tuple(_readonly(y).reshape(-1) for y in responses)
        self.designs = tuple(_readonly(X).reshape(len(y), k)
                             for y, X in zip(self.responses, designs))

        for t, y, X in zip(self.times, self.responses, self.designs):
            if len(y) < 1:
                raise ValueError(f'Time group "{t}" is empty')
            if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
                raise ValueError(f'Time group "{t}" has non-finite values')

    @property
    def T(self):
        return len(self.times)

    @property
    def k(self):
        return len(self.covariate_names)

    @property
    def group_sizes(self):
        return np.array([len(y) for y in self.responses], dtype=int)

    @property
    def n_total(self):
        return int(self.group_sizes.sum())

    def group(self, t):
        '''(y_t, X_t) for the time index t'''
        return self.responses[t], self.designs[t]

    def index_of(self, label):
        try:
            return self.times.index(str(label))
        except ValueError:
            raise KeyError(f'Unknown time label "{label}"')

    @cached_property
    def stacked(self):
        '''(y, X, group_index) with all groups stacked in time order'''
        y = np.concatenate(self.responses) if self.T else np.zeros(0)
        X = np.vstack(self.designs) if self.T else np.zeros((0, self.k))
        g = np.repeat(np.arange(self.T), self.group_sizes)
        for a in (y, X, g):
            a.flags.writeable = False
        return y, X, g

    def residual_stats(self, beta0, beta):
        '''Per-group sufficient statistics of r = y - beta0 - X beta

        Returns (n_t, mean_t, ss_t) with ss_t the within-group sum of
        squared deviations from mean_t.
        '''
        y, X, g = self.stacked
        r = y - beta0 - X @ np.asarray(beta, dtype=float).reshape(self.k)
        n = self.group_sizes
        mean = np.bincount(g, weights=r, minlength=self.T) / n
        ss = np.bincount(g, weights=(r - mean[g])**2, minlength=self.T)
        return n, mean, ss

    def ungroup(self, values):
        '''Split a stacked per-row vector back into per-group vectors'''
        return np.split(np.asarray(values), np.cumsum(self.group_sizes)[:-1])

    def __eq__(self, rhs):
        if self.__class__ != rhs.__class__:
            return NotImplemented

        if self.times != rhs.times or self.covariate_names != rhs.covariate_names:
            return False

        for a, b in zip(self.responses + self.designs, rhs.responses + rhs.designs):
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        return True

    def __str__(self):
        return f'Dataset(T={self.T}, n={self.n_total}, k={self.k})'


class CodingPlan(JSONSerDes):
    '''How raw CSV columns become covariate columns

    Each variable is a dict with "name" and "kind".  Categorical
    variables also carry "categories" (ordered) and "baseline"; they
    are emitted as one dummy column per non-baseline category, named
    "name[category]".  Numeric variables pass through unchanged.
    '''
    JSON_CLASSNAME = "CodingPlan"

    def __init__(self, variables):
        self.variables = []
        for v in variables:
            v = dict(v)
            if v.get("kind") not in ("numeric", "categorical"):
                raise ValueError(f'Variable {v.get("name")}: kind must be numeric or categorical')
            if v["kind"] == "categorical":
                v["categories"] = [str(c) for c in v["categories"]]
                v["baseline"] = str(v.get("baseline", v["categories"][0]))
                if v["baseline"] not in v["categories"]:
                    raise ValueError(f'Variable {v["name"]}: baseline "{v["baseline"]}" not among categories')
            self.variables.append(v)

    @classmethod
    def numeric(cls, names):
        return cls([{"name": n, "kind": "numeric"} for n in names])

    @classmethod
    def from_frame(cls, frame, categorical=(), numeric=(), baselines=None):
        '''Build a plan from the values seen in a frame

        Categories are taken in order of first appearance; the baseline
        is the first one unless given in `baselines`.
        '''
        baselines = baselines or {}
        variables = []
        for name in categorical:
            cats = list(pd.unique(frame[name].astype(str)))
            variables.append({"name": name, "kind": "categorical", "categories": cats,
                              "baseline": baselines.get(name, cats[0])})
        for name in numeric:
            variables.append({"name": name, "kind": "numeric"})
        return cls(variables)

    @property
    def source_columns(self):
        return [v["name"] for v in self.variables]

    @property
    def column_names(self):
        result = []
        for v in self.variables:
            if v["kind"] == "numeric":
                result.append(v["name"])
            else:
                result += [f'{v["name"]}[{c}]' for c in v["categories"] if c != v["baseline"]]
        return result

    def encode(self, frame, line_numbers):
        '''Turn the plan's columns of a string frame into a design matrix'''
        columns = []
        for v in self.variables:
            raw = frame[v["name"]]
            if v["kind"] == "numeric":
                values = _parse_floats(raw)
                bad = np.flatnonzero(~np.isfinite(values))
                if len(bad):
                    i = bad[0]
                    raise DataLoadError(f'line {line_numbers[i]}, column "{v["name"]}": '
                                        f'not a number: "{raw.iloc[i]}"')
                columns.append(values)
                continue

            unknown = np.flatnonzero(~raw.isin(v["categories"]).to_numpy())
            if len(unknown):
                i = unknown[0]
                raise DataLoadError(f'line {line_numbers[i]}, column "{v["name"]}": '
                                    f'unknown category "{raw.iloc[i]}"')
            for c in v["categories"]:
                if c != v["baseline"]:
                    columns.append((raw == c).to_numpy(dtype=float))

        if not columns:
            return np.zeros((len(frame), 0))
        return np.column_stack(columns)

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "variables": self.variables,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        return CodingPlan(obj["variables"])

    def __eq__(self, rhs):
        if self.__class__ != rhs.__class__:
            return NotImplemented
        return self.variables == rhs.variables


def _group_frame(frame, time_col, y, X, covariate_names, min_periods):
    labels = sorted(pd.unique(frame[time_col]), key=time_sort_key)
    if len(labels) < min_periods:
        raise DataLoadError(f'Need at least {min_periods} time groups, found {len(labels)}')

    time_values = frame[time_col].to_numpy()
    responses, designs = [], []
    for label in labels:
        rows = np.flatnonzero(time_values == label)
        responses.append(y[rows])
        designs.append(X[rows])

    return Dataset(labels, responses, designs, covariate_names)


def read_frame(path, columns):
    '''(internal) Read a CSV as strings, checking the required columns'''
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataLoadError(f'{path}: file is empty')

    for col in columns:
        if col not in frame.columns:
            raise DataLoadError(f'{path}: missing column "{col}"')

    # Header is line 1
    line_numbers = np.arange(len(frame)) + 2
    for col in columns:
        blank = np.flatnonzero((frame[col].str.strip() == "").to_numpy())
        if len(blank):
            raise DataLoadError(f'line {line_numbers[blank[0]]}, column "{col}": missing value')

    return frame, line_numbers


def parse_response(frame, response_col, line_numbers, log_transform):
    raw = frame[response_col]
    y = _parse_floats(raw)
    bad = np.flatnonzero(~np.isfinite(y))
    if len(bad):
        i = bad[0]
        raise DataLoadError(f'line {line_numbers[i]}, column "{response_col}": not a number: "{raw.iloc[i]}"')

    if log_transform:
        bad = np.flatnonzero(y <= 0)
        if len(bad):
            i = bad[0]
            raise DataLoadError(f'line {line_numbers[i]}, column "{response_col}": '
                                f'non-positive price {y[i]} cannot be log-transformed')
        y = np.log10(y)
    return y


def load_csv(path, plan, time_col="time", response_col="price", log_transform=True,
             min_periods=2):
    '''Load a repeated cross-section from a CSV file

    * path: UTF-8 CSV with a header row
    * plan: the CodingPlan for the covariate columns
    * time_col: column holding the ordinal time labels
    * response_col: column holding the price (or already-logged response)
    * log_transform: if True, responses are replaced by log10(price)
    * min_periods: smallest acceptable number of time groups

    Rows are grouped by time label, labels sorted with zero-padded digit
    runs, and rows keep their file order within a group.
    '''
    logging.debug(f'Loading {path} (time={time_col}, response={response_col})')
    frame, line_numbers = read_frame(path, [time_col, response_col] + plan.source_columns)
    if len(frame) == 0:
        raise DataLoadError(f'{path}: no data rows')

    y = parse_response(frame, response_col, line_numbers, log_transform)
    X = plan.encode(frame, line_numbers)

    result = _group_frame(frame, time_col, y, X, plan.column_names, min_periods)
    logging.info(f'Loaded {result} from {path}')
    return result


def load_covariate_rows(path, plan, time_col="time", response_col="price",
                        log_transform=True):
    '''Load rows for prediction: covariates always, time and truth when present

    Returns (times, X, y_true) with times/y_true None when the columns
    are missing from the file.
    '''
    frame, line_numbers = read_frame(path, plan.source_columns)
    if len(frame) == 0:
        raise DataLoadError(f'{path}: no data rows')

    X = plan.encode(frame, line_numbers)
    times = frame[time_col].to_numpy(dtype=str) if time_col in frame.columns else None

    y = None
    if response_col in frame.columns:
        y = parse_response(frame, response_col, line_numbers, log_transform)
    return times, X, y


def save_csv(d, path, time_col="time", response_col="response"):
    '''Write the Dataset in the standard layout

    Floats are written with 17 significant digits, so reloading with
    CodingPlan.numeric(d.covariate_names) and log_transform=False gives
    back identical matrices.
    '''
    y, X, g = d.stacked
    frame = pd.DataFrame(X, columns=list(d.covariate_names))
    frame.insert(0, response_col, y)
    frame.insert(0, time_col, np.asarray(d.times, dtype=object)[g] if d.T else [])
    frame.to_csv(path, index=False, float_format="%.17g")
    logging.debug(f'Saved {d} to {path}')


def split_holdout(d, mode="last_period", count=0, seed=None):
    '''Split a Dataset into (train, test)

    * mode "last_period": the final time group becomes the test set
    * mode "random_rows": `count` rows drawn uniformly (with `seed`),
      never emptying a group of the training set

    The test Dataset only contains groups that lost rows, so it may be
    empty (T == 0).
    '''
    if mode == "last_period":
        if d.T < 3:
            raise HoldoutError(f'last_period holdout needs T >= 3, got {d.T}')
        train = Dataset(d.times[:-1], d.responses[:-1], d.designs[:-1], d.covariate_names)
        test = Dataset(d.times[-1:], d.responses[-1:], d.designs[-1:], d.covariate_names)
        return train, test

    if mode != "random_rows":
        raise HoldoutError(f'Unknown holdout mode "{mode}"')

    count = int(count)
    if count < 0 or count > d.n_total - d.T:
        raise HoldoutError(f'Cannot hold out {count} rows from {d.n_total} rows in {d.T} groups '
                           f'without emptying a group')

    rng = np.random.default_rng(seed)
    _, _, g = d.stacked

    # Reserve one row per group for training, then draw from the rest.
    offsets = np.concatenate([[0], np.cumsum(d.group_sizes)[:-1]])
    keepers = offsets + np.array([rng.integers(n) for n in d.group_sizes], dtype=int)
    eligible = np.setdiff1d(np.arange(d.n_total), keepers)
    held = np.zeros(d.n_total, dtype=bool)
    held[rng.choice(eligible, size=count, replace=False)] = True

    train_parts = ([], [], [])
    test_parts = ([], [], [])
    for t, label in enumerate(d.times):
        y, X = d.group(t)
        h = held[g == t]
        train_parts[0].append(label)
        train_parts[1].append(y[~h])
        train_parts[2].append(X[~h])
        if h.any():
            test_parts[0].append(label)
            test_parts[1].append(y[h])
            test_parts[2].append(X[h])

    logging.debug(f'Held out {count} rows from {len(test_parts[0])} groups')
    return (Dataset(*train_parts, d.covariate_names),
            Dataset(*test_parts, d.covariate_names))
