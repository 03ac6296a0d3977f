'''Run configuration: built-in defaults, then the JSON file, then flags'''
import copy
import json
import logging
import math
import os

from .baseline import AreParams, FeParams
from .dataset import CodingPlan, read_frame
from .json_serdes import JSONSerDes, dump_json
from .simulate import SimConfig
from .svcore import SvareParams
from .util import RESOLVED_CONFIG_FILENAME

MODELS = ("fe", "are", "svare")

DEFAULTS = {
    "model": "svare",
    "out": "hedvol_out",
    "seed": None,
    "threads": 1,
    "data": {
        "path": None,
        "time_col": "time",
        "response_col": "price",
        "log_transform": True,
        "min_periods": 2,
        "holdout": None,
    },
    # null: every other column numeric; else a CodingPlan object or
    # {"categorical": [...], "numeric": [...], "baselines": {...}}
    "coding": None,
    "fit": {
        "n_u": None,
        "n_h": None,
        "width": 3.0,
        "ma_window": 3,
        "gtol": 1e-5,
        "ftol": 1e-9,
        "max_iter": 500,
    },
    "diagnose": {
        "lags": 10,
        "permutations": 199,
    },
    "index": {
        "base": None,
        "log_base": "e",
    },
    "simulate": {
        "model": "svare",
        "T": 28,
        "group_sizes": 100,
        "start_year": 1998,
        "covariates": {"kind": "normal"},
        "params": {
            "beta0": 3.0,
            "beta": [0.2, -0.1, 0.05],
            "rho": 0.848,
            "sigma_eta": math.sqrt(0.021),
            "alpha": -0.142,
            "delta": 0.931,
            "sigma_nu": math.sqrt(0.158),
        },
    },
}


SIM_PARAM_FIELDS = {
    "fe": (FeParams, ("beta0_t", "beta", "sigma2")),
    "are": (AreParams, ("beta0", "beta", "rho", "sigma2_eta", "sigma2")),
    "svare": (SvareParams, ("beta0", "beta", "rho", "sigma_eta", "alpha", "delta", "sigma_nu")),
}


class ConfigError(ValueError):
    '''Configuration file or flags are invalid'''
    pass


def _merge(base, override):
    '''Deep merge of dicts; override wins, None in override is skipped'''
    result = copy.deepcopy(base)
    for k, v in override.items():
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(result.get(k), dict):
            result[k] = _merge(result[k], v)
        else:
            result[k] = copy.deepcopy(v)
    return result


def parse_holdout(spec):
    '''"last" -> ("last_period", 0); "random:N" -> ("random_rows", N)'''
    if spec is None:
        return None
    spec = str(spec)
    if spec == "last":
        return "last_period", 0
    if spec.startswith("random:"):
        try:
            count = int(spec[len("random:"):])
        except ValueError:
            raise ConfigError(f'Bad holdout "{spec}": expected random:N')
        if count < 0:
            raise ConfigError(f'Bad holdout "{spec}": N must be >= 0')
        return "random_rows", count
    raise ConfigError(f'Bad holdout "{spec}": expected "last" or "random:N"')


class RunConfig(JSONSerDes):
    '''The fully resolved configuration tree of one run'''
    JSON_CLASSNAME = "RunConfig"

    def __init__(self, tree=None):
        self.tree = _merge(DEFAULTS, tree or {})
        self.validate()

    def validate(self):
        t = self.tree
        if t["model"] not in MODELS:
            raise ConfigError(f'model must be one of {", ".join(MODELS)}, got "{t["model"]}"')
        if int(t["threads"]) < 1:
            raise ConfigError(f'threads must be >= 1, got {t["threads"]}')
        parse_holdout(t["data"]["holdout"])
        for key in ("n_u", "n_h"):
            n = t["fit"][key]
            if n is not None and (int(n) < 3 or int(n) % 2 == 0):
                raise ConfigError(f'fit.{key} must be an odd integer >= 3, got {n}')
        if str(t["index"]["log_base"]) not in ("e", "10"):
            raise ConfigError(f'index.log_base must be "e" or "10"')
        return self

    @classmethod
    def load(cls, path=None, **flags):
        '''Defaults, then the JSON file at path (if any), then flags

        flags use the CLI names: model, data, out, seed, threads, nu,
        nh, base, holdout.  None means "not given".
        '''
        tree = {}
        if path is not None:
            try:
                with open(path, "r") as f:
                    tree = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f'{path}: not valid JSON: {e}')
            if tree.get("_json_classname") == cls.JSON_CLASSNAME:
                tree = tree["tree"]
            logging.debug(f'Loaded config from {path}')

        overrides = {
            "model": flags.get("model"),
            "out": flags.get("out"),
            "seed": flags.get("seed"),
            "threads": flags.get("threads"),
            "data": {"path": flags.get("data"), "holdout": flags.get("holdout")},
            "fit": {"n_u": flags.get("nu"), "n_h": flags.get("nh")},
            "index": {"base": flags.get("base")},
        }
        return cls(_merge(tree, overrides))

    def __getitem__(self, key):
        return self.tree[key]

    @property
    def model(self):
        return self.tree["model"]

    @property
    def out(self):
        return self.tree["out"]

    @property
    def seed(self):
        return self.tree["seed"]

    @property
    def threads(self):
        return int(self.tree["threads"])

    @property
    def holdout(self):
        return parse_holdout(self.tree["data"]["holdout"])

    def require_seed(self, what):
        if self.seed is None:
            raise ConfigError(f'{what} needs a seed (--seed or "seed" in the config)')
        return int(self.seed)

    def data_path(self):
        path = self.tree["data"]["path"]
        if path is None:
            raise ConfigError('No data file given (--data or data.path)')
        return path

    def coding_plan(self):
        '''The CodingPlan for the data file'''
        coding = self.tree["coding"]
        if isinstance(coding, dict) and coding.get("_json_classname") == CodingPlan.JSON_CLASSNAME:
            return CodingPlan.from_json_obj(coding)

        d = self.tree["data"]
        frame, _ = read_frame(self.data_path(), [d["time_col"], d["response_col"]])
        if coding is None:
            others = [c for c in frame.columns if c not in (d["time_col"], d["response_col"])]
            return CodingPlan.numeric(others)
        return CodingPlan.from_frame(frame, categorical=coding.get("categorical", ()),
                                     numeric=coding.get("numeric", ()),
                                     baselines=coding.get("baselines"))

    def fit_options(self):
        f = self.tree["fit"]
        return {k: f[k] for k in ("gtol", "ftol", "max_iter")}

    def sim_config(self):
        s = self.tree["simulate"]
        model = s["model"]
        if model not in SIM_PARAM_FIELDS:
            raise ConfigError(f'simulate.model must be one of {", ".join(MODELS)}')

        # The params section is merged over the SVARE defaults; keep
        # only the fields of the chosen model.
        cls, fields = SIM_PARAM_FIELDS[model]
        missing = [k for k in fields if k not in s["params"]]
        if missing:
            raise ConfigError(f'simulate.params for {model} lacks {", ".join(missing)}')

        p = cls(**{k: s["params"][k] for k in fields})
        return SimConfig(model, p, s["T"], s["group_sizes"], self.require_seed("simulate"),
                         covariates=s.get("covariates"), start_year=s.get("start_year", 1998))

    def with_overrides(self, tree):
        return RunConfig(_merge(self.tree, tree))

    def save(self, out_dir=None):
        out_dir = out_dir or self.out
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, RESOLVED_CONFIG_FILENAME)
        dump_json(self.tree, path)
        return path

    def to_json_obj(self):
        return {
            "_json_classname": self.JSON_CLASSNAME,
            "tree": self.tree,
        }

    @classmethod
    def from_json_obj(cls, obj):
        cls._check_json_obj(obj)
        return RunConfig(obj["tree"])
