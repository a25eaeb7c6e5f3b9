"""Experiment configuration: schema validation, defaults and hashing."""
import copy
import hashlib
import json
from importlib import resources

import jsonschema

SCHEMA_VERSION = 1

ANALYSIS_DEFAULTS = {
    "eta_grid": [1e-2 * 0.5 ** i for i in range(6)],
    "gap_tasks": 3,
    "gap_alphas": [0.5],
    "lemma_m": [1, 2],
    "h": None,                      # k - 2 when unset
    "alpha_sweep": [0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
    "bound_activations": ["tanh", "sigmoid"],
    "bound_eta": 0.05,
    "bound_alpha": 0.5,
    "dominance_epochs": 10,
    "pca_rounds": 8,
}
TRAIN_DEFAULTS = {"convergence_tol": 1e-3, "max_epochs": 5000}


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def schema():
    text = resources.files("tavlab").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _path(err):
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        # "'k' is a required property" -> point at the missing field
        missing = err.message.split("'")[1]
        parts.append(missing)
    return ".".join(parts) or "<root>"


def validate(raw):
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(_path(err), err.message)
    return raw


def with_defaults(raw):
    cfg = copy.deepcopy(raw)
    cfg["arch"].setdefault("bias", False)
    for key, val in TRAIN_DEFAULTS.items():
        cfg["train"].setdefault(key, val)
    analysis = cfg.setdefault("analysis", {})
    for key, val in ANALYSIS_DEFAULTS.items():
        analysis.setdefault(key, copy.deepcopy(val))
    if analysis["h"] is None:
        analysis["h"] = cfg["train"]["k"] - 2
    cfg.setdefault("name", "experiment")
    if cfg["arch"]["layer_dims"][-1] != cfg["tasks"]["K"]:
        raise ConfigError("arch.layer_dims", "last layer width must equal tasks.K")
    grid = analysis["eta_grid"]
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("analysis.eta_grid", "must be strictly decreasing")
    return cfg


def load(path, overrides=None):
    """Read, override, validate and complete a config file.

    ``overrides`` maps dotted paths (``train.eta``) to values and is applied
    before validation, so overridden values are checked too.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    except OSError as exc:
        raise ConfigError("", f"cannot read config: {exc}") from None
    for dotted, value in (overrides or {}).items():
        node = raw
        *head, last = dotted.split(".")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    validate(raw)
    return with_defaults(raw)


def canonical(cfg):
    """Config as stored in artifacts: without the output directory."""
    out = copy.deepcopy(cfg)
    out.pop("outdir", None)
    return out


def config_hash(cfg):
    blob = json.dumps(canonical(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
