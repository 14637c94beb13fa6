"""DMD-enhanced neural operator: PDE data generation, DMD features, training.

Configs may be given as JSON text or as dicts; dicts are serialized here.
"""

import json as _json

from . import _core
from ._core import (
    Dataset,
    Decomposition,
    DegenerateInput,
    FormatError,
    InvalidInput,
    IoError,
    Model,
    NumericalError,
    burgers_step,
    cfl_number,
    dmd,
    heat_step,
    laplace_step,
    split_samples,
)

__all__ = [
    "Dataset",
    "Decomposition",
    "DegenerateInput",
    "FormatError",
    "InvalidInput",
    "IoError",
    "Model",
    "NumericalError",
    "burgers_step",
    "cfl_number",
    "default_config",
    "dmd",
    "generate",
    "heat_step",
    "laplace_step",
    "normalize_config",
    "split_samples",
    "train",
]


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def default_config(equation):
    """Default experiment config for "laplace", "heat" or "burgers" as a dict."""
    return _json.loads(_core.default_config(equation))


def normalize_config(config):
    """Validated config with every default filled in, as a dict."""
    return _json.loads(_core.normalize_config(_text(config)))


def generate(config, warn=None):
    """Dataset described by an experiment config."""
    return _core.generate(_text(config), warn)


def train(dataset, config, baseline=None, progress=None):
    """Trains on `dataset`; returns {model, history, train_samples, test_samples}.

    `progress(epoch, train_loss, test_loss)` is called at every logged epoch.
    """
    return _core.train(dataset, _text(config), baseline, progress)
