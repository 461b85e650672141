"""Looped skeleton-to-gloss model with hyperbolic alignment.

Thin Python layer over the native core: configurations and reports are
plain dicts, vectors are NumPy arrays.
"""

import json

from . import _loopalign as _core
from ._loopalign import (
    ConfigError,
    DataError,
    DomainError,
    Error,
    IoError,
    ShapeError,
    TrainingError,
    ablation_axes,
    accuracy,
    evaluate,
    export_embeddings,
    frechet_mean,
    generate_synthetic,
    lorentz_dist,
    lorentz_to_poincare,
    mobius_add,
    poincare_dist,
    poincare_exp0,
    poincare_log0,
    poincare_to_lorentz,
)

__version__ = "0.1.0"


def config(base=None, overrides=()):
    """Defaults merged with `base` (a dict) and dotted overrides, validated."""
    text = json.dumps(base) if base else ""
    return json.loads(_core.config_json(text, list(overrides)))


def train(cfg):
    """Trains on cfg["data"]["manifest"]; returns losses, checkpoint path and eval."""
    return _core.train(json.dumps(config(cfg)))


def geomtest(seed=0):
    return [_core.geomtest(seed), _core.frechet_suite(seed)]


def gradcheck(seed=0):
    return _core.gradcheck(seed)
