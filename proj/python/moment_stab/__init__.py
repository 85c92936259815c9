"""Second-moment stability analysis of stochastic linear systems.

Models are given as JSON text (or a dict, which is serialized first). Results
are plain dicts and nested lists.
"""

import json as _json

from . import _core
from ._core import (
    IidModel,
    MarkovJumpModel,
    PeriodicIidModel,
    PolytopicMartingaleModel,
    ModelError,
    NumericalError,
    embed_iid_as_markov,
    estimate_decay_rate,
    estimate_second_moment,
    check_quadratic,
    gform_certificate,
    lambda_min,
    martingale_vertex_certificate,
    moment_operator,
    per_step_radius,
    run_cli,
    second_moment_radius,
    simplex_martingale_step,
    solve_coupled,
    solve_stein,
    validate,
)


Model = (IidModel, PeriodicIidModel, MarkovJumpModel, PolytopicMartingaleModel)


def parse(model):
    """Build a Model from JSON text, a dict, or an existing Model."""
    if isinstance(model, Model):
        return model
    if isinstance(model, dict):
        model = _json.dumps(model)
    return _core.parse(model)


def load(path):
    with open(path, encoding="utf-8") as f:
        return _core.parse(f.read())


__all__ = [
    "IidModel",
    "MarkovJumpModel",
    "Model",
    "PeriodicIidModel",
    "PolytopicMartingaleModel",
    "ModelError",
    "NumericalError",
    "check_quadratic",
    "embed_iid_as_markov",
    "estimate_decay_rate",
    "estimate_second_moment",
    "gform_certificate",
    "lambda_min",
    "load",
    "martingale_vertex_certificate",
    "moment_operator",
    "parse",
    "per_step_radius",
    "run_cli",
    "second_moment_radius",
    "simplex_martingale_step",
    "solve_coupled",
    "solve_stein",
    "validate",
]
