"""Split vertical federated learning simulator with client-level unlearning."""

from ._core import (
    ConfigError,
    NumericError,
    Experiment,
    checkpoint_info,
    coordinated_update,
    cosine,
    kl_predictive,
    load_config,
    parse_config,
    project_retention,
    roc_auc,
    sample_unit_sphere,
)

__all__ = [
    "ConfigError",
    "NumericError",
    "Experiment",
    "checkpoint_info",
    "coordinated_update",
    "cosine",
    "kl_predictive",
    "load_config",
    "parse_config",
    "project_retention",
    "roc_auc",
    "sample_unit_sphere",
]
