"""Generative dataset condensation: condense a labelled image set into a
codebook plus a conditional generator, then synthesize and evaluate."""

from ._gencond import (
    ArgumentError,
    CondensedModel,
    ConfigError,
    Dataset,
    DivergenceError,
    IntegrityError,
    LoadError,
    ShapeError,
    __version__,
    condense,
    coreset,
    evaluate,
    herding_select,
    kcenter_select,
    load_checkpoint,
    load_dataset,
    losses,
    param_count,
    resolve_config,
    toy_dataset,
)

__all__ = [
    "ArgumentError",
    "CondensedModel",
    "ConfigError",
    "Dataset",
    "DivergenceError",
    "IntegrityError",
    "LoadError",
    "ShapeError",
    "condense",
    "coreset",
    "evaluate",
    "herding_select",
    "kcenter_select",
    "load_checkpoint",
    "load_dataset",
    "losses",
    "param_count",
    "resolve_config",
    "toy_dataset",
]
