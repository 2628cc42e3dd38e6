"""Experiment harness: configuration, drivers and the ``sdmd-lab`` CLI."""

from .config import COMMANDS, DEFAULTS, load_config, resolve_config
from .experiments import invariant_suite, loglog_slope, quadrature_gram, run

__all__ = ["COMMANDS", "DEFAULTS", "load_config", "resolve_config", "run", "invariant_suite", "quadrature_gram",
           "loglog_slope"]
