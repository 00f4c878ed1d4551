"""Python front end for the spreadlab C++ core.

Experiments take the same flat ``key = value`` text as the command-line tool;
``overrides`` is a dict of extra keys applied on top.
"""

from ._core import (
    BasisSpec,
    SpreadlabError,
    canonical_config,
    compute_experiment,
    config_keys,
    inf_cone,
    ns_bracket_ranks,
    ns_condition,
    report,
    run_experiment,
    spectrum,
    validate_config,
    version,
    wilson_interval,
)

__all__ = [
    "BasisSpec",
    "SpreadlabError",
    "canonical_config",
    "compute_experiment",
    "config_keys",
    "inf_cone",
    "ns_bracket_ranks",
    "ns_condition",
    "report",
    "run_experiment",
    "spectrum",
    "validate_config",
    "version",
    "wilson_interval",
]
