"""Normed modules realized as fiber bundles over a finite space.

Public surface:

* :class:`FiberBundle` / :class:`Section`: per-point Gram fibers and their sections.
* :func:`exterior_power` / :func:`wedge`: alternating powers.
* :func:`generated_submodule` / :func:`dimensional_decomposition`: spans and local rank.
* :class:`PointMap` / :func:`pullback_module`: pullbacks along point maps.
"""

from .bundle import FiberBundle, Section, TensorSection, riesz_dual
from .exterior import exterior_power, wedge, wedge_forms
from .pullback import PointMap, induced_map, pullback_module, pullback_section
from .submodule import dimensional_decomposition, generated_submodule

__all__ = [
    "FiberBundle",
    "PointMap",
    "Section",
    "TensorSection",
    "dimensional_decomposition",
    "exterior_power",
    "generated_submodule",
    "induced_map",
    "pullback_module",
    "pullback_section",
    "riesz_dual",
    "wedge",
    "wedge_forms",
]
