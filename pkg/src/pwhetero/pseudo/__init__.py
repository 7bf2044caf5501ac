"""Pseudopotentials, UPF name grammar, separable projectors and Grimme-D2."""

from .d2 import D2Params, grimme_d2, load_d2_params
from .kb import ProjectorSet, build_projectors, kb_apply, real_spherical_harmonics
from .potential import (
    Projector,
    Pseudopotential,
    check_norm_conservation,
    coulomb_model,
    erf_model,
    load_pseudo,
    log_derivative,
    radial_charge,
    resolve_pseudo,
    save_pseudo,
    vloc_reciprocal,
)
from .upf import PseudoMeta, parse_upf_name

__all__ = [
    "D2Params",
    "Projector",
    "ProjectorSet",
    "PseudoMeta",
    "Pseudopotential",
    "build_projectors",
    "check_norm_conservation",
    "coulomb_model",
    "erf_model",
    "grimme_d2",
    "kb_apply",
    "load_d2_params",
    "load_pseudo",
    "log_derivative",
    "parse_upf_name",
    "radial_charge",
    "real_spherical_harmonics",
    "resolve_pseudo",
    "save_pseudo",
    "vloc_reciprocal",
]
