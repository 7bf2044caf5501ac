"""Deck parsing, sweep workflows, result files and the command line."""

from .deck import Deck, KPointsSpec, parse_deck, serialize_deck
from .workflows import (
    TABLE41_HEADER,
    TABLE42_HEADER,
    BindingCurve,
    BindingRow,
    GapRow,
    RunSettings,
    StructureRecipe,
    binding_curve,
    detect_pattern,
    distance_list,
    gap_vs_distance,
    make_system,
    parabolic_minimum,
    run_deck,
    run_point,
    strain_sweep,
    table41_tsv,
    table42_tsv,
    tag_layers,
)

__all__ = [
    "BindingCurve",
    "BindingRow",
    "Deck",
    "GapRow",
    "KPointsSpec",
    "RunSettings",
    "StructureRecipe",
    "TABLE41_HEADER",
    "TABLE42_HEADER",
    "binding_curve",
    "detect_pattern",
    "distance_list",
    "gap_vs_distance",
    "make_system",
    "parabolic_minimum",
    "parse_deck",
    "run_deck",
    "run_point",
    "serialize_deck",
    "strain_sweep",
    "table41_tsv",
    "table42_tsv",
    "tag_layers",
]
