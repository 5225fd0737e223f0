"""Weighted partial regular vine copulas."""
from .build import (
    VineDomainError,
    build_candidate_vine,
    inverse_levels,
    score_vine,
    select_structure,
)
from .density import (
    VineFitError,
    assign_copulas,
    gaussian_vine,
    inverse_rosenblatt,
    sample,
    sampling_order,
    truncate,
    vine_log_density,
)
from .estimator import WeightedPartialVine
from .structure import VineEdge, VineStructure, VineStructureError, dumps, loads, read, validate_trees, write

__all__ = [
    "VineDomainError",
    "VineEdge",
    "VineFitError",
    "VineStructure",
    "VineStructureError",
    "WeightedPartialVine",
    "assign_copulas",
    "build_candidate_vine",
    "dumps",
    "gaussian_vine",
    "inverse_levels",
    "inverse_rosenblatt",
    "loads",
    "read",
    "sample",
    "sampling_order",
    "score_vine",
    "select_structure",
    "truncate",
    "validate_trees",
    "vine_log_density",
    "write",
]
