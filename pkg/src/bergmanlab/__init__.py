"""Numerical laboratory for weighted Bergman projections on model domains."""

from .domination import (
    SparseEvaluator,
    build_direction_set,
    carleson_embedding_ratio,
    carleson_packing_constant,
    domination_constant,
    random_vector_polynomial,
)
from .dyadic import (
    AdjacentFamily,
    build_ball2_family,
    build_disc_family,
    build_family,
    load_system,
    make_ball2_sample,
    save_system,
    verify_structure,
)
from .geometry import Ball2Geometry, DiscGeometry, make_geometry
from .harness import (
    SweepConfig,
    WeightFamilySpec,
    default_config,
    generate_weight,
    run_sweep,
)
from .projection import (
    assemble_projection,
    build_averaging_grid,
    build_grid,
    holomorphic_embedding_check,
    weighted_operator_norm,
)
from .weights import (
    MatrixWeightField,
    b2_constant,
    build_step_weight,
    build_tilde_weight,
    constant_weight,
    corona_decompose,
    identity_weight,
    inverse_weight,
    reverse_holder_exponent,
    step_b2_check,
)

__all__ = [
    "AdjacentFamily",
    "Ball2Geometry",
    "DiscGeometry",
    "MatrixWeightField",
    "SparseEvaluator",
    "SweepConfig",
    "WeightFamilySpec",
    "assemble_projection",
    "b2_constant",
    "build_averaging_grid",
    "build_ball2_family",
    "build_direction_set",
    "build_disc_family",
    "build_family",
    "build_grid",
    "build_step_weight",
    "build_tilde_weight",
    "carleson_embedding_ratio",
    "carleson_packing_constant",
    "constant_weight",
    "corona_decompose",
    "default_config",
    "domination_constant",
    "generate_weight",
    "holomorphic_embedding_check",
    "identity_weight",
    "inverse_weight",
    "load_system",
    "make_ball2_sample",
    "make_geometry",
    "random_vector_polynomial",
    "reverse_holder_exponent",
    "run_sweep",
    "save_system",
    "step_b2_check",
    "verify_structure",
    "weighted_operator_norm",
]

__version__ = "0.1.0"
